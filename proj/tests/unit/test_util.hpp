#pragma once

#include <filesystem>
#include <string>

#include "tadm/config.hpp"

namespace tadm {

// Small enough for a whole training pipeline to run in seconds.
inline RunConfig tiny_config() {
  RunConfig c;
  c.corpus_count = 4;
  c.corpus_size = 64;
  c.validation_count = 2;
  c.steps_codec = 5;
  c.steps_denoiser = 5;
  c.steps_stage1 = 10;
  c.steps_stage2 = 10;
  c.steps_stage3 = 10;
  c.checkpoint_every = 4;
  c.batch_codec = 2;
  c.batch_denoiser = 2;
  c.batch_stage = 2;
  c.crop_codec = 32;
  c.crop_denoiser = 4;
  c.crop_stage = 32;
  c.dfrm_channels = 16;
  c.inn_blocks = 4;
  c.inn_hidden = 8;
  c.unet_channels = 16;
  c.tpm_channels = 8;
  c.scheduler_channels = 8;
  c.bench_images = 2;
  return c;
}

// Fresh, empty scratch directory under the system temp dir.
inline std::filesystem::path test_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "tadm_tests" / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace tadm
