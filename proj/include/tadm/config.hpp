#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace tadm {

// Raised for invalid configuration, schema violations or model/metadata mismatch.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ConfigKey {
  std::string key;  // dotted path
  nlohmann::json default_value;
  std::string doc;
};

// Every accepted key with its default, in documentation order.
const std::vector<ConfigKey>& config_keys();

struct RunConfig {
  int64_t factor = 16;
  int64_t patch_size = 96;
  int64_t stride = 64;
  uint64_t seed = 0;

  int64_t T = 1000;
  double beta_min = 1e-4;
  double beta_max = 0.02;
  int64_t t0 = 20;
  int64_t fixed_timestep = -1;  // >= 0 bypasses TPM and the learned scheduler

  double lambda_rec = 1.0;
  double lambda_gui = 1.0;
  double lambda_pec = 1.0;

  double lr_codec = 2e-3;
  double lr_denoiser = 1e-3;
  double lr_stage1 = 3e-4;
  double lr_stage2 = 5e-4;

  int64_t steps_codec = 1500;
  int64_t steps_denoiser = 2000;
  int64_t steps_stage1 = 2000;
  int64_t steps_stage2 = 1000;
  int64_t steps_stage3 = 300;
  int64_t checkpoint_every = 250;

  int64_t batch_codec = 16;
  int64_t batch_denoiser = 32;
  int64_t batch_stage = 8;
  int64_t crop_codec = 64;
  int64_t crop_denoiser = 16;
  int64_t crop_stage = 128;

  int64_t dfrm_channels = 64;
  int64_t inn_blocks = 8;
  int64_t inn_hidden = 32;
  double inn_clamp = 1.0;
  bool pixel_guidance = true;
  bool use_inn = true;
  int64_t lora_rank = 4;
  int64_t unet_channels = 48;
  int64_t tpm_channels = 32;
  int64_t scheduler_channels = 32;

  int64_t corpus_count = 64;
  int64_t corpus_size = 256;
  uint64_t corpus_seed = 0;
  std::string corpus_dir;
  int64_t validation_count = 8;

  std::string codec_backend = "toy";
  std::string codec_weights;
  double codec_scale = 1.0;
  double codec_shift = 0.0;
  std::string denoiser_backend = "toy";
  std::string denoiser_weights;

  std::vector<int64_t> ablation_patch_sizes{16, 24, 32};
  std::vector<int64_t> ablation_fixed_timesteps{1, 999};
  std::vector<int64_t> jpeg_qualities{10, 25, 40, 60, 80, 95};
  int64_t bench_images = 10;

  double stage3_lr() const { return lr_stage2 * 0.1; }

  nlohmann::json to_json() const;
  // Strict: unknown keys and wrong value types raise ConfigError.
  static RunConfig from_json(const nlohmann::json& j);
  // Checks cross-field invariants (p >= s >= 1, N in {8,16,32}, finite weights, ...).
  void validate() const;
  std::string hash() const;
};

RunConfig load_config(const std::filesystem::path& path);
// `assignment` is "dotted.key=value"; the value is parsed as JSON, falling back to a string.
void apply_override(nlohmann::json& tree, const std::string& assignment);
nlohmann::json default_config_tree();
// One line per key: "key = default  doc".
std::string describe_config_keys();

}  // namespace tadm
