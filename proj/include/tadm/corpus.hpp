#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "tadm/image.hpp"

namespace tadm {

struct CorpusOptions {
  int64_t count = 64;
  int64_t height = 256;
  int64_t width = 256;
  uint64_t seed = 0;
};

// Procedural 8-bit RGB scenes: smooth gradient backgrounds, anti-aliased
// shapes and striped texture regions. Scene complexity varies per image.
// Returned images are kByte and deterministic for a given seed.
std::vector<Image> synthesize_corpus(const CorpusOptions& options);

// All *.png files in `dir`, sorted by file name.
std::vector<Image> load_corpus_dir(const std::filesystem::path& dir);
void save_corpus_dir(const std::filesystem::path& dir, const std::vector<Image>& images);

std::string corpus_hash(const std::vector<Image>& images);

// Stacks signed [-1,1] images into [B,3,H,W].
torch::Tensor stack_signed(const std::vector<Image>& images);

// Random aligned crops from a batch tensor [N,C,H,W]: picks `count` items with
// replacement and a top-left corner that is a multiple of `align`.
struct CropPlan {
  std::vector<int64_t> items;
  std::vector<int64_t> rows;
  std::vector<int64_t> cols;
};
CropPlan plan_crops(int64_t items, int64_t height, int64_t width, int64_t count, int64_t crop, int64_t align,
                    std::mt19937_64& rng);
// Applies a plan to a tensor whose spatial size is the planned size divided by `divisor`.
torch::Tensor apply_crops(const torch::Tensor& batch, const CropPlan& plan, int64_t crop, int64_t divisor = 1);

}  // namespace tadm
