#pragma once

#include <cstdint>
#include <utility>
#include <ostream>
#include <vector>

#include <torch/torch.h>

namespace tadm {

struct PatchOffset {
  int64_t row = 0;
  int64_t col = 0;
  bool operator==(const PatchOffset&) const = default;
};

inline std::ostream& operator<<(std::ostream& os, const PatchOffset& o) { return os << "(" << o.row << "," << o.col << ")"; }

// Layout of overlapping square patches over a [.., H, W] tensor. Offsets advance
// by `stride`; the last offset per axis is clamped so the patch ends exactly at
// the boundary. An axis shorter than `patch_size` is covered by one patch
// spanning the whole axis.
struct PatchGrid {
  int64_t patch_size = 0;
  int64_t stride = 0;
  int64_t height = 0;
  int64_t width = 0;
  std::vector<PatchOffset> offsets;  // row-major

  int64_t patch_height() const { return std::min(patch_size, height); }
  int64_t patch_width() const { return std::min(patch_size, width); }
  size_t size() const { return offsets.size(); }
};

std::vector<int64_t> axis_offsets(int64_t length, int64_t patch_size, int64_t stride);

PatchGrid make_patch_grid(int64_t height, int64_t width, int64_t patch_size, int64_t stride);

// Splits the last two dims of `t` into patches; leading dims are kept.
std::pair<std::vector<torch::Tensor>, PatchGrid> to_patches(const torch::Tensor& t, int64_t patch_size,
                                                            int64_t stride);

// Raised-cosine window sin^2(pi (i + 0.5) / n) as an outer product, float64 [h, w].
// Strictly positive, so every covered cell receives weight.
torch::Tensor raised_cosine_window(int64_t h, int64_t w);

// Per-patch blend weights, normalized so they sum to 1 at every cell (float64 [h, w] each).
std::vector<torch::Tensor> blend_weights(const PatchGrid& grid);

// Accumulated normalized weight per cell, float64 [H, W]. Equals 1 everywhere.
torch::Tensor blend_weight_sum(const PatchGrid& grid);

// Blends patches back into a full tensor using `blend_weights`.
torch::Tensor merge_patches(const std::vector<torch::Tensor>& patches, const PatchGrid& grid);

}  // namespace tadm
