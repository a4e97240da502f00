#include "tadm/tiling.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace tadm {

namespace {

torch::indexing::Slice span(int64_t start, int64_t length) {
  return torch::indexing::Slice(start, start + length);
}

}  // namespace

std::vector<int64_t> axis_offsets(int64_t length, int64_t patch_size, int64_t stride) {
  if (patch_size < 1 || stride < 1) {
    throw std::invalid_argument("axis_offsets: patch size and stride must be positive");
  }
  if (stride > patch_size) {
    throw std::invalid_argument("axis_offsets: stride must not exceed patch size");
  }
  if (length < 1) throw std::invalid_argument("axis_offsets: empty axis");
  std::vector<int64_t> offsets{0};
  if (length <= patch_size) return offsets;
  int64_t offset = 0;
  while (offset + patch_size < length) {
    offset = std::min(offset + stride, length - patch_size);
    offsets.push_back(offset);
  }
  return offsets;
}

PatchGrid make_patch_grid(int64_t height, int64_t width, int64_t patch_size, int64_t stride) {
  PatchGrid grid;
  grid.patch_size = patch_size;
  grid.stride = stride;
  grid.height = height;
  grid.width = width;
  const auto rows = axis_offsets(height, patch_size, stride);
  const auto cols = axis_offsets(width, patch_size, stride);
  grid.offsets.reserve(rows.size() * cols.size());
  for (auto r : rows) {
    for (auto c : cols) grid.offsets.push_back({r, c});
  }
  return grid;
}

std::pair<std::vector<torch::Tensor>, PatchGrid> to_patches(const torch::Tensor& t, int64_t patch_size,
                                                            int64_t stride) {
  if (t.dim() < 2) throw std::invalid_argument("to_patches: need at least 2 dims");
  auto grid = make_patch_grid(t.size(-2), t.size(-1), patch_size, stride);
  std::vector<torch::Tensor> patches;
  patches.reserve(grid.size());
  using torch::indexing::Ellipsis;
  for (const auto& off : grid.offsets) {
    patches.push_back(t.index({Ellipsis, span(off.row, grid.patch_height()), span(off.col, grid.patch_width())}));
  }
  return {std::move(patches), std::move(grid)};
}

torch::Tensor raised_cosine_window(int64_t h, int64_t w) {
  auto axis = [](int64_t n) {
    auto i = torch::arange(n, torch::kFloat64).add(0.5).mul(std::numbers::pi / static_cast<double>(n));
    return i.sin().square();
  };
  return torch::outer(axis(h), axis(w));
}

std::vector<torch::Tensor> blend_weights(const PatchGrid& grid) {
  const auto ph = grid.patch_height();
  const auto pw = grid.patch_width();
  auto window = raised_cosine_window(ph, pw);
  auto total = torch::zeros({grid.height, grid.width}, torch::kFloat64);
  for (const auto& off : grid.offsets) {
    total.index({span(off.row, ph), span(off.col, pw)}).add_(window);
  }
  std::vector<torch::Tensor> weights;
  weights.reserve(grid.size());
  for (const auto& off : grid.offsets) {
    weights.push_back(window / total.index({span(off.row, ph), span(off.col, pw)}));
  }
  return weights;
}

torch::Tensor blend_weight_sum(const PatchGrid& grid) {
  auto sum = torch::zeros({grid.height, grid.width}, torch::kFloat64);
  const auto weights = blend_weights(grid);
  for (size_t i = 0; i < grid.size(); ++i) {
    const auto& off = grid.offsets[i];
    sum.index({span(off.row, grid.patch_height()), span(off.col, grid.patch_width())}).add_(weights[i]);
  }
  return sum;
}

torch::Tensor merge_patches(const std::vector<torch::Tensor>& patches, const PatchGrid& grid) {
  if (patches.size() != grid.size() || patches.empty()) {
    throw std::invalid_argument("merge_patches: expected " + std::to_string(grid.size()) + " patches, got " +
                                std::to_string(patches.size()));
  }
  const auto ph = grid.patch_height();
  const auto pw = grid.patch_width();
  auto lead = patches.front().sizes().vec();
  for (const auto& p : patches) {
    if (p.dim() < 2 || p.size(-2) != ph || p.size(-1) != pw ||
        p.sizes().slice(0, p.dim() - 2) != patches.front().sizes().slice(0, p.dim() - 2)) {
      throw std::invalid_argument("merge_patches: patch shape does not match grid");
    }
  }
  lead[lead.size() - 2] = grid.height;
  lead[lead.size() - 1] = grid.width;
  auto out = torch::zeros(lead, patches.front().options());
  const auto weights = blend_weights(grid);
  using torch::indexing::Ellipsis;
  for (size_t i = 0; i < grid.size(); ++i) {
    const auto& off = grid.offsets[i];
    auto w = weights[i].to(patches[i].scalar_type());
    out.index({Ellipsis, span(off.row, ph), span(off.col, pw)}).add_(patches[i] * w);
  }
  return out;
}

}  // namespace tadm
