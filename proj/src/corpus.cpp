#include "tadm/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "tadm/archive.hpp"
#include "tadm/image_io.hpp"
#include "tadm/rng.hpp"

namespace tadm {

namespace fs = std::filesystem;

namespace {

using torch::Tensor;

// Coverage of a shape from its signed distance, one pixel of anti-aliasing.
Tensor coverage(const Tensor& sdf) { return (0.5 - sdf).clamp(0.0, 1.0); }

Tensor blend(const Tensor& canvas, const Tensor& color, const Tensor& alpha) {
  return canvas * (1.0 - alpha) + color.view({3, 1, 1}) * alpha;
}

Image render_scene(int64_t h, int64_t w, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
  auto random_color = [&] {
    return torch::tensor({uniform(0.05, 0.95), uniform(0.05, 0.95), uniform(0.05, 0.95)}, torch::kFloat64);
  };

  auto ys = torch::arange(h, torch::kFloat64).add(0.5).view({h, 1}).expand({h, w});
  auto xs = torch::arange(w, torch::kFloat64).add(0.5).view({1, w}).expand({h, w});
  auto v = ys / static_cast<double>(h);
  auto u = xs / static_cast<double>(w);

  // Bilinear gradient between four corner colors.
  auto c00 = random_color().view({3, 1, 1});
  auto c01 = random_color().view({3, 1, 1});
  auto c10 = random_color().view({3, 1, 1});
  auto c11 = random_color().view({3, 1, 1});
  auto canvas = c00 * ((1 - u) * (1 - v)) + c01 * (u * (1 - v)) + c10 * ((1 - u) * v) + c11 * (u * v);

  const int complexity = static_cast<int>(rng() % 4);
  const double extent = static_cast<double>(std::min(h, w));
  const int shapes = 2 + 3 * complexity;
  for (int s = 0; s < shapes; ++s) {
    const double cy = uniform(0.0, static_cast<double>(h));
    const double cx = uniform(0.0, static_cast<double>(w));
    const double alpha = uniform(0.6, 1.0);
    const auto color = random_color();
    Tensor sdf;
    if (rng() % 2 == 0) {
      const double ry = uniform(0.05, 0.25) * extent;
      const double rx = uniform(0.05, 0.25) * extent;
      auto dy = (ys - cy) / ry;
      auto dx = (xs - cx) / rx;
      sdf = ((dy.square() + dx.square()).sqrt() - 1.0) * std::min(rx, ry);
    } else {
      const double hy = uniform(0.04, 0.2) * extent;
      const double hx = uniform(0.04, 0.2) * extent;
      const double theta = uniform(0.0, std::numbers::pi);
      auto py = (ys - cy) * std::cos(theta) - (xs - cx) * std::sin(theta);
      auto px = (ys - cy) * std::sin(theta) + (xs - cx) * std::cos(theta);
      auto qy = py.abs() - hy;
      auto qx = px.abs() - hx;
      auto outside = (qy.clamp_min(0).square() + qx.clamp_min(0).square()).sqrt();
      sdf = outside + torch::maximum(qy, qx).clamp_max(0);
    }
    canvas = blend(canvas, color, coverage(sdf) * alpha);
  }

  // Striped texture regions; more of them in busier scenes.
  for (int s = 0; s < complexity; ++s) {
    const double period = uniform(6.0, 16.0);
    const double theta = uniform(0.0, std::numbers::pi);
    const double amplitude = uniform(0.08, 0.18);
    const double y0 = uniform(0.0, 0.6) * static_cast<double>(h);
    const double x0 = uniform(0.0, 0.6) * static_cast<double>(w);
    const double y1 = y0 + uniform(0.2, 0.4) * static_cast<double>(h);
    const double x1 = x0 + uniform(0.2, 0.4) * static_cast<double>(w);
    auto phase = (xs * std::cos(theta) + ys * std::sin(theta)) * (2.0 * std::numbers::pi / period);
    auto inside = coverage(torch::maximum(torch::maximum(y0 - ys, ys - y1), torch::maximum(x0 - xs, xs - x1)));
    canvas = canvas + (torch::sin(phase) * amplitude * inside).unsqueeze(0);
  }

  auto levels = canvas.clamp(0.0, 1.0).mul(255.0).add(0.5).floor().to(torch::kFloat32);
  return Image(levels, ValueRange::kByte);
}

}  // namespace

std::vector<Image> synthesize_corpus(const CorpusOptions& options) {
  if (options.count < 1 || options.height < 1 || options.width < 1) {
    throw std::invalid_argument("synthesize_corpus: count and dimensions must be positive");
  }
  std::vector<Image> images;
  images.reserve(static_cast<size_t>(options.count));
  for (int64_t i = 0; i < options.count; ++i) {
    std::mt19937_64 rng(derive_seed(options.seed, {0xC0FFEEULL, static_cast<uint64_t>(i)}));
    images.push_back(render_scene(options.height, options.width, rng));
  }
  return images;
}

std::vector<Image> load_corpus_dir(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw std::invalid_argument("corpus directory not found: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".png") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw std::invalid_argument("no PNG files in " + dir.string());
  std::vector<Image> images;
  images.reserve(files.size());
  for (const auto& f : files) images.push_back(read_png(f).image);
  return images;
}

void save_corpus_dir(const fs::path& dir, const std::vector<Image>& images) {
  fs::create_directories(dir);
  for (size_t i = 0; i < images.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "img_%04zu.png", i);
    write_png(dir / name, images[i]);
  }
}

std::string corpus_hash(const std::vector<Image>& images) {
  std::map<std::string, torch::Tensor> tensors;
  for (size_t i = 0; i < images.size(); ++i) {
    char key[32];
    std::snprintf(key, sizeof(key), "%08zu", i);
    tensors.emplace(key, quantize_tensor(to_signed(images[i]).data()).to(torch::kUInt8));
  }
  return tensors_checksum(tensors);
}

torch::Tensor stack_signed(const std::vector<Image>& images) {
  if (images.empty()) throw std::invalid_argument("stack_signed: empty image list");
  std::vector<torch::Tensor> data;
  data.reserve(images.size());
  for (const auto& img : images) data.push_back(to_signed(img).data());
  return torch::stack(data);
}

CropPlan plan_crops(int64_t items, int64_t height, int64_t width, int64_t count, int64_t crop, int64_t align,
                    std::mt19937_64& rng) {
  if (crop > height || crop > width) throw std::invalid_argument("plan_crops: crop larger than image");
  if (align < 1 || crop % align != 0) throw std::invalid_argument("plan_crops: crop must be a multiple of align");
  CropPlan plan;
  const auto row_slots = (height - crop) / align + 1;
  const auto col_slots = (width - crop) / align + 1;
  for (int64_t i = 0; i < count; ++i) {
    plan.items.push_back(static_cast<int64_t>(rng() % static_cast<uint64_t>(items)));
    plan.rows.push_back(static_cast<int64_t>(rng() % static_cast<uint64_t>(row_slots)) * align);
    plan.cols.push_back(static_cast<int64_t>(rng() % static_cast<uint64_t>(col_slots)) * align);
  }
  return plan;
}

torch::Tensor apply_crops(const torch::Tensor& batch, const CropPlan& plan, int64_t crop, int64_t divisor) {
  using torch::indexing::Slice;
  const auto c = crop / divisor;
  std::vector<torch::Tensor> out;
  out.reserve(plan.items.size());
  for (size_t i = 0; i < plan.items.size(); ++i) {
    const auto r = plan.rows[i] / divisor;
    const auto q = plan.cols[i] / divisor;
    out.push_back(batch.index({plan.items[i], Slice(), Slice(r, r + c), Slice(q, q + c)}));
  }
  return torch::stack(out);
}

}  // namespace tadm
