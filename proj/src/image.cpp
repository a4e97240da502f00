#include "tadm/image.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace tadm {

namespace {

int64_t reflect_index(int64_t j, int64_t n) {
  while (j < 0 || j >= n) {
    if (j < 0) j = -j - 1;
    if (j >= n) j = 2 * n - j - 1;
  }
  return j;
}

void check_range(const torch::Tensor& data, ValueRange range) {
  const auto lo = data.min().item<double>();
  const auto hi = data.max().item<double>();
  if (!std::isfinite(lo) || !std::isfinite(hi)) {
    throw std::invalid_argument("Image: non-finite values");
  }
  const double min_allowed = range == ValueRange::kSigned ? -1.0 : 0.0;
  const double max_allowed = range == ValueRange::kSigned ? 1.0 : 255.0;
  if (lo < min_allowed || hi > max_allowed) {
    throw std::invalid_argument("Image: values [" + std::to_string(lo) + ", " + std::to_string(hi) +
                                "] outside declared range " + to_string(range));
  }
}

}  // namespace

const char* to_string(ValueRange range) {
  return range == ValueRange::kSigned ? "signed[-1,1]" : "byte[0,255]";
}

Image::Image(torch::Tensor data, ValueRange range) : data_(std::move(data)), range_(range) {
  if (data_.dim() != 3 || data_.size(0) != 3) {
    throw std::invalid_argument("Image: expected tensor [3, H, W], got " +
                                std::string(c10::str(data_.sizes())));
  }
  if (data_.size(1) < 1 || data_.size(2) < 1) {
    throw std::invalid_argument("Image: height and width must be >= 1");
  }
  data_ = data_.to(torch::kFloat32).contiguous();
  check_range(data_, range_);
}

double cubic_kernel(double x) {
  constexpr double a = -0.5;
  const double ax = std::abs(x);
  if (ax <= 1.0) return ((a + 2.0) * ax - (a + 3.0)) * ax * ax + 1.0;
  if (ax < 2.0) return ((a * ax - 5.0 * a) * ax + 8.0 * a) * ax - 4.0 * a;
  return 0.0;
}

torch::Tensor cubic_resample_matrix(int64_t in_size, int64_t out_size, double scale) {
  if (in_size < 1 || out_size < 1 || !(scale > 0.0)) {
    throw std::invalid_argument("cubic_resample_matrix: sizes must be >= 1 and scale > 0");
  }
  auto weights = torch::zeros({out_size, in_size}, torch::kFloat64);
  auto acc = weights.accessor<double, 2>();
  const double kernel_scale = std::min(scale, 1.0);
  const double support = 2.0 / kernel_scale;
  for (int64_t i = 0; i < out_size; ++i) {
    const double center = (static_cast<double>(i) + 0.5) / scale - 0.5;
    const auto first = static_cast<int64_t>(std::floor(center - support));
    const auto last = static_cast<int64_t>(std::ceil(center + support));
    double total = 0.0;
    for (int64_t j = first; j <= last; ++j) {
      const double w = kernel_scale * cubic_kernel(kernel_scale * (center - static_cast<double>(j)));
      if (w == 0.0) continue;
      acc[i][reflect_index(j, in_size)] += w;
      total += w;
    }
    for (int64_t j = 0; j < in_size; ++j) acc[i][j] /= total;
  }
  return weights;
}

torch::Tensor bicubic_resize_tensor(const torch::Tensor& t, int64_t out_h, int64_t out_w) {
  if (t.dim() < 2) throw std::invalid_argument("bicubic_resize_tensor: need at least 2 dims");
  if (out_h < 1 || out_w < 1) throw std::invalid_argument("bicubic_resize_tensor: zero-sized output");
  const int64_t in_h = t.size(-2);
  const int64_t in_w = t.size(-1);
  if (in_h == out_h && in_w == out_w) return t.clone();
  const double scale_h = static_cast<double>(out_h) / static_cast<double>(in_h);
  const double scale_w = static_cast<double>(out_w) / static_cast<double>(in_w);
  auto rows = cubic_resample_matrix(in_h, out_h, scale_h).to(t.device());
  auto cols = cubic_resample_matrix(in_w, out_w, scale_w).to(t.device());
  auto out = torch::matmul(torch::matmul(rows, t.to(torch::kFloat64)), cols.transpose(0, 1));
  return out.to(t.scalar_type());
}

Image bicubic_resize(const Image& img, Rational factor) {
  if (factor.num <= 0 || factor.den <= 0) {
    throw std::invalid_argument("bicubic_resize: factor must be positive");
  }
  const int64_t out_h = factor.scale(img.height());
  const int64_t out_w = factor.scale(img.width());
  if (out_h < 1 || out_w < 1) throw std::invalid_argument("bicubic_resize: zero-sized output");
  if (out_h == img.height() && out_w == img.width() && factor.num == factor.den) {
    return img;
  }
  // Kernel scale follows the requested factor, not the rounded size ratio.
  const double scale = factor.value();
  auto rows = cubic_resample_matrix(img.height(), out_h, scale);
  auto cols = cubic_resample_matrix(img.width(), out_w, scale);
  auto out = torch::matmul(torch::matmul(rows, img.data().to(torch::kFloat64)), cols.transpose(0, 1));
  if (img.range() == ValueRange::kSigned) {
    out = out.clamp(-1.0, 1.0);
  } else {
    out = out.clamp(0.0, 255.0).add(0.5).floor();
  }
  return Image(out.to(torch::kFloat32), img.range());
}

torch::Tensor quantize_tensor(const torch::Tensor& t) {
  // Inputs are non-negative after the affine map, so floor(v + 0.5) rounds half away from zero.
  return t.clamp(-1.0, 1.0).add(1.0).mul(127.5).add(0.5).floor();
}

torch::Tensor dequantize_tensor(const torch::Tensor& q) { return q.div(127.5).sub(1.0); }

torch::Tensor straight_through_quantize(const torch::Tensor& t) {
  auto rounded = dequantize_tensor(quantize_tensor(t.detach()));
  return t + (rounded - t.detach());
}

Image quantize_to_u8(const Image& img) {
  if (img.range() != ValueRange::kSigned) {
    throw std::invalid_argument("quantize_to_u8: expected a signed [-1,1] image");
  }
  return Image(quantize_tensor(img.data()), ValueRange::kByte);
}

Image dequantize(const Image& img) {
  if (img.range() != ValueRange::kByte) {
    throw std::invalid_argument("dequantize: expected a byte [0,255] image");
  }
  return Image(dequantize_tensor(img.data()).clamp(-1.0, 1.0), ValueRange::kSigned);
}

Image to_signed(const Image& img) {
  return img.range() == ValueRange::kSigned ? img : dequantize(img);
}

}  // namespace tadm
