#pragma once

#include <cstdint>
#include <torch/torch.h>

namespace tadm {

// Declared value interval of an image tensor.
//   kSigned: normalized [-1, 1], used for model input/output.
//   kByte:   integer levels in [0, 255], used for encoded LR files.
enum class ValueRange { kSigned, kByte };

const char* to_string(ValueRange range);

// A single RGB image stored as a float32 tensor [3, H, W].
class Image {
 public:
  Image(torch::Tensor data, ValueRange range);

  const torch::Tensor& data() const { return data_; }
  ValueRange range() const { return range_; }
  int64_t height() const { return data_.size(1); }
  int64_t width() const { return data_.size(2); }

  // Adds a leading batch dimension: [1, 3, H, W].
  torch::Tensor batched() const { return data_.unsqueeze(0); }

 private:
  torch::Tensor data_;
  ValueRange range_;
};

// Positive rational resampling factor, e.g. {1, 16} for 16x downscaling.
struct Rational {
  int64_t num = 1;
  int64_t den = 1;

  double value() const { return static_cast<double>(num) / static_cast<double>(den); }
  int64_t scale(int64_t extent) const { return extent * num / den; }
};

// Cubic convolution kernel with a = -0.5 (Catmull-Rom / MATLAB imresize).
double cubic_kernel(double x);

// Resampling matrix [out, in] (float64) for one axis. Downscaling widens the
// kernel by 1/scale; borders use half-sample symmetric reflection. Rows sum to 1.
torch::Tensor cubic_resample_matrix(int64_t in_size, int64_t out_size, double scale);

// Separable bicubic resize of the last two dims of `t` (any leading dims).
// The computation runs in float64 and the result keeps the input dtype.
torch::Tensor bicubic_resize_tensor(const torch::Tensor& t, int64_t out_h, int64_t out_w);

// Bicubic resize by `factor`; output is floor(H*factor) x floor(W*factor),
// clamped to the input range (and rounded for kByte images).
Image bicubic_resize(const Image& img, Rational factor);

// [-1,1] -> {0..255}: clamp, map (v+1)/2*255, round half away from zero.
torch::Tensor quantize_tensor(const torch::Tensor& t);
// {0..255} -> [-1,1].
torch::Tensor dequantize_tensor(const torch::Tensor& q);
// quantize -> dequantize in the forward pass, identity in the backward pass.
torch::Tensor straight_through_quantize(const torch::Tensor& t);

Image quantize_to_u8(const Image& img);
Image dequantize(const Image& img);

// Converts either range to [-1, 1] (kByte is dequantized, kSigned returned as is).
Image to_signed(const Image& img);

}  // namespace tadm
