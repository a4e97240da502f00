#pragma once

#include <cstdint>
#include <utility>

#include <torch/torch.h>

#include "tadm/codec.hpp"
#include "tadm/image.hpp"
#include "tadm/nn.hpp"

namespace tadm {

// Target-sized 3-channel feature [3, H/N, W/N].
class CompactLatent {
 public:
  CompactLatent(torch::Tensor data, int64_t factor);
  const torch::Tensor& data() const { return data_; }
  int64_t factor() const { return factor_; }

 private:
  torch::Tensor data_;
  int64_t factor_;
};

// Factors supported by the latent branch: the latent is H/8, so N/8 must be a power of two.
bool is_supported_factor(int64_t factor);
int64_t latent_stages(int64_t factor);

// Affine coupling on a 3-channel map: channel 0 conditions channels 1..2,
//   y_a = x_a,  y_b = x_b * exp(s) + b,  s = clamp_scale * tanh(raw_s),
// followed by the fixed channel reversal [2, 1, 0].
class AffineCouplingImpl : public torch::nn::Module {
 public:
  AffineCouplingImpl(int64_t hidden, double clamp_scale);
  // Returns (output, per-sample log-det [B]).
  std::pair<torch::Tensor, torch::Tensor> forward(const torch::Tensor& x);
  torch::Tensor inverse(const torch::Tensor& y);

 private:
  std::pair<torch::Tensor, torch::Tensor> scale_shift(const torch::Tensor& cond);
  double clamp_scale_;
  torch::nn::Sequential net_{nullptr};
};
TORCH_MODULE(AffineCoupling);

struct InvertibleConverterOptions {
  int64_t blocks = 8;
  int64_t hidden = 32;
  double clamp_scale = 1.0;
};

// Feature <-> pixel converter F built from affine couplings. Exactly invertible
// for any parameter values; the last layer of each coupling net starts at zero,
// so an untrained F with an even block count is the identity.
class InvertibleConverterImpl : public torch::nn::Module {
 public:
  explicit InvertibleConverterImpl(const InvertibleConverterOptions& options = {});

  torch::Tensor forward(const torch::Tensor& v);
  torch::Tensor inverse(const torch::Tensor& u);
  // Forward pass plus log|det dF/dv| per sample.
  std::pair<torch::Tensor, torch::Tensor> forward_with_logdet(const torch::Tensor& v);
  // Redraws every parameter from N(0, std^2) using `gen` (tests and property checks).
  void randomize(at::Generator& gen, double std);
  int64_t blocks() const { return static_cast<int64_t>(couplings_->size()); }

 private:
  torch::nn::ModuleList couplings_;
};
TORCH_MODULE(InvertibleConverter);

struct DfrmOptions {
  int64_t factor = 16;
  int64_t channels = 64;
  bool pixel_guidance = true;
  bool use_inn = true;
  InvertibleConverterOptions inn;
};

// G_e: latent branch with log2(N/8) stride-2 stages; the pixel-guidance branch
// concatenates bicubic(x) at every working resolution and mixes it in with a 1x1 conv.
class GEncoderImpl : public torch::nn::Module {
 public:
  GEncoderImpl(int64_t factor, int64_t channels, bool pixel_guidance);
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& z);

 private:
  torch::Tensor guide(const torch::Tensor& h, const torch::Tensor& x, size_t level);
  bool pixel_guidance_;
  torch::nn::Conv2d stem_{nullptr};
  torch::nn::ModuleList downs_;
  torch::nn::ModuleList blocks_;
  torch::nn::ModuleList mixes_;
  torch::nn::Conv2d head_{nullptr};
};
TORCH_MODULE(GEncoder);

// G_d: nearest-neighbour x2 upsampling + convolution, mirrored stage count.
class GDecoderImpl : public torch::nn::Module {
 public:
  GDecoderImpl(int64_t factor, int64_t channels);
  torch::Tensor forward(const torch::Tensor& zlr);

 private:
  torch::nn::Conv2d stem_{nullptr};
  ResBlock block_{nullptr};
  torch::nn::ModuleList ups_;
  torch::nn::ModuleList blocks_;
  torch::nn::Conv2d head_{nullptr};
};
TORCH_MODULE(GDecoder);

struct RescaleLossWeights {
  double rec = 1.0;
  double gui = 1.0;
};

struct RescaleLosses {
  torch::Tensor rec;
  torch::Tensor gui;
  torch::Tensor res;
  torch::Tensor chain2;  // G_d(F^-1(F(G_e(x,z)))), the latent seen by the enhancement stage
};

class DfrmImpl : public torch::nn::Module {
 public:
  explicit DfrmImpl(const DfrmOptions& options = {});

  const DfrmOptions& options() const { return options_; }
  int64_t factor() const { return options_.factor; }

  // Batched building blocks. x: [B,3,H,W] in [-1,1]; z: [B,4,H/8,W/8].
  torch::Tensor compact(const torch::Tensor& x, const torch::Tensor& z);  // G_e
  torch::Tensor to_pixels(const torch::Tensor& zlr);                       // F
  torch::Tensor from_pixels(const torch::Tensor& u);                       // F^-1
  torch::Tensor expand(const torch::Tensor& zlr);                          // G_d
  // LR pixels before quantization, and the latent recovered from dequantized LR pixels.
  torch::Tensor lr_pixels(const torch::Tensor& x, const torch::Tensor& z);
  torch::Tensor upscale_pixels(const torch::Tensor& y_signed);

  GEncoder& encoder() { return g_e_; }
  GDecoder& decoder() { return g_d_; }
  InvertibleConverter& inn() { return inn_; }

 private:
  DfrmOptions options_;
  GEncoder g_e_{nullptr};
  GDecoder g_d_{nullptr};
  InvertibleConverter inn_{nullptr};
};
TORCH_MODULE(Dfrm);

// Single-image operations.
std::pair<Image, CompactLatent> downscale(Dfrm& dfrm, const Image& x, const Latent& z);
Latent upscale(Dfrm& dfrm, const Image& y);

// Both transformation chains against the true latent z:
//   rec = |G_d(G_e(x,z)) - z|_1 + |G_d(F^-1(F(G_e(x,z)))) - z|_1  (per-element means)
//   gui = |F(G_e(x,z)) - bicubic(x)|_1
// With `quantize_chain` the second chain passes F's output through a
// straight-through quantizer before inverting.
RescaleLosses rescale_losses(Dfrm& dfrm, const torch::Tensor& x, const torch::Tensor& z,
                             const RescaleLossWeights& weights, bool quantize_chain = false);
torch::Tensor loss_rec(Dfrm& dfrm, const torch::Tensor& x, const torch::Tensor& z);
torch::Tensor loss_gui(Dfrm& dfrm, const torch::Tensor& x, const torch::Tensor& z);
torch::Tensor loss_res(Dfrm& dfrm, const torch::Tensor& x, const torch::Tensor& z, const RescaleLossWeights& weights);

// Bicubic reduction of a batch by `factor` (exact division).
torch::Tensor bicubic_downscale(const torch::Tensor& x, int64_t factor);

}  // namespace tadm
