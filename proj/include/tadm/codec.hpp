#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <torch/script.h>
#include <torch/torch.h>

#include "tadm/image.hpp"
#include "tadm/nn.hpp"

namespace tadm {

inline constexpr int64_t kLatentChannels = 4;
inline constexpr int64_t kLatentReduction = 8;

// Feature-domain tensor [4, H/8, W/8].
class Latent {
 public:
  explicit Latent(torch::Tensor data);
  const torch::Tensor& data() const { return data_; }
  int64_t height() const { return data_.size(1); }
  int64_t width() const { return data_.size(2); }

 private:
  torch::Tensor data_;
};

enum class CodecKind { kToy, kExternal };

// Frozen autoencoder pair. Batched tensors: images [B,3,H,W] in [-1,1],
// latents [B,4,H/8,W/8]. `decode` is unclamped so losses keep their gradient.
class CodecBackend {
 public:
  virtual ~CodecBackend() = default;
  virtual CodecKind kind() const = 0;
  virtual torch::Tensor encode(const torch::Tensor& images) = 0;
  virtual torch::Tensor decode(const torch::Tensor& latents) = 0;
};

// Single-image wrappers enforcing the shape contract; `decode` clamps to [-1,1].
Latent encode(CodecBackend& codec, const Image& x);
Image decode(CodecBackend& codec, const Latent& z);

struct ToyCodecOptions {
  std::vector<int64_t> encoder_channels{24, 32, 48, 64};
  std::vector<int64_t> decoder_channels{64, 48, 32, 24};
  int64_t lora_rank = 4;
};

class ToyEncoderImpl : public torch::nn::Module {
 public:
  explicit ToyEncoderImpl(const std::vector<int64_t>& channels);
  // Returns [B, 8, h, w]: posterior mean (first 4) and log-variance (last 4).
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Conv2d stem_{nullptr};
  torch::nn::ModuleList downs_;
  torch::nn::ModuleList blocks_;
  torch::nn::Conv2d head_{nullptr};
};
TORCH_MODULE(ToyEncoder);

class ToyDecoderImpl : public torch::nn::Module {
 public:
  ToyDecoderImpl(const std::vector<int64_t>& channels, int64_t lora_rank);
  torch::Tensor forward(const torch::Tensor& z);

 private:
  LoraConv2d stem_{nullptr};
  torch::nn::ModuleList ups_;
  torch::nn::ModuleList blocks_;
  LoraConv2d head_{nullptr};
};
TORCH_MODULE(ToyDecoder);

// Desk-scale stand-in for a pretrained latent VAE: three stride-2 stages (8x),
// 4 latent channels, decoder convolutions carrying low-rank adapters.
class ToyCodecImpl : public torch::nn::Module, public CodecBackend {
 public:
  explicit ToyCodecImpl(const ToyCodecOptions& options = {});

  CodecKind kind() const override { return CodecKind::kToy; }
  torch::Tensor encode(const torch::Tensor& images) override;
  torch::Tensor decode(const torch::Tensor& latents) override;
  std::pair<torch::Tensor, torch::Tensor> encode_moments(const torch::Tensor& images);

  // Multiplier applied to the posterior mean so latents have roughly unit
  // variance; set from the training corpus by `calibrate_latent_scale`.
  double latent_scale() const { return latent_scale_.item<double>(); }
  void set_latent_scale(double scale);

  ToyEncoder& encoder() { return encoder_; }
  ToyDecoder& decoder() { return decoder_; }
  const ToyCodecOptions& options() const { return options_; }

 private:
  ToyCodecOptions options_;
  ToyEncoder encoder_{nullptr};
  ToyDecoder decoder_{nullptr};
  torch::Tensor latent_scale_;
};
TORCH_MODULE(ToyCodec);

// Mounts a TorchScript module exposing `encode(x) -> z` and `decode(z) -> x`.
// Latents are normalized as (encode(x) - shift) * scale and mapped back before decoding.
class TorchScriptCodec : public CodecBackend {
 public:
  TorchScriptCodec(const std::filesystem::path& weights, double scale, double shift);
  CodecKind kind() const override { return CodecKind::kExternal; }
  torch::Tensor encode(const torch::Tensor& images) override;
  torch::Tensor decode(const torch::Tensor& latents) override;

 private:
  torch::jit::Module module_;
  double scale_;
  double shift_;
};

struct CodecTrainOptions {
  int64_t steps = 1500;
  int64_t batch_size = 16;
  int64_t crop_size = 64;
  double lr = 2e-3;
  double kl_weight = 1e-4;
  uint64_t seed = 0;
};

// L1 reconstruction + small KL on random crops; the encoder samples from the
// posterior during training only. Finishes by calibrating the latent scale.
void train_toy_codec(ToyCodec& codec, const std::vector<Image>& corpus, const CodecTrainOptions& options,
                     const std::function<void(int64_t, double)>& on_step = {});

// Sets the latent scale to 1 / std of the unscaled posterior means over `corpus`.
void calibrate_latent_scale(ToyCodec& codec, const std::vector<Image>& corpus);

}  // namespace tadm
