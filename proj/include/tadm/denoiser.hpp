#pragma once

#include <filesystem>
#include <functional>
#include <string>

#include <torch/script.h>
#include <torch/torch.h>

#include "tadm/diffusion.hpp"
#include "tadm/nn.hpp"

namespace tadm {

enum class DenoiserKind { kToy, kZero, kExternal };

// Noise predictor eps_theta(z, t). z: [B,4,h,w]; t: float [B], continuous in [0, T-1].
class DenoiserBackend {
 public:
  virtual ~DenoiserBackend() = default;
  virtual DenoiserKind kind() const = 0;
  virtual torch::Tensor predict_noise(const torch::Tensor& z, const torch::Tensor& t) = 0;
};

struct ToyUNetOptions {
  int64_t channels = 48;
  int64_t time_dim = 128;
  int64_t embed_dim = 64;
  int64_t lora_rank = 4;
};

// Two-level residual U-Net with an interpolated sinusoidal time embedding.
// Every convolution carries a low-rank delta that starts inactive.
class ToyUNetImpl : public torch::nn::Module, public DenoiserBackend {
 public:
  explicit ToyUNetImpl(const ToyUNetOptions& options = {});

  DenoiserKind kind() const override { return DenoiserKind::kToy; }
  torch::Tensor predict_noise(const torch::Tensor& z, const torch::Tensor& t) override;
  const ToyUNetOptions& options() const { return options_; }

 private:
  ToyUNetOptions options_;
  torch::nn::Sequential time_mlp_{nullptr};
  LoraConv2d stem_{nullptr};
  ResBlock enc0_{nullptr};
  LoraConv2d down_{nullptr};
  ResBlock enc1_{nullptr};
  ResBlock mid_{nullptr};
  LoraConv2d up_{nullptr};
  LoraConv2d fuse_{nullptr};
  ResBlock dec0_{nullptr};
  LoraConv2d head_{nullptr};
};
TORCH_MODULE(ToyUNet);

// eps_theta == 0.
class ZeroDenoiser : public DenoiserBackend {
 public:
  DenoiserKind kind() const override { return DenoiserKind::kZero; }
  torch::Tensor predict_noise(const torch::Tensor& z, const torch::Tensor& t) override;
};

// Mounts a TorchScript module whose forward(z, t) returns eps.
class TorchScriptDenoiser : public DenoiserBackend {
 public:
  explicit TorchScriptDenoiser(const std::filesystem::path& weights);
  DenoiserKind kind() const override { return DenoiserKind::kExternal; }
  torch::Tensor predict_noise(const torch::Tensor& z, const torch::Tensor& t) override;

 private:
  torch::jit::Module module_;
};

struct DenoiserTrainOptions {
  int64_t steps = 2000;
  int64_t batch_size = 16;
  int64_t crop = 16;  // latent cells
  double lr = 1e-3;
  uint64_t seed = 0;
};

// Standard eps-prediction objective on latents [N,4,h,w], uniform integer t.
// Trains the base weights only; adapter deltas stay at zero.
void pretrain_denoiser(ToyUNet& unet, const torch::Tensor& latents, const NoiseSchedule& sched,
                       const DenoiserTrainOptions& options,
                       const std::function<void(int64_t, double)>& on_step = {});

}  // namespace tadm
