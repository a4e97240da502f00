#pragma once

#include <optional>

#include <torch/torch.h>

#include "tadm/denoiser.hpp"
#include "tadm/diffusion.hpp"

namespace tadm {

struct TimestepPredictorOptions {
  int64_t channels = 32;
  int64_t hidden = 64;
  int64_t T = 1000;
};

// 4 stride-2 convolutions -> global average pool -> 2-layer head -> (T-1) sigmoid.
class TimestepPredictorImpl : public torch::nn::Module {
 public:
  explicit TimestepPredictorImpl(const TimestepPredictorOptions& options = {});
  // [B,4,h,w] -> float [B] in [0, T-1]
  torch::Tensor forward(const torch::Tensor& zhat);
  int64_t T() const { return options_.T; }

 private:
  TimestepPredictorOptions options_;
  torch::nn::ModuleList convs_;
  torch::nn::Linear fc1_{nullptr};
  torch::nn::Linear fc2_{nullptr};
};
TORCH_MODULE(TimestepPredictor);

struct HybridSchedulerOptions {
  int64_t t0 = 20;
  int64_t channels = 32;
  int64_t embed_dim = 64;
  int64_t time_dim = 64;
};

// S_fixed(zhat, eps, t0) + S_learned(zhat, eps, t). The learned term sees
// concat(zhat, eps) and a time embedding of the continuous t, and ends in a
// zero-initialized convolution so it contributes nothing until trained.
class HybridSchedulerImpl : public torch::nn::Module {
 public:
  HybridSchedulerImpl(const NoiseSchedule& sched, const HybridSchedulerOptions& options = {});

  torch::Tensor forward(const torch::Tensor& zhat, const torch::Tensor& eps, const torch::Tensor& t);
  torch::Tensor learned(const torch::Tensor& zhat, const torch::Tensor& eps, const torch::Tensor& t);
  int64_t t0() const { return options_.t0; }
  const NoiseSchedule& schedule() const { return sched_; }

 private:
  NoiseSchedule sched_;
  HybridSchedulerOptions options_;
  torch::nn::Sequential time_mlp_{nullptr};
  torch::nn::Conv2d in_{nullptr};
  ResBlock block_{nullptr};
  torch::nn::Conv2d out_{nullptr};
};
TORCH_MODULE(HybridScheduler);

struct EnhanceResult {
  torch::Tensor z0;   // [B,4,h,w]
  torch::Tensor t;    // [B]
  torch::Tensor eps;  // [B,4,h,w]
};

// t = TPM(zhat); eps = eps_theta(zhat, t); z0 = scheduler(zhat, eps, t).
// With `fixed_timestep` set, TPM and the learned scheduler are bypassed:
// z0 = denoise_fixed(zhat, eps_theta(zhat, t), t).
EnhanceResult enhance(const torch::Tensor& zhat, DenoiserBackend& denoiser, TimestepPredictor& tpm,
                      HybridScheduler& scheduler, std::optional<int64_t> fixed_timestep = std::nullopt);

}  // namespace tadm
