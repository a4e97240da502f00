#pragma once

#include <cstdint>

#include <torch/torch.h>

namespace tadm {

// Linear-beta DDPM schedule. Tables are float64 [T].
struct NoiseSchedule {
  int64_t T = 0;
  torch::Tensor betas;
  torch::Tensor alpha_bars;

  double alpha_bar(int64_t t) const;
};

NoiseSchedule make_schedule(int64_t T = 1000, double beta_min = 1e-4, double beta_max = 0.02);

// z_t = sqrt(abar_t) z + sqrt(1 - abar_t) eps
torch::Tensor add_noise(const torch::Tensor& z, const torch::Tensor& eps, int64_t t, const NoiseSchedule& sched);

// One-step estimate of the clean latent: (zhat - sqrt(1 - abar) eps) / sqrt(abar).
torch::Tensor denoise_fixed(const torch::Tensor& zhat, const torch::Tensor& eps, int64_t t,
                            const NoiseSchedule& sched);
torch::Tensor denoise_fixed(const torch::Tensor& zhat, const torch::Tensor& eps, double alpha_bar);

// Expected MSE between z_t and z under the forward process:
//   (1 - sqrt(abar_t))^2 mean(z^2) + (1 - abar_t)
double diffusion_mse(const torch::Tensor& z, int64_t t, const NoiseSchedule& sched);

// Smallest t with diffusion_mse(z, t) >= rescale_mse, or T - 1 if there is none.
int64_t align_timestep(double rescale_mse, const torch::Tensor& z, const NoiseSchedule& sched);

}  // namespace tadm
