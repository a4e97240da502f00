#include "tadm/diffusion.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace tadm {

namespace {

void check_timestep(int64_t t, const NoiseSchedule& sched) {
  if (t < 0 || t >= sched.T) {
    throw std::invalid_argument("timestep " + std::to_string(t) + " outside [0, " + std::to_string(sched.T) + ")");
  }
}

}  // namespace

double NoiseSchedule::alpha_bar(int64_t t) const {
  check_timestep(t, *this);
  return alpha_bars[t].item<double>();
}

NoiseSchedule make_schedule(int64_t T, double beta_min, double beta_max) {
  if (T < 1) throw std::invalid_argument("make_schedule: T must be >= 1");
  if (!(beta_min > 0.0) || !(beta_max < 1.0) || beta_min > beta_max) {
    throw std::invalid_argument("make_schedule: need 0 < beta_min <= beta_max < 1");
  }
  NoiseSchedule s;
  s.T = T;
  s.betas = T == 1 ? torch::full({1}, beta_min, torch::kFloat64) : torch::linspace(beta_min, beta_max, T, torch::kFloat64);
  s.alpha_bars = torch::cumprod(1.0 - s.betas, 0);
  return s;
}

torch::Tensor add_noise(const torch::Tensor& z, const torch::Tensor& eps, int64_t t, const NoiseSchedule& sched) {
  const double ab = sched.alpha_bar(t);
  return z * std::sqrt(ab) + eps * std::sqrt(1.0 - ab);
}

torch::Tensor denoise_fixed(const torch::Tensor& zhat, const torch::Tensor& eps, int64_t t,
                            const NoiseSchedule& sched) {
  return denoise_fixed(zhat, eps, sched.alpha_bar(t));
}

torch::Tensor denoise_fixed(const torch::Tensor& zhat, const torch::Tensor& eps, double alpha_bar) {
  if (!(alpha_bar > 0.0) || alpha_bar > 1.0) throw std::invalid_argument("denoise_fixed: alpha_bar must be in (0, 1]");
  return (zhat - eps * std::sqrt(1.0 - alpha_bar)) / std::sqrt(alpha_bar);
}

double diffusion_mse(const torch::Tensor& z, int64_t t, const NoiseSchedule& sched) {
  const double ab = sched.alpha_bar(t);
  const double ms = z.to(torch::kFloat64).square().mean().item<double>();
  const double shrink = 1.0 - std::sqrt(ab);
  return shrink * shrink * ms + (1.0 - ab);
}

int64_t align_timestep(double rescale_mse, const torch::Tensor& z, const NoiseSchedule& sched) {
  if (!(rescale_mse >= 0.0)) throw std::invalid_argument("align_timestep: rescale_mse must be non-negative");
  const double ms = z.to(torch::kFloat64).square().mean().item<double>();
  auto ab = sched.alpha_bars;
  auto curve = (1.0 - ab.sqrt()).square() * ms + (1.0 - ab);
  // The curve is non-decreasing in t, so the first hit is the answer.
  auto hits = (curve >= rescale_mse).nonzero();
  return hits.numel() == 0 ? sched.T - 1 : hits[0][0].item<int64_t>();
}

}  // namespace tadm
