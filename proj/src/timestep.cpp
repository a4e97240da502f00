#include "tadm/timestep.hpp"

#include <stdexcept>

namespace tadm {

namespace F = torch::nn::functional;

TimestepPredictorImpl::TimestepPredictorImpl(const TimestepPredictorOptions& options) : options_(options) {
  if (options.T < 2) throw std::invalid_argument("TimestepPredictor: T must be >= 2");
  convs_ = register_module("convs", torch::nn::ModuleList());
  int64_t in = 4;
  for (int i = 0; i < 4; ++i) {
    const auto out = i < 2 ? options.channels : 2 * options.channels;
    convs_->push_back(torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3).stride(2).padding(1)));
    in = out;
  }
  fc1_ = register_module("fc1", torch::nn::Linear(in, options.hidden));
  fc2_ = register_module("fc2", torch::nn::Linear(options.hidden, 1));
}

torch::Tensor TimestepPredictorImpl::forward(const torch::Tensor& zhat) {
  auto h = zhat;
  for (const auto& conv : *convs_) h = F::silu(conv->as<torch::nn::Conv2d>()->forward(h));
  h = h.mean({2, 3});
  auto logit = fc2_->forward(F::silu(fc1_->forward(h))).squeeze(1);
  // Non-finite logits would otherwise propagate into the time embedding.
  logit = torch::nan_to_num(logit, 0.0, 30.0, -30.0);
  return (torch::sigmoid(logit) * static_cast<double>(options_.T - 1)).clamp(0.0, static_cast<double>(options_.T - 1));
}

HybridSchedulerImpl::HybridSchedulerImpl(const NoiseSchedule& sched, const HybridSchedulerOptions& options)
    : sched_(sched), options_(options) {
  if (options.t0 < 0 || options.t0 >= sched.T) throw std::invalid_argument("HybridScheduler: t0 outside [0, T)");
  const auto c = options.channels;
  time_mlp_ = register_module("time_mlp",
                              torch::nn::Sequential(torch::nn::Linear(options.embed_dim, options.time_dim),
                                                    torch::nn::SiLU(),
                                                    torch::nn::Linear(options.time_dim, options.time_dim)));
  in_ = register_module("in", torch::nn::Conv2d(torch::nn::Conv2dOptions(8, c, 3).padding(1)));
  block_ = register_module("block", ResBlock(c, 0, options.time_dim));
  out_ = register_module("out", torch::nn::Conv2d(torch::nn::Conv2dOptions(c, 4, 3).padding(1)));
  torch::NoGradGuard no_grad;
  out_->weight.zero_();
  out_->bias.zero_();
}

torch::Tensor HybridSchedulerImpl::learned(const torch::Tensor& zhat, const torch::Tensor& eps,
                                           const torch::Tensor& t) {
  auto temb = F::silu(time_mlp_->forward(interpolated_time_embedding(t.to(zhat.dtype()), options_.embed_dim)));
  auto h = in_->forward(torch::cat({zhat, eps}, 1));
  h = block_->forward(h, temb);
  return out_->forward(F::silu(h));
}

torch::Tensor HybridSchedulerImpl::forward(const torch::Tensor& zhat, const torch::Tensor& eps,
                                           const torch::Tensor& t) {
  if (t.dim() != 1 || t.size(0) != zhat.size(0)) throw std::invalid_argument("HybridScheduler: t must be [B]");
  const auto lo = t.detach().min().item<double>();
  const auto hi = t.detach().max().item<double>();
  if (!(lo >= 0.0) || !(hi <= static_cast<double>(sched_.T - 1))) {
    throw std::invalid_argument("HybridScheduler: t outside [0, T-1]");
  }
  return denoise_fixed(zhat, eps, options_.t0, sched_) + learned(zhat, eps, t);
}

EnhanceResult enhance(const torch::Tensor& zhat, DenoiserBackend& denoiser, TimestepPredictor& tpm,
                      HybridScheduler& scheduler, std::optional<int64_t> fixed_timestep) {
  EnhanceResult r;
  if (fixed_timestep) {
    r.t = torch::full({zhat.size(0)}, static_cast<double>(*fixed_timestep), zhat.options());
    r.eps = denoiser.predict_noise(zhat, r.t);
    r.z0 = denoise_fixed(zhat, r.eps, *fixed_timestep, scheduler->schedule());
    return r;
  }
  r.t = tpm->forward(zhat);
  r.eps = denoiser.predict_noise(zhat, r.t);
  r.z0 = scheduler->forward(zhat, r.eps, r.t);
  return r;
}

}  // namespace tadm
