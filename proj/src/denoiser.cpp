#include "tadm/denoiser.hpp"

#include <algorithm>
#include <random>
#include <stdexcept>

#include "tadm/corpus.hpp"
#include "tadm/rng.hpp"

namespace tadm {

namespace F = torch::nn::functional;

ToyUNetImpl::ToyUNetImpl(const ToyUNetOptions& options) : options_(options) {
  const auto c = options.channels;
  const auto r = options.lora_rank;
  const auto td = options.time_dim;
  time_mlp_ = register_module("time_mlp", torch::nn::Sequential(torch::nn::Linear(options.embed_dim, td),
                                                                torch::nn::SiLU(), torch::nn::Linear(td, td)));
  stem_ = register_module("stem", LoraConv2d(4, c, 3, 1, r));
  enc0_ = register_module("enc0", ResBlock(c, r, td));
  down_ = register_module("down", LoraConv2d(c, 2 * c, 3, 2, r));
  enc1_ = register_module("enc1", ResBlock(2 * c, r, td));
  mid_ = register_module("mid", ResBlock(2 * c, r, td));
  up_ = register_module("up", LoraConv2d(2 * c, c, 3, 1, r));
  fuse_ = register_module("fuse", LoraConv2d(2 * c, c, 3, 1, r));
  dec0_ = register_module("dec0", ResBlock(c, r, td));
  head_ = register_module("head", LoraConv2d(c, 4, 3, 1, r));
}

torch::Tensor ToyUNetImpl::predict_noise(const torch::Tensor& z, const torch::Tensor& t) {
  if (z.dim() != 4 || z.size(1) != 4) throw std::invalid_argument("ToyUNet: expected latents [B,4,h,w]");
  if (t.dim() != 1 || t.size(0) != z.size(0)) throw std::invalid_argument("ToyUNet: expected t of shape [B]");
  auto temb = F::silu(time_mlp_->forward(interpolated_time_embedding(t.to(z.dtype()), options_.embed_dim)));
  auto h0 = enc0_->forward(stem_->forward(z), temb);
  auto h1 = enc1_->forward(down_->forward(F::silu(h0)), temb);
  h1 = mid_->forward(h1, temb);
  auto u = F::interpolate(h1, F::InterpolateFuncOptions()
                                  .size(std::vector<int64_t>{h0.size(2), h0.size(3)})
                                  .mode(torch::kNearest));
  u = up_->forward(F::silu(u));
  auto h = fuse_->forward(torch::cat({u, h0}, 1));
  h = dec0_->forward(h, temb);
  return head_->forward(F::silu(h));
}

torch::Tensor ZeroDenoiser::predict_noise(const torch::Tensor& z, const torch::Tensor&) {
  return torch::zeros_like(z);
}

TorchScriptDenoiser::TorchScriptDenoiser(const std::filesystem::path& weights)
    : module_(torch::jit::load(weights.string())) {
  module_.eval();
}

torch::Tensor TorchScriptDenoiser::predict_noise(const torch::Tensor& z, const torch::Tensor& t) {
  return module_.forward({z, t}).toTensor();
}

void pretrain_denoiser(ToyUNet& unet, const torch::Tensor& latents, const NoiseSchedule& sched,
                       const DenoiserTrainOptions& options, const std::function<void(int64_t, double)>& on_step) {
  if (latents.dim() != 4 || latents.size(1) != 4) throw std::invalid_argument("pretrain_denoiser: bad latent batch");
  const auto crop = std::min({options.crop, latents.size(2), latents.size(3)});
  unet->train();
  set_requires_grad(*unet, true);
  for (auto& [name, p] : adapter_parameters(*unet, "")) p.set_requires_grad(false);
  Adam optimizer(base_parameters(*unet, ""), AdamOptions{options.lr});
  auto alpha_bars = sched.alpha_bars.to(latents.dtype());
  for (int64_t step = 0; step < options.steps; ++step) {
    std::mt19937_64 rng(derive_seed(options.seed, {0xD1FF, static_cast<uint64_t>(step)}));
    auto plan = plan_crops(latents.size(0), latents.size(2), latents.size(3), options.batch_size, crop, 1, rng);
    auto z = apply_crops(latents, plan, crop);
    auto gen = make_generator(derive_seed(options.seed, {0xD1FF, static_cast<uint64_t>(step), 1}));
    auto t = torch::randint(sched.T, {z.size(0)}, gen, torch::kInt64);
    auto eps = torch::randn(z.sizes(), gen, z.options());
    auto ab = alpha_bars.index_select(0, t).view({-1, 1, 1, 1});
    auto zt = ab.sqrt() * z + (1.0 - ab).sqrt() * eps;
    auto loss = (unet->predict_noise(zt, t.to(z.dtype())) - eps).square().mean();
    optimizer.zero_grad();
    loss.backward();
    optimizer.step();
    if (on_step) on_step(step, loss.item<double>());
  }
  unet->eval();
}

}  // namespace tadm
