#include "tadm/dfrm.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace tadm {

namespace F = torch::nn::functional;
using torch::indexing::Slice;

CompactLatent::CompactLatent(torch::Tensor data, int64_t factor) : data_(std::move(data)), factor_(factor) {
  if (data_.dim() != 3 || data_.size(0) != 3) throw std::invalid_argument("CompactLatent: expected tensor [3, h, w]");
  if (!is_supported_factor(factor_)) throw std::invalid_argument("CompactLatent: unsupported factor");
}

bool is_supported_factor(int64_t factor) {
  return factor >= 8 && factor % 8 == 0 && ((factor / 8) & (factor / 8 - 1)) == 0;
}

int64_t latent_stages(int64_t factor) {
  if (!is_supported_factor(factor)) {
    throw std::invalid_argument("factor " + std::to_string(factor) + " is not 8 times a power of two");
  }
  int64_t k = 0;
  for (auto r = factor / 8; r > 1; r /= 2) ++k;
  return k;
}

AffineCouplingImpl::AffineCouplingImpl(int64_t hidden, double clamp_scale) : clamp_scale_(clamp_scale) {
  auto last = torch::nn::Conv2d(torch::nn::Conv2dOptions(hidden, 4, 3).padding(1));
  net_ = register_module("net", torch::nn::Sequential(torch::nn::Conv2d(torch::nn::Conv2dOptions(1, hidden, 3).padding(1)),
                                                      torch::nn::SiLU(),
                                                      torch::nn::Conv2d(torch::nn::Conv2dOptions(hidden, hidden, 3).padding(1)),
                                                      torch::nn::SiLU(), last));
  torch::NoGradGuard no_grad;
  last->weight.zero_();
  last->bias.zero_();
}

std::pair<torch::Tensor, torch::Tensor> AffineCouplingImpl::scale_shift(const torch::Tensor& cond) {
  auto raw = net_->forward(cond);
  auto s = torch::tanh(raw.index({Slice(), Slice(0, 2)})) * clamp_scale_;
  return {s, raw.index({Slice(), Slice(2, 4)})};
}

std::pair<torch::Tensor, torch::Tensor> AffineCouplingImpl::forward(const torch::Tensor& x) {
  auto xa = x.index({Slice(), Slice(0, 1)});
  auto xb = x.index({Slice(), Slice(1, 3)});
  auto [s, b] = scale_shift(xa);
  auto yb = xb * torch::exp(s) + b;
  return {torch::cat({xa, yb}, 1).flip(1), s.sum({1, 2, 3})};
}

torch::Tensor AffineCouplingImpl::inverse(const torch::Tensor& y) {
  auto u = y.flip(1);
  auto xa = u.index({Slice(), Slice(0, 1)});
  auto yb = u.index({Slice(), Slice(1, 3)});
  auto [s, b] = scale_shift(xa);
  return torch::cat({xa, (yb - b) * torch::exp(-s)}, 1);
}

InvertibleConverterImpl::InvertibleConverterImpl(const InvertibleConverterOptions& options) {
  if (options.blocks < 1) throw std::invalid_argument("InvertibleConverter: need at least one block");
  couplings_ = register_module("couplings", torch::nn::ModuleList());
  for (int64_t k = 0; k < options.blocks; ++k) couplings_->push_back(AffineCoupling(options.hidden, options.clamp_scale));
}

torch::Tensor InvertibleConverterImpl::forward(const torch::Tensor& v) { return forward_with_logdet(v).first; }

std::pair<torch::Tensor, torch::Tensor> InvertibleConverterImpl::forward_with_logdet(const torch::Tensor& v) {
  if (v.dim() != 4 || v.size(1) != 3) throw std::invalid_argument("InvertibleConverter: expected [B,3,h,w]");
  auto h = v;
  auto logdet = torch::zeros({v.size(0)}, v.options());
  for (const auto& m : *couplings_) {
    auto [y, ld] = m->as<AffineCoupling>()->forward(h);
    h = y;
    logdet = logdet + ld;
  }
  return {h, logdet};
}

torch::Tensor InvertibleConverterImpl::inverse(const torch::Tensor& u) {
  if (u.dim() != 4 || u.size(1) != 3) throw std::invalid_argument("InvertibleConverter: expected [B,3,h,w]");
  auto h = u;
  for (auto k = couplings_->size(); k-- > 0;) h = couplings_[k]->as<AffineCoupling>()->inverse(h);
  return h;
}

void InvertibleConverterImpl::randomize(at::Generator& gen, double std) {
  torch::NoGradGuard no_grad;
  for (auto& p : parameters()) p.normal_(0.0, std, gen);
}

GEncoderImpl::GEncoderImpl(int64_t factor, int64_t channels, bool pixel_guidance) : pixel_guidance_(pixel_guidance) {
  const auto stages = latent_stages(factor);
  stem_ = register_module("stem", torch::nn::Conv2d(torch::nn::Conv2dOptions(kLatentChannels, channels, 3).padding(1)));
  downs_ = register_module("downs", torch::nn::ModuleList());
  blocks_ = register_module("blocks", torch::nn::ModuleList());
  mixes_ = register_module("mixes", torch::nn::ModuleList());
  for (int64_t i = 0; i < stages; ++i) {
    downs_->push_back(torch::nn::Conv2d(torch::nn::Conv2dOptions(channels, channels, 3).stride(2).padding(1)));
    blocks_->push_back(ResBlock(channels));
  }
  if (pixel_guidance_) {
    for (int64_t i = 0; i <= stages; ++i) mixes_->push_back(torch::nn::Conv2d(torch::nn::Conv2dOptions(channels + 3, channels, 1)));
  }
  head_ = register_module("head", torch::nn::Conv2d(torch::nn::Conv2dOptions(channels, 3, 3).padding(1)));
}

torch::Tensor GEncoderImpl::guide(const torch::Tensor& h, const torch::Tensor& x, size_t level) {
  if (!pixel_guidance_) return h;
  auto g = bicubic_resize_tensor(x, h.size(2), h.size(3));
  return mixes_[level]->as<torch::nn::Conv2d>()->forward(torch::cat({h, g}, 1));
}

torch::Tensor GEncoderImpl::forward(const torch::Tensor& x, const torch::Tensor& z) {
  auto h = guide(stem_->forward(z), x, 0);
  for (size_t i = 0; i < downs_->size(); ++i) {
    h = downs_[i]->as<torch::nn::Conv2d>()->forward(F::silu(h));
    h = blocks_[i]->as<ResBlock>()->forward(h);
    h = guide(h, x, i + 1);
  }
  return head_->forward(F::silu(h));
}

GDecoderImpl::GDecoderImpl(int64_t factor, int64_t channels) {
  const auto stages = latent_stages(factor);
  stem_ = register_module("stem", torch::nn::Conv2d(torch::nn::Conv2dOptions(3, channels, 3).padding(1)));
  block_ = register_module("block", ResBlock(channels));
  ups_ = register_module("ups", torch::nn::ModuleList());
  blocks_ = register_module("blocks", torch::nn::ModuleList());
  for (int64_t i = 0; i < stages; ++i) {
    ups_->push_back(torch::nn::Conv2d(torch::nn::Conv2dOptions(channels, channels, 3).padding(1)));
    blocks_->push_back(ResBlock(channels));
  }
  head_ = register_module("head", torch::nn::Conv2d(torch::nn::Conv2dOptions(channels, kLatentChannels, 3).padding(1)));
}

torch::Tensor GDecoderImpl::forward(const torch::Tensor& zlr) {
  auto h = block_->forward(stem_->forward(zlr));
  for (size_t i = 0; i < ups_->size(); ++i) {
    h = F::interpolate(h, F::InterpolateFuncOptions().scale_factor(std::vector<double>{2.0, 2.0}).mode(torch::kNearest));
    h = ups_[i]->as<torch::nn::Conv2d>()->forward(F::silu(h));
    h = blocks_[i]->as<ResBlock>()->forward(h);
  }
  return head_->forward(F::silu(h));
}

DfrmImpl::DfrmImpl(const DfrmOptions& options) : options_(options) {
  g_e_ = register_module("g_e", GEncoder(options.factor, options.channels, options.pixel_guidance));
  g_d_ = register_module("g_d", GDecoder(options.factor, options.channels));
  inn_ = register_module("inn", InvertibleConverter(options.inn));
}

torch::Tensor DfrmImpl::compact(const torch::Tensor& x, const torch::Tensor& z) {
  if (x.dim() != 4 || z.dim() != 4 || x.size(1) != 3 || z.size(1) != kLatentChannels) {
    throw std::invalid_argument("Dfrm: expected x [B,3,H,W] and z [B,4,H/8,W/8]");
  }
  if (x.size(2) % options_.factor != 0 || x.size(3) % options_.factor != 0) {
    throw std::invalid_argument("Dfrm: image dims must be divisible by the factor " + std::to_string(options_.factor));
  }
  if (z.size(2) * kLatentReduction != x.size(2) || z.size(3) * kLatentReduction != x.size(3)) {
    throw std::invalid_argument("Dfrm: latent does not match image size");
  }
  return g_e_->forward(x, z);
}

torch::Tensor DfrmImpl::to_pixels(const torch::Tensor& zlr) { return options_.use_inn ? inn_->forward(zlr) : zlr; }

torch::Tensor DfrmImpl::from_pixels(const torch::Tensor& u) { return options_.use_inn ? inn_->inverse(u) : u; }

torch::Tensor DfrmImpl::expand(const torch::Tensor& zlr) {
  if (zlr.dim() != 4 || zlr.size(1) != 3) throw std::invalid_argument("Dfrm: expected compact latent [B,3,h,w]");
  return g_d_->forward(zlr);
}

torch::Tensor DfrmImpl::lr_pixels(const torch::Tensor& x, const torch::Tensor& z) { return to_pixels(compact(x, z)); }

torch::Tensor DfrmImpl::upscale_pixels(const torch::Tensor& y_signed) { return expand(from_pixels(y_signed)); }

std::pair<Image, CompactLatent> downscale(Dfrm& dfrm, const Image& x, const Latent& z) {
  torch::NoGradGuard no_grad;
  auto xs = to_signed(x);
  auto zlr = dfrm->compact(xs.batched(), z.data().unsqueeze(0));
  auto u = dfrm->to_pixels(zlr).squeeze(0);
  Image y = quantize_to_u8(Image(u.clamp(-1.0, 1.0).contiguous(), ValueRange::kSigned));
  return {y, CompactLatent(zlr.squeeze(0).contiguous(), dfrm->factor())};
}

Latent upscale(Dfrm& dfrm, const Image& y) {
  torch::NoGradGuard no_grad;
  auto z = dfrm->upscale_pixels(to_signed(y).batched());
  return Latent(z.squeeze(0).contiguous());
}

torch::Tensor bicubic_downscale(const torch::Tensor& x, int64_t factor) {
  if (x.size(-2) % factor != 0 || x.size(-1) % factor != 0) {
    throw std::invalid_argument("bicubic_downscale: dims must be divisible by the factor");
  }
  return bicubic_resize_tensor(x, x.size(-2) / factor, x.size(-1) / factor);
}

RescaleLosses rescale_losses(Dfrm& dfrm, const torch::Tensor& x, const torch::Tensor& z,
                             const RescaleLossWeights& weights, bool quantize_chain) {
  if (!std::isfinite(weights.rec) || !std::isfinite(weights.gui) || weights.rec < 0.0 || weights.gui < 0.0 ||
      (weights.rec == 0.0 && weights.gui == 0.0)) {
    throw std::invalid_argument("rescale loss weights must be finite, non-negative and not both zero");
  }
  auto zlr = dfrm->compact(x, z);
  auto u = dfrm->to_pixels(zlr);
  auto chain1 = dfrm->expand(zlr);
  auto chain2 = dfrm->expand(dfrm->from_pixels(quantize_chain ? straight_through_quantize(u) : u));
  RescaleLosses out;
  out.rec = (chain1 - z).abs().mean() + (chain2 - z).abs().mean();
  out.gui = (u - bicubic_downscale(x, dfrm->factor())).abs().mean();
  out.res = out.rec * weights.rec + out.gui * weights.gui;
  out.chain2 = chain2;
  return out;
}

torch::Tensor loss_rec(Dfrm& dfrm, const torch::Tensor& x, const torch::Tensor& z) {
  return rescale_losses(dfrm, x, z, {1.0, 0.0}).rec;
}

torch::Tensor loss_gui(Dfrm& dfrm, const torch::Tensor& x, const torch::Tensor& z) {
  auto u = dfrm->lr_pixels(x, z);
  return (u - bicubic_downscale(x, dfrm->factor())).abs().mean();
}

torch::Tensor loss_res(Dfrm& dfrm, const torch::Tensor& x, const torch::Tensor& z, const RescaleLossWeights& weights) {
  return rescale_losses(dfrm, x, z, weights).res;
}

}  // namespace tadm
