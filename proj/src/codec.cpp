#include "tadm/codec.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "tadm/corpus.hpp"
#include "tadm/rng.hpp"

namespace tadm {

namespace F = torch::nn::functional;

Latent::Latent(torch::Tensor data) : data_(std::move(data)) {
  if (data_.dim() != 3 || data_.size(0) != kLatentChannels || data_.size(1) < 1 || data_.size(2) < 1) {
    throw std::invalid_argument("Latent: expected tensor [4, h, w], got " + std::string(c10::str(data_.sizes())));
  }
}

Latent encode(CodecBackend& codec, const Image& x) {
  if (x.height() % kLatentReduction != 0 || x.width() % kLatentReduction != 0) {
    throw std::invalid_argument("encode: image dims must be divisible by 8");
  }
  torch::NoGradGuard no_grad;
  auto z = codec.encode(to_signed(x).batched());
  return Latent(z.squeeze(0).contiguous());
}

Image decode(CodecBackend& codec, const Latent& z) {
  torch::NoGradGuard no_grad;
  auto x = codec.decode(z.data().unsqueeze(0)).squeeze(0);
  return Image(torch::nan_to_num(x, 0.0, 1.0, -1.0).clamp(-1.0, 1.0).contiguous(), ValueRange::kSigned);
}

ToyEncoderImpl::ToyEncoderImpl(const std::vector<int64_t>& channels) {
  if (channels.size() != 4) throw std::invalid_argument("ToyEncoder: expected 4 channel widths");
  stem_ = register_module("stem", torch::nn::Conv2d(torch::nn::Conv2dOptions(3, channels[0], 3).padding(1)));
  downs_ = register_module("downs", torch::nn::ModuleList());
  blocks_ = register_module("blocks", torch::nn::ModuleList());
  for (size_t i = 1; i < channels.size(); ++i) {
    downs_->push_back(torch::nn::Conv2d(torch::nn::Conv2dOptions(channels[i - 1], channels[i], 3).stride(2).padding(1)));
    blocks_->push_back(ResBlock(channels[i]));
  }
  head_ = register_module("head",
                          torch::nn::Conv2d(torch::nn::Conv2dOptions(channels.back(), 2 * kLatentChannels, 3).padding(1)));
}

torch::Tensor ToyEncoderImpl::forward(const torch::Tensor& x) {
  auto h = stem_->forward(x);
  for (size_t i = 0; i < downs_->size(); ++i) {
    h = downs_[i]->as<torch::nn::Conv2d>()->forward(F::silu(h));
    h = blocks_[i]->as<ResBlock>()->forward(h);
  }
  return head_->forward(F::silu(h));
}

ToyDecoderImpl::ToyDecoderImpl(const std::vector<int64_t>& channels, int64_t lora_rank) {
  if (channels.size() != 4) throw std::invalid_argument("ToyDecoder: expected 4 channel widths");
  stem_ = register_module("stem", LoraConv2d(kLatentChannels, channels[0], 3, 1, lora_rank));
  ups_ = register_module("ups", torch::nn::ModuleList());
  blocks_ = register_module("blocks", torch::nn::ModuleList());
  blocks_->push_back(ResBlock(channels[0], lora_rank));
  for (size_t i = 1; i < channels.size(); ++i) {
    ups_->push_back(LoraConv2d(channels[i - 1], channels[i], 3, 1, lora_rank));
    // The full-resolution level skips its residual block to keep the decoder cheap.
    if (i + 1 < channels.size()) blocks_->push_back(ResBlock(channels[i], lora_rank));
  }
  head_ = register_module("head", LoraConv2d(channels.back(), 3, 3, 1, lora_rank));
}

torch::Tensor ToyDecoderImpl::forward(const torch::Tensor& z) {
  auto h = stem_->forward(z);
  h = blocks_[0]->as<ResBlock>()->forward(h);
  for (size_t i = 0; i < ups_->size(); ++i) {
    h = F::interpolate(h, F::InterpolateFuncOptions().scale_factor(std::vector<double>{2.0, 2.0}).mode(torch::kNearest));
    h = ups_[i]->as<LoraConv2d>()->forward(F::silu(h));
    if (i + 1 < blocks_->size()) h = blocks_[i + 1]->as<ResBlock>()->forward(h);
  }
  return head_->forward(F::silu(h));
}

ToyCodecImpl::ToyCodecImpl(const ToyCodecOptions& options) : options_(options) {
  encoder_ = register_module("encoder", ToyEncoder(options.encoder_channels));
  decoder_ = register_module("decoder", ToyDecoder(options.decoder_channels, options.lora_rank));
  latent_scale_ = register_buffer("latent_scale", torch::ones({1}));
}

void ToyCodecImpl::set_latent_scale(double scale) {
  if (!(scale > 0.0) || !std::isfinite(scale)) throw std::invalid_argument("latent scale must be positive");
  torch::NoGradGuard no_grad;
  latent_scale_.fill_(scale);
}

std::pair<torch::Tensor, torch::Tensor> ToyCodecImpl::encode_moments(const torch::Tensor& images) {
  auto moments = encoder_->forward(images);
  auto parts = moments.chunk(2, 1);
  return {parts[0], parts[1].clamp(-10.0, 10.0)};
}

torch::Tensor ToyCodecImpl::encode(const torch::Tensor& images) {
  return encode_moments(images).first * latent_scale_;
}

torch::Tensor ToyCodecImpl::decode(const torch::Tensor& latents) { return decoder_->forward(latents / latent_scale_); }

TorchScriptCodec::TorchScriptCodec(const std::filesystem::path& weights, double scale, double shift)
    : module_(torch::jit::load(weights.string())), scale_(scale), shift_(shift) {
  if (!(scale_ != 0.0)) throw std::invalid_argument("TorchScriptCodec: scale must be non-zero");
  module_.eval();
  if (!module_.find_method("encode") || !module_.find_method("decode")) {
    throw std::invalid_argument("TorchScriptCodec: module must define encode() and decode()");
  }
}

torch::Tensor TorchScriptCodec::encode(const torch::Tensor& images) {
  auto z = module_.get_method("encode")({images}).toTensor();
  return (z - shift_) * scale_;
}

torch::Tensor TorchScriptCodec::decode(const torch::Tensor& latents) {
  return module_.get_method("decode")({latents / scale_ + shift_}).toTensor();
}

void train_toy_codec(ToyCodec& codec, const std::vector<Image>& corpus, const CodecTrainOptions& options,
                     const std::function<void(int64_t, double)>& on_step) {
  auto images = stack_signed(corpus);
  codec->train();
  set_requires_grad(*codec, true);
  for (auto& [name, p] : adapter_parameters(*codec, "")) p.set_requires_grad(false);
  Adam optimizer(base_parameters(*codec, ""), AdamOptions{options.lr});
  for (int64_t step = 0; step < options.steps; ++step) {
    std::mt19937_64 rng(derive_seed(options.seed, {0xC0DEC, static_cast<uint64_t>(step)}));
    auto plan = plan_crops(images.size(0), images.size(2), images.size(3), options.batch_size, options.crop_size,
                           kLatentReduction, rng);
    auto x = apply_crops(images, plan, options.crop_size);
    auto gen = make_generator(derive_seed(options.seed, {0xC0DEC, static_cast<uint64_t>(step), 1}));
    auto [mean, logvar] = codec->encode_moments(x);
    auto z = mean + torch::randn(mean.sizes(), gen, mean.options()) * (0.5 * logvar).exp();
    auto recon = codec->decode(z);
    auto kl = 0.5 * (mean.square() + logvar.exp() - 1.0 - logvar).mean();
    auto loss = (recon - x).abs().mean() + options.kl_weight * kl;
    optimizer.zero_grad();
    loss.backward();
    optimizer.step();
    if (on_step) on_step(step, loss.item<double>());
  }
  codec->eval();
  calibrate_latent_scale(codec, corpus);
}

void calibrate_latent_scale(ToyCodec& codec, const std::vector<Image>& corpus) {
  torch::NoGradGuard no_grad;
  std::vector<torch::Tensor> means;
  for (const auto& img : corpus) means.push_back(codec->encode_moments(to_signed(img).batched()).first.flatten());
  const double sd = torch::cat(means).to(torch::kFloat64).std().item<double>();
  codec->set_latent_scale(1.0 / std::max(sd, 1e-6));
}

}  // namespace tadm
