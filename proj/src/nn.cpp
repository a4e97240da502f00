#include "tadm/nn.hpp"

#include <cmath>
#include <stdexcept>

#include "tadm/archive.hpp"

namespace tadm {

namespace F = torch::nn::functional;

LoraConv2dImpl::LoraConv2dImpl(int64_t in_channels, int64_t out_channels, int64_t kernel, int64_t stride,
                               int64_t rank)
    : rank_(rank) {
  const auto pad = kernel / 2;
  base_ = register_module(
      "base", torch::nn::Conv2d(torch::nn::Conv2dOptions(in_channels, out_channels, kernel).stride(stride).padding(pad)));
  if (rank_ > 0) {
    lora_down_ = register_module(
        "lora_down",
        torch::nn::Conv2d(torch::nn::Conv2dOptions(in_channels, rank_, kernel).stride(stride).padding(pad).bias(false)));
    lora_up_ = register_module("lora_up", torch::nn::Conv2d(torch::nn::Conv2dOptions(rank_, out_channels, 1).bias(false)));
    torch::NoGradGuard no_grad;
    lora_up_->weight.zero_();
  }
}

torch::Tensor LoraConv2dImpl::forward(const torch::Tensor& x) {
  auto y = base_->forward(x);
  if (rank_ > 0) y = y + lora_up_->forward(lora_down_->forward(x));
  return y;
}

ResBlockImpl::ResBlockImpl(int64_t channels, int64_t lora_rank, int64_t time_dim) {
  conv1_ = register_module("conv1", LoraConv2d(channels, channels, 3, 1, lora_rank));
  conv2_ = register_module("conv2", LoraConv2d(channels, channels, 3, 1, lora_rank));
  if (time_dim > 0) time_proj_ = register_module("time_proj", torch::nn::Linear(time_dim, channels));
}

torch::Tensor ResBlockImpl::forward(const torch::Tensor& x, const torch::Tensor& temb) {
  auto h = conv1_->forward(F::silu(x));
  if (time_proj_ && temb.defined()) h = h + time_proj_->forward(temb).unsqueeze(-1).unsqueeze(-1);
  return x + conv2_->forward(F::silu(h));
}

torch::Tensor sinusoidal_embedding(const torch::Tensor& t, int64_t dim) {
  if (dim % 2 != 0) throw std::invalid_argument("sinusoidal_embedding: dim must be even");
  const int64_t half = dim / 2;
  auto freqs = torch::exp(torch::arange(half, t.options()).mul(-std::log(10000.0) / static_cast<double>(half)));
  auto args = t.unsqueeze(-1) * freqs.unsqueeze(0);
  return torch::cat({torch::cos(args), torch::sin(args)}, -1);
}

torch::Tensor interpolated_time_embedding(const torch::Tensor& t, int64_t dim) {
  auto lower = t.detach().floor();
  auto frac = (t - lower).unsqueeze(-1);
  auto e0 = sinusoidal_embedding(lower, dim);
  auto e1 = sinusoidal_embedding(lower + 1.0, dim);
  return e0 + frac * (e1 - e0);
}

std::vector<std::pair<std::string, torch::Tensor>> adapter_parameters(const torch::nn::Module& module,
                                                                      const std::string& prefix) {
  std::vector<std::pair<std::string, torch::Tensor>> out;
  for (const auto& item : module.named_parameters(true)) {
    if (item.key().find("lora_") != std::string::npos) out.emplace_back(prefix + item.key(), item.value());
  }
  return out;
}

std::vector<std::pair<std::string, torch::Tensor>> base_parameters(const torch::nn::Module& module,
                                                                   const std::string& prefix) {
  std::vector<std::pair<std::string, torch::Tensor>> out;
  for (const auto& item : module.named_parameters(true)) {
    if (item.key().find("lora_") == std::string::npos) out.emplace_back(prefix + item.key(), item.value());
  }
  return out;
}

std::vector<std::pair<std::string, torch::Tensor>> all_parameters(const torch::nn::Module& module,
                                                                  const std::string& prefix) {
  std::vector<std::pair<std::string, torch::Tensor>> out;
  for (const auto& item : module.named_parameters(true)) out.emplace_back(prefix + item.key(), item.value());
  return out;
}

void set_requires_grad(torch::nn::Module& module, bool requires_grad) {
  for (auto& p : module.parameters(true)) p.set_requires_grad(requires_grad);
}

Adam::Adam(std::vector<std::pair<std::string, torch::Tensor>> params, AdamOptions options)
    : params_(std::move(params)), options_(options) {
  exp_avg_.reserve(params_.size());
  exp_avg_sq_.reserve(params_.size());
  for (const auto& [name, p] : params_) {
    exp_avg_.push_back(torch::zeros_like(p));
    exp_avg_sq_.push_back(torch::zeros_like(p));
  }
}

void Adam::zero_grad() {
  for (auto& [name, p] : params_) {
    if (p.grad().defined()) {
      p.mutable_grad().detach_();
      p.mutable_grad().zero_();
    }
  }
}

void Adam::step() {
  torch::NoGradGuard no_grad;
  ++steps_;
  const double bc1 = 1.0 - std::pow(options_.beta1, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(options_.beta2, static_cast<double>(steps_));
  const double step_size = options_.lr / bc1;
  for (size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i].second;
    if (!p.grad().defined()) continue;
    const auto& g = p.grad();
    exp_avg_[i].mul_(options_.beta1).add_(g, 1.0 - options_.beta1);
    exp_avg_sq_[i].mul_(options_.beta2).addcmul_(g, g, 1.0 - options_.beta2);
    auto denom = (exp_avg_sq_[i] / bc2).sqrt_().add_(options_.eps);
    p.addcdiv_(exp_avg_[i], denom, -step_size);
  }
}

void Adam::save(TensorArchive& archive, const std::string& prefix) const {
  archive.tensors[prefix + "step"] = torch::tensor({steps_}, torch::kInt64);
  for (size_t i = 0; i < params_.size(); ++i) {
    archive.tensors[prefix + "m." + params_[i].first] = exp_avg_[i].clone();
    archive.tensors[prefix + "v." + params_[i].first] = exp_avg_sq_[i].clone();
  }
}

void Adam::load(const TensorArchive& archive, const std::string& prefix) {
  auto find = [&](const std::string& key) -> const torch::Tensor& {
    auto it = archive.tensors.find(prefix + key);
    if (it == archive.tensors.end()) throw std::runtime_error("optimizer state missing '" + prefix + key + "'");
    return it->second;
  };
  steps_ = find("step").item<int64_t>();
  for (size_t i = 0; i < params_.size(); ++i) {
    exp_avg_[i].copy_(find("m." + params_[i].first));
    exp_avg_sq_[i].copy_(find("v." + params_[i].first));
  }
}

}  // namespace tadm
