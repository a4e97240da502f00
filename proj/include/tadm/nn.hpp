#pragma once

#include <string>
#include <utility>
#include <vector>

#include <torch/torch.h>

namespace tadm {

struct TensorArchive;

// Convolution with an optional low-rank additive delta:
//   y = conv(x) + up(down(x)),  down: k x k conv to `rank` channels, up: 1x1 conv.
// `up` starts at zero so the delta is inactive until trained.
class LoraConv2dImpl : public torch::nn::Module {
 public:
  LoraConv2dImpl(int64_t in_channels, int64_t out_channels, int64_t kernel, int64_t stride = 1, int64_t rank = 0);

  torch::Tensor forward(const torch::Tensor& x);
  int64_t rank() const { return rank_; }

 private:
  int64_t rank_;
  torch::nn::Conv2d base_{nullptr};
  torch::nn::Conv2d lora_down_{nullptr};
  torch::nn::Conv2d lora_up_{nullptr};
};
TORCH_MODULE(LoraConv2d);

// x + conv(silu(conv(silu(x)) + time_proj(temb)))
class ResBlockImpl : public torch::nn::Module {
 public:
  ResBlockImpl(int64_t channels, int64_t lora_rank = 0, int64_t time_dim = 0);
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& temb = {});

 private:
  LoraConv2d conv1_{nullptr};
  LoraConv2d conv2_{nullptr};
  torch::nn::Linear time_proj_{nullptr};
};
TORCH_MODULE(ResBlock);

// Standard transformer-style sinusoidal embedding of (possibly fractional) t, [B] -> [B, dim].
torch::Tensor sinusoidal_embedding(const torch::Tensor& t, int64_t dim);
// Linear interpolation between the embeddings of floor(t) and floor(t)+1, so a
// continuous t keeps a gradient path while integer t reproduces the integer embedding.
torch::Tensor interpolated_time_embedding(const torch::Tensor& t, int64_t dim);

// Parameters whose qualified name contains "lora_".
std::vector<std::pair<std::string, torch::Tensor>> adapter_parameters(const torch::nn::Module& module,
                                                                      const std::string& prefix);
// Everything except the low-rank adapter parameters.
std::vector<std::pair<std::string, torch::Tensor>> base_parameters(const torch::nn::Module& module,
                                                                   const std::string& prefix);
std::vector<std::pair<std::string, torch::Tensor>> all_parameters(const torch::nn::Module& module,
                                                                  const std::string& prefix);
void set_requires_grad(torch::nn::Module& module, bool requires_grad);

struct AdamOptions {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with named state so it can be written into a TensorArchive.
class Adam {
 public:
  Adam(std::vector<std::pair<std::string, torch::Tensor>> params, AdamOptions options);

  void zero_grad();
  void step();
  void set_lr(double lr) { options_.lr = lr; }
  int64_t step_count() const { return steps_; }

  void save(TensorArchive& archive, const std::string& prefix) const;
  void load(const TensorArchive& archive, const std::string& prefix);

 private:
  std::vector<std::pair<std::string, torch::Tensor>> params_;
  std::vector<torch::Tensor> exp_avg_;
  std::vector<torch::Tensor> exp_avg_sq_;
  AdamOptions options_;
  int64_t steps_ = 0;
};

}  // namespace tadm
