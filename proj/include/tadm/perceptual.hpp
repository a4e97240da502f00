#pragma once

#include <memory>
#include <string>

#include <torch/torch.h>

namespace tadm {

// Full-reference perceptual distance on batched [B,3,H,W] images in [-1,1].
// Returns a differentiable scalar, zero for identical inputs.
class PerceptualMetric {
 public:
  virtual ~PerceptualMetric() = default;
  virtual std::string name() const = 0;
  virtual torch::Tensor distance(const torch::Tensor& xhat, const torch::Tensor& x) = 0;
};

// Mean L1 between Sobel gradient magnitudes at scales 1, 1/2, 1/4 (average pooled).
class GradientMagnitudeMetric : public PerceptualMetric {
 public:
  explicit GradientMagnitudeMetric(int scales = 3) : scales_(scales) {}
  std::string name() const override { return "grad_mag_l1"; }
  torch::Tensor distance(const torch::Tensor& xhat, const torch::Tensor& x) override;

 private:
  int scales_;
};

// 1 - mean contrast-structure similarity (2 sigma_xy + c) / (sigma_x^2 + sigma_y^2 + c)
// over 7x7 box windows, per channel.
class LocalStructureMetric : public PerceptualMetric {
 public:
  explicit LocalStructureMetric(int window = 7) : window_(window) {}
  std::string name() const override { return "local_structure"; }
  torch::Tensor distance(const torch::Tensor& xhat, const torch::Tensor& x) override;

 private:
  int window_;
};

struct PerceptualPair {
  std::shared_ptr<PerceptualMetric> p1 = std::make_shared<GradientMagnitudeMetric>();
  std::shared_ptr<PerceptualMetric> p2 = std::make_shared<LocalStructureMetric>();
};

// |xhat - x|_1 (mean) + lambda_pec (P1 + P2)
torch::Tensor loss_enh(const torch::Tensor& xhat, const torch::Tensor& x, PerceptualPair& metrics, double lambda_pec);

}  // namespace tadm
