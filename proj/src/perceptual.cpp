#include "tadm/perceptual.hpp"

#include <algorithm>
#include <stdexcept>

namespace tadm {

namespace F = torch::nn::functional;

namespace {

torch::Tensor gradient_magnitude(const torch::Tensor& x) {
  const auto c = x.size(1);
  auto kx = torch::tensor({-1.0, 0.0, 1.0, -2.0, 0.0, 2.0, -1.0, 0.0, 1.0}, x.options()).view({1, 1, 3, 3}) / 8.0;
  auto ky = kx.transpose(2, 3);
  auto padded = F::pad(x, F::PadFuncOptions({1, 1, 1, 1}).mode(torch::kReplicate));
  auto gx = F::conv2d(padded, kx.expand({c, 1, 3, 3}), F::Conv2dFuncOptions().groups(c));
  auto gy = F::conv2d(padded, ky.expand({c, 1, 3, 3}), F::Conv2dFuncOptions().groups(c));
  // The small floor keeps the square root differentiable on flat regions.
  return (gx.square() + gy.square() + 1e-6).sqrt();
}

void check_pair(const torch::Tensor& a, const torch::Tensor& b) {
  if (a.sizes() != b.sizes() || a.dim() != 4) throw std::invalid_argument("perceptual metric: shape mismatch");
}

}  // namespace

torch::Tensor GradientMagnitudeMetric::distance(const torch::Tensor& xhat, const torch::Tensor& x) {
  check_pair(xhat, x);
  auto a = xhat;
  auto b = x;
  auto total = torch::zeros({}, x.options());
  int used = 0;
  for (int s = 0; s < scales_; ++s) {
    if (s > 0) {
      if (a.size(2) < 4 || a.size(3) < 4) break;
      a = F::avg_pool2d(a, F::AvgPool2dFuncOptions(2));
      b = F::avg_pool2d(b, F::AvgPool2dFuncOptions(2));
    }
    total = total + (gradient_magnitude(a) - gradient_magnitude(b)).abs().mean();
    ++used;
  }
  return total / static_cast<double>(used);
}

torch::Tensor LocalStructureMetric::distance(const torch::Tensor& xhat, const torch::Tensor& x) {
  check_pair(xhat, x);
  const int64_t k = std::min<int64_t>({window_, x.size(2), x.size(3)});
  auto pool = [k](const torch::Tensor& t) { return F::avg_pool2d(t, F::AvgPool2dFuncOptions(k).stride(1)); };
  // Contrast-structure term of SSIM; dynamic range 2 gives c = (0.03 * 2)^2.
  const double c = 0.0036;
  auto mu_a = pool(xhat);
  auto mu_b = pool(x);
  auto var_a = pool(xhat * xhat) - mu_a * mu_a;
  auto var_b = pool(x * x) - mu_b * mu_b;
  auto cov = pool(xhat * x) - mu_a * mu_b;
  auto s = (2.0 * cov + c) / (var_a + var_b + c);
  return (1.0 - s).mean();
}

torch::Tensor loss_enh(const torch::Tensor& xhat, const torch::Tensor& x, PerceptualPair& metrics, double lambda_pec) {
  if (xhat.sizes() != x.sizes()) throw std::invalid_argument("loss_enh: shape mismatch");
  auto loss = (xhat - x).abs().mean();
  if (lambda_pec != 0.0) loss = loss + lambda_pec * (metrics.p1->distance(xhat, x) + metrics.p2->distance(xhat, x));
  return loss;
}

}  // namespace tadm
