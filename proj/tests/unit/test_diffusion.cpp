#include "testing.hpp"

#include <cmath>

#include "tadm/diffusion.hpp"
#include "tadm/rng.hpp"

using namespace tadm;

TEST_SUITE("diffusion") {
  TEST_CASE("linear schedule and cumulative products") {
    auto s = make_schedule(1000, 1e-4, 0.02);
    REQUIRE(s.T == 1000);
    double prod = 1.0;
    for (int64_t t = 0; t < 1000; ++t) {
      const double beta = 1e-4 + (0.02 - 1e-4) * static_cast<double>(t) / 999.0;
      prod *= 1.0 - beta;
      CHECK(s.betas[t].item<double>() == doctest::Approx(beta).epsilon(1e-12));
      CHECK(s.alpha_bar(t) == doctest::Approx(prod).epsilon(1e-10));
    }
    CHECK_THROWS_AS(s.alpha_bar(-1), std::invalid_argument);
    CHECK_THROWS_AS(s.alpha_bar(1000), std::invalid_argument);
  }

  TEST_CASE("one-step denoising inverts the forward process") {
    auto s = make_schedule();
    auto gen = make_generator(3);
    auto z = torch::randn({2, 4, 6, 6}, gen, torch::kFloat64);
    auto eps = torch::randn({2, 4, 6, 6}, gen, torch::kFloat64);
    for (int64_t t : {0, 250, 500, 999}) {
      auto zt = add_noise(z, eps, t, s);
      auto back = denoise_fixed(zt, eps, t, s);
      CAPTURE(t);
      CHECK((back - z).abs().max().item<double>() < 1e-6);
    }
  }

  TEST_CASE("denoise_fixed with alpha_bar 1 is the identity") {
    auto z = torch::randn({1, 4, 3, 3});
    auto eps = torch::randn({1, 4, 3, 3});
    CHECK(torch::equal(denoise_fixed(z, eps, 1.0), z));
    CHECK_THROWS(denoise_fixed(z, eps, 0.0));
  }

  TEST_CASE("closed-form diffusion MSE agrees with sampling") {
    auto s = make_schedule();
    auto gen = make_generator(11);
    auto z = torch::randn({1, 4, 8, 8}, gen, torch::kFloat64) * 0.8 + 0.3;
    for (int64_t t : {10, 200, 600, 999}) {
      const int64_t samples = 100000 / 256 + 1;
      double acc = 0;
      const double ab = s.alpha_bar(t);
      for (int64_t k = 0; k < samples; ++k) {
        auto eps = torch::randn(z.sizes(), gen, torch::kFloat64);
        auto zt = std::sqrt(ab) * z + std::sqrt(1 - ab) * eps;
        acc += (zt - z).square().mean().item<double>();
      }
      const double mc = acc / static_cast<double>(samples);
      CAPTURE(t);
      CHECK(std::abs(diffusion_mse(z, t, s) - mc) / mc < 0.01);
    }
  }

  TEST_CASE("aligned timestep is monotone in the rescaling error") {
    auto s = make_schedule();
    auto z = torch::randn({1, 4, 8, 8}, make_generator(5), torch::kFloat64);
    int64_t prev = 0;
    for (double e = 0.0; e < 3.0; e += 0.01) {
      const auto t = align_timestep(e, z, s);
      CHECK(t >= prev);
      prev = t;
    }
    CHECK(align_timestep(0.0, z, s) == 0);
    CHECK(align_timestep(1e9, z, s) == 999);
    const auto t = align_timestep(0.3, z, s);
    CHECK(diffusion_mse(z, t, s) >= 0.3);
    CHECK(diffusion_mse(z, t - 1, s) < 0.3);
  }
}
