#include "testing.hpp"

#include <cmath>

#include "tadm/archive.hpp"
#include "tadm/codec.hpp"
#include "tadm/denoiser.hpp"
#include "tadm/dfrm.hpp"
#include "tadm/nn.hpp"
#include "tadm/perceptual.hpp"
#include "tadm/rng.hpp"
#include "tadm/timestep.hpp"

using namespace tadm;

TEST_SUITE("nn") {
  TEST_CASE("interpolated embedding equals the integer embedding at integers") {
    auto t = torch::tensor({0.0f, 3.0f, 998.0f});
    CHECK(torch::allclose(interpolated_time_embedding(t, 32), sinusoidal_embedding(t, 32), 1e-6, 1e-6));
    auto mid = interpolated_time_embedding(torch::tensor({3.5f}), 32);
    auto avg = 0.5 * (sinusoidal_embedding(torch::tensor({3.0f}), 32) + sinusoidal_embedding(torch::tensor({4.0f}), 32));
    CHECK(torch::allclose(mid, avg, 1e-6, 1e-6));
  }

  TEST_CASE("low-rank delta starts inactive") {
    torch::manual_seed(1);
    LoraConv2d with(8, 6, 3, 1, 4);
    LoraConv2d without(8, 6, 3, 1, 0);
    auto named = with->named_parameters();
    auto plain = without->named_parameters();
    {
      torch::NoGradGuard g;
      plain["base.weight"].copy_(named["base.weight"]);
      plain["base.bias"].copy_(named["base.bias"]);
    }
    auto x = torch::randn({2, 8, 5, 5});
    CHECK(torch::equal(with->forward(x), without->forward(x)));
    CHECK(adapter_parameters(*with, "").size() == 2);
    CHECK(base_parameters(*with, "").size() == 2);
  }

  TEST_CASE("Adam matches a scalar re-derivation") {
    auto p = torch::tensor({1.0, -2.0}, torch::kFloat64).set_requires_grad(true);
    Adam opt({{"p", p}}, AdamOptions{0.1});
    double ref[2] = {1.0, -2.0}, m[2] = {0, 0}, v[2] = {0, 0};
    for (int step = 1; step <= 3; ++step) {
      opt.zero_grad();
      (p.square().sum() * 0.5).backward();
      opt.step();
      for (int i = 0; i < 2; ++i) {
        const double g = ref[i];
        m[i] = 0.9 * m[i] + 0.1 * g;
        v[i] = 0.999 * v[i] + 0.001 * g * g;
        const double mh = m[i] / (1 - std::pow(0.9, step));
        const double vh = v[i] / (1 - std::pow(0.999, step));
        ref[i] -= 0.1 * mh / (std::sqrt(vh) + 1e-8);
      }
    }
    CHECK(p[0].item<double>() == doctest::Approx(ref[0]).epsilon(1e-12));
    CHECK(p[1].item<double>() == doctest::Approx(ref[1]).epsilon(1e-12));
  }

  TEST_CASE("Adam state survives an archive") {
    auto p = torch::tensor({0.5f, 1.5f}).set_requires_grad(true);
    Adam a({{"p", p}}, AdamOptions{0.01});
    a.zero_grad();
    p.sum().backward();
    a.step();
    TensorArchive ar;
    a.save(ar, "optim.");
    auto q = p.detach().clone().set_requires_grad(true);
    Adam b({{"p", q}}, AdamOptions{0.01});
    b.load(ar, "optim.");
    CHECK(b.step_count() == 1);
    for (auto* opt : {&a, &b}) {
      opt->zero_grad();
    }
    p.sum().backward();
    q.sum().backward();
    a.step();
    b.step();
    CHECK(torch::equal(p, q));
  }
}

TEST_SUITE("dfrm") {
  TEST_CASE("untrained converter is the identity") {
    torch::manual_seed(0);
    InvertibleConverter inn(InvertibleConverterOptions{8, 16, 1.0});
    auto v = torch::randn({2, 3, 5, 4});
    CHECK(torch::equal(inn->forward(v), v));
  }

  TEST_CASE("randomized converter inverts and its log-det matches the Jacobian") {
    InvertibleConverter inn(InvertibleConverterOptions{4, 8, 1.0});
    inn->to(torch::kFloat64);
    auto gen = make_generator(21);
    inn->randomize(gen, 0.2);
    auto v = torch::randn({1, 3, 2, 2}, gen, torch::kFloat64);
    CHECK((inn->inverse(inn->forward(v)) - v).abs().max().item<double>() < 1e-10);

    auto [y, logdet] = inn->forward_with_logdet(v);
    auto f = [&](const torch::Tensor& flat) { return inn->forward(flat.view({1, 3, 2, 2})).flatten(); };
    auto jac = torch::zeros({12, 12}, torch::kFloat64);
    for (int64_t j = 0; j < 12; ++j) {
      auto e = torch::zeros({12}, torch::kFloat64);
      e[j] = 1e-6;
      jac.index_put_({torch::indexing::Slice(), j}, (f(v.flatten() + e) - f(v.flatten() - e)) / 2e-6);
    }
    auto expected = std::get<1>(torch::linalg_slogdet(jac)).item<double>();
    CHECK(logdet.item<double>() == doctest::Approx(expected).epsilon(1e-6));
  }

  TEST_CASE("supported factors") {
    CHECK(is_supported_factor(8));
    CHECK(is_supported_factor(16));
    CHECK(is_supported_factor(32));
    CHECK_FALSE(is_supported_factor(12));
    CHECK_FALSE(is_supported_factor(4));
    CHECK(latent_stages(16) == 1);
    CHECK(latent_stages(32) == 2);
  }

  TEST_CASE("module shapes at both factors") {
    torch::manual_seed(0);
    for (int64_t n : {16, 32}) {
      Dfrm d(DfrmOptions{n, 16, true, true, {}});
      auto x = torch::rand({2, 3, 64, 64}) * 2 - 1;
      auto z = torch::randn({2, 4, 8, 8});
      auto zlr = d->compact(x, z);
      CHECK(zlr.sizes() == torch::IntArrayRef({2, 3, 64 / n, 64 / n}));
      CHECK(d->expand(zlr).sizes() == z.sizes());
      auto y = d->lr_pixels(x, z);
      CHECK(d->upscale_pixels(y).sizes() == z.sizes());
      CHECK_THROWS(d->compact(x, torch::randn({2, 4, 4, 4})));
    }
  }

  TEST_CASE("single-image downscale produces an 8-bit LR image") {
    torch::manual_seed(0);
    Dfrm d(DfrmOptions{16, 16, true, true, {}});
    Image x(torch::rand({3, 64, 32}) * 2 - 1, ValueRange::kSigned);
    Latent z(torch::randn({4, 8, 4}));
    auto [y, lat] = downscale(d, x, z);
    CHECK(y.range() == ValueRange::kByte);
    CHECK(y.height() == 4);
    CHECK(y.width() == 2);
    CHECK(lat.factor() == 16);
    CHECK(upscale(d, y).data().sizes() == torch::IntArrayRef({4, 8, 4}));
  }

  TEST_CASE("rescaling losses are finite and validated") {
    torch::manual_seed(0);
    Dfrm d(DfrmOptions{16, 16, true, true, {}});
    auto x = torch::rand({1, 3, 32, 32}) * 2 - 1;
    auto z = torch::randn({1, 4, 4, 4});
    auto r = rescale_losses(d, x, z, {1.0, 1.0});
    CHECK(std::isfinite(r.res.item<double>()));
    CHECK(r.res.item<double>() == doctest::Approx(r.rec.item<double>() + r.gui.item<double>()));
    CHECK_THROWS(rescale_losses(d, x, z, {-1.0, 1.0}));
    CHECK_THROWS(rescale_losses(d, x, z, {0.0, 0.0}));
  }

  TEST_CASE("identity converter when disabled") {
    torch::manual_seed(0);
    Dfrm d(DfrmOptions{16, 16, true, false, {}});
    auto u = torch::randn({1, 3, 2, 2});
    CHECK(torch::equal(d->from_pixels(u), u));
  }
}

TEST_SUITE("timestep") {
  TEST_CASE("predictor output lies in [0, T-1]") {
    torch::manual_seed(0);
    TimestepPredictor tpm(TimestepPredictorOptions{8, 16, 1000});
    auto t = tpm->forward(torch::randn({3, 4, 12, 12}) * 5);
    CHECK(t.sizes() == torch::IntArrayRef({3}));
    CHECK(t.min().item<double>() >= 0.0);
    CHECK(t.max().item<double>() <= 999.0);
  }

  TEST_CASE("zero-initialized hybrid scheduler equals the fixed scheduler") {
    torch::manual_seed(0);
    auto s = make_schedule();
    HybridScheduler hs(s, HybridSchedulerOptions{999, 8, 16, 16});
    auto gen = make_generator(2);
    auto zhat = torch::randn({2, 4, 6, 6}, gen);
    auto eps = torch::randn({2, 4, 6, 6}, gen);
    auto t = torch::tensor({3.0f, 870.5f});
    CHECK(torch::equal(hs->forward(zhat, eps, t), denoise_fixed(zhat, eps, 999, s)));
    CHECK_THROWS(hs->forward(zhat, eps, torch::tensor({1.0f})));
  }

  TEST_CASE("time-step gradient reaches the predictor through the learned scheduler") {
    torch::manual_seed(0);
    auto s = make_schedule();
    TimestepPredictor tpm(TimestepPredictorOptions{8, 16, 1000});
    HybridScheduler hs(s, HybridSchedulerOptions{999, 8, 16, 16});
    {
      torch::NoGradGuard g;
      for (auto& p : hs->parameters()) p.normal_(0.0, 0.05);
    }
    ZeroDenoiser den;
    auto r = enhance(torch::randn({2, 4, 16, 16}), den, tpm, hs);
    r.z0.square().mean().backward();
    double norm = 0;
    for (auto& p : tpm->parameters()) {
      if (p.grad().defined()) norm += p.grad().abs().sum().item<double>();
    }
    CHECK(norm > 0);
  }

  TEST_CASE("fixed time step bypasses the predictor") {
    auto s = make_schedule();
    TimestepPredictor tpm(TimestepPredictorOptions{8, 16, 1000});
    HybridScheduler hs(s, HybridSchedulerOptions{999, 8, 16, 16});
    ZeroDenoiser den;
    auto zhat = torch::randn({1, 4, 8, 8});
    auto r = enhance(zhat, den, tpm, hs, int64_t{1});
    CHECK(r.t.item<double>() == 1.0);
    CHECK(torch::allclose(r.z0, zhat / std::sqrt(s.alpha_bar(1))));
  }
}

TEST_SUITE("codec") {
  TEST_CASE("toy codec shapes and unit latent scale") {
    torch::manual_seed(0);
    ToyCodec codec;
    auto x = torch::rand({2, 3, 32, 48}) * 2 - 1;
    auto z = codec->encode(x);
    CHECK(z.sizes() == torch::IntArrayRef({2, 4, 4, 6}));
    CHECK(codec->decode(z).sizes() == x.sizes());
    std::vector<Image> corpus;
    for (int i = 0; i < 3; ++i) corpus.emplace_back(torch::rand({3, 32, 32}) * 2 - 1, ValueRange::kSigned);
    calibrate_latent_scale(codec, corpus);
    auto zs = codec->encode(torch::stack({corpus[0].data(), corpus[1].data(), corpus[2].data()}));
    CHECK(zs.std().item<double>() == doctest::Approx(1.0).epsilon(0.05));
  }

  TEST_CASE("single-image wrappers enforce the contract") {
    torch::manual_seed(0);
    ToyCodec codec;
    Image x(torch::rand({3, 16, 16}) * 2 - 1, ValueRange::kSigned);
    auto z = encode(*codec, x);
    CHECK(z.height() == 2);
    auto back = decode(*codec, z);
    CHECK(back.data().max().item<double>() <= 1.0);
    CHECK(back.data().min().item<double>() >= -1.0);
    CHECK_THROWS(encode(*codec, Image(torch::rand({3, 12, 16}), ValueRange::kSigned)));
  }

  TEST_CASE("denoiser predicts noise of the latent shape") {
    torch::manual_seed(0);
    ToyUNet unet(ToyUNetOptions{16, 32, 16, 2});
    auto z = torch::randn({2, 4, 5, 7});
    auto eps = unet->predict_noise(z, torch::tensor({10.0f, 500.5f}));
    CHECK(eps.sizes() == z.sizes());
    ZeroDenoiser zero;
    CHECK(torch::equal(zero.predict_noise(z, torch::tensor({1.0f, 2.0f})), torch::zeros_like(z)));
  }
}

TEST_SUITE("perceptual") {
  TEST_CASE("distances vanish for identical inputs and grow with distortion") {
    PerceptualPair pair;
    auto x = torch::rand({1, 3, 32, 32}) * 2 - 1;
    for (auto& m : {pair.p1, pair.p2}) {
      CHECK(m->distance(x, x).item<double>() == 0.0);
      auto small = m->distance(x + 0.05 * torch::randn_like(x), x).item<double>();
      auto large = m->distance(x + 0.5 * torch::randn_like(x), x).item<double>();
      CAPTURE(m->name());
      CHECK(small > 0);
      CHECK(large > small);
    }
    CHECK(loss_enh(x, x, pair, 1.0).item<double>() == 0.0);
  }
}
