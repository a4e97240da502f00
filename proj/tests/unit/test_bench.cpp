#include "testing.hpp"

#include <cmath>
#include <filesystem>
#include <sstream>

#include "tadm/archive.hpp"
#include "tadm/bench.hpp"
#include "tadm/config.hpp"
#include "tadm/corpus.hpp"
#include "tadm/image_io.hpp"
#include "tadm/rng.hpp"
#include "oracles.hpp"

using namespace tadm;
namespace fs = std::filesystem;

namespace {

Image random_u8(int64_t h, int64_t w, at::Generator& gen) {
  return Image(torch::randint(0, 256, {3, h, w}, gen).to(torch::kFloat32), ValueRange::kByte);
}

}  // namespace

TEST_SUITE("bench") {
  TEST_CASE("psnr and ssim agree with brute-force loops") {
    auto gen = make_generator(17);
    for (int k = 0; k < 20; ++k) {
      auto a = random_u8(32, 32, gen);
      auto noise = torch::randint(-40, 41, {3, 32, 32}, gen).to(torch::kFloat32);
      Image b((a.data() + noise).clamp(0, 255), ValueRange::kByte);
      CHECK(std::abs(psnr(a, b) - oracle::naive_psnr(a, b)) < 1e-6);
      CHECK(std::abs(ssim(a, b) - oracle::naive_ssim(a, b)) < 1e-6);
    }
  }

  TEST_CASE("psnr examples") {
    Image a(torch::full({3, 16, 16}, 100.0f), ValueRange::kByte);
    Image b(torch::full({3, 16, 16}, 116.0f), ValueRange::kByte);
    CHECK(psnr(a, b) == doctest::Approx(20 * std::log10(255.0 / 16)).epsilon(1e-12));
    CHECK(std::abs(psnr(a, b) - 24.05) < 0.01);
    CHECK(psnr(a, b) == psnr(b, a));
    CHECK(std::isinf(psnr(a, a)));
    auto r = measure("x", a, a, 0.5);
    CHECK(r.psnr_infinite);
    CHECK(r.psnr_reported() == kPsnrSentinel);
  }

  TEST_CASE("ssim examples") {
    auto gen = make_generator(4);
    auto levels = (torch::rand({1, 32, 32}, gen) * 120 + 60).round().repeat({3, 1, 1});
    Image a(levels, ValueRange::kByte);
    Image neg(255 - levels, ValueRange::kByte);
    CHECK(ssim(a, a) == doctest::Approx(1.0));
    CHECK(ssim(a, neg) < 0.5);
    CHECK_THROWS(ssim(Image(torch::zeros({3, 8, 8}), ValueRange::kByte), Image(torch::zeros({3, 8, 8}), ValueRange::kByte)));
  }

  TEST_CASE("bpp arithmetic") {
    CHECK(bpp_of_bytes(1, 256, 256) == 8.0 / 65536.0);
    CHECK_THROWS(bpp_of_bytes(1, 0, 256));
  }

  TEST_CASE("report aggregates are record means") {
    MetricReport r;
    r.name = "t";
    r.records.push_back({"a", 30.0, false, 0.9, 0.1, {{"p", 0.2}}});
    r.records.push_back({"b", 0.0, true, 1.0, 0.3, {{"p", 0.4}}});
    CHECK(std::abs(r.mean_psnr() - (30.0 + kPsnrSentinel) / 2) < 1e-9);
    CHECK(std::abs(r.mean_ssim() - 0.95) < 1e-9);
    CHECK(std::abs(r.mean_bpp() - 0.2) < 1e-9);
    CHECK(std::abs(r.mean_perceptual().at("p") - 0.3) < 1e-9);
    auto csv = r.to_csv();
    CHECK(csv.find(std::string(kReportHeader) + ",p\n") != std::string::npos);
    CHECK(csv.find("b,99.000000,1,") != std::string::npos);
  }

  TEST_CASE("JPEG sweep: schema, monotone rate, quality ordering") {
    auto images = synthesize_corpus({3, 64, 64, 5});
    std::vector<std::string> ids{"a", "b", "c"};
    std::vector<int64_t> qualities{10, 25, 40, 60, 80, 95};
    auto points = rd_sweep_jpeg(images, ids, qualities);
    REQUIRE(points.size() == 18);
    for (size_t i = 0; i < 3; ++i) {
      for (size_t q = 1; q < qualities.size(); ++q) CHECK(points[i * 6 + q].bpp >= points[i * 6 + q - 1].bpp);
      CHECK(points[i * 6 + 5].psnr_db > points[i * 6].psnr_db);
    }
    auto csv = rd_csv(points);
    CHECK(csv.substr(0, csv.find('\n')) == kRdHeader);
    CHECK(csv == rd_csv(rd_sweep_jpeg(images, ids, qualities)));
    auto svg = rd_svg(points);
    CHECK(svg.find("<svg") == 0);
    CHECK(svg.find("</svg>") != std::string::npos);
  }

  TEST_CASE("bicubic baseline report") {
    auto images = synthesize_corpus({2, 64, 64, 1});
    auto r = evaluate_bicubic(images, {"a", "b"}, 16);
    REQUIRE(r.records.size() == 2);
    CHECK(r.mean_psnr() > 10.0);
    CHECK(r.mean_bpp() > 0.0);
  }

  TEST_CASE("ablation names") {
    for (auto k : {AblationKind::kFixedTimestep, AblationKind::kNoPixelGuidance, AblationKind::kNoInn, AblationKind::kPatchSize}) {
      CHECK(parse_ablation(to_string(k)) == k);
    }
    CHECK_THROWS_AS(parse_ablation("no-tpm"), ConfigError);
  }
}

TEST_SUITE("config") {
  TEST_CASE("defaults round trip through JSON") {
    RunConfig c;
    auto back = RunConfig::from_json(c.to_json());
    CHECK(back.hash() == c.hash());
    CHECK(back.factor == 16);
    CHECK(back.patch_size == 96);
    CHECK(back.stride == 64);
    CHECK(back.t0 == 20);
    CHECK(back.stage3_lr() == doctest::Approx(back.lr_stage2 * 0.1));
  }

  TEST_CASE("unknown keys and wrong types are rejected") {
    auto j = RunConfig{}.to_json();
    j["bogus"] = 1;
    CHECK_THROWS_AS(RunConfig::from_json(j), ConfigError);
    auto k = RunConfig{}.to_json();
    k["factor"] = "sixteen";
    CHECK_THROWS_AS(RunConfig::from_json(k), ConfigError);
    auto partial = nlohmann::json{{"lr", {{"stage1", 7e-4}}}};
    CHECK(RunConfig::from_json(partial).lr_stage1 == 7e-4);
  }

  TEST_CASE("dotted overrides") {
    auto tree = default_config_tree();
    apply_override(tree, "scheduler.t0=500");
    apply_override(tree, "corpus.dir=/data/x");
    apply_override(tree, "model.use_inn=false");
    auto c = RunConfig::from_json(tree);
    CHECK(c.t0 == 500);
    CHECK(c.corpus_dir == "/data/x");
    CHECK_FALSE(c.use_inn);
    CHECK_THROWS_AS(apply_override(tree, "nope.key=1"), ConfigError);
    CHECK_THROWS_AS(apply_override(tree, "factor"), ConfigError);
  }

  TEST_CASE("validation") {
    RunConfig c;
    c.stride = 200;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    RunConfig d;
    d.factor = 12;
    CHECK_THROWS_AS(d.validate(), ConfigError);
    RunConfig e;
    e.t0 = 1000;
    CHECK_THROWS_AS(e.validate(), ConfigError);
    CHECK_NOTHROW(RunConfig{}.validate());
  }

  TEST_CASE("key documentation lists every key with its default") {
    auto text = describe_config_keys();
    auto tree = default_config_tree();
    for (const auto& k : config_keys()) {
      CHECK(text.find("  " + k.key + " = " + k.default_value.dump()) != std::string::npos);
      std::string p = "/" + k.key;
      for (auto& ch : p) {
        if (ch == '.') ch = '/';
      }
      CHECK(tree.at(nlohmann::json::json_pointer(p)) == k.default_value);
    }
  }
}

TEST_SUITE("archive") {
  TEST_CASE("round trip preserves tensors and metadata") {
    const auto dir = fs::temp_directory_path() / "tadm_archive_test";
    fs::create_directories(dir);
    TensorArchive a;
    a.meta["stage"] = 2;
    a.tensors["x.f"] = torch::randn({3, 4});
    a.tensors["x.d"] = torch::randn({5}, torch::kFloat64);
    a.tensors["n"] = torch::tensor({7}, torch::kInt64);
    write_archive(dir / "a.tadm", a);
    auto b = read_archive(dir / "a.tadm");
    CHECK(b.meta["stage"] == 2);
    REQUIRE(b.tensors.size() == 3);
    for (const auto& [k, v] : a.tensors) CHECK(torch::equal(b.tensors.at(k), v));
    CHECK(b.has_prefix("x."));
    CHECK(b.with_prefix("x.").size() == 2);
    CHECK(tensors_checksum(a.tensors) == tensors_checksum(b.tensors));

    auto bytes = read_file(dir / "a.tadm");
    bytes[bytes.size() - 3] ^= 0x5A;
    write_file_atomic(dir / "bad.tadm", bytes.data(), bytes.size());
    CHECK_THROWS(read_archive(dir / "bad.tadm"));
    fs::remove_all(dir);
  }

  TEST_CASE("sha256 known answer") {
    CHECK(sha256_hex(std::string_view("abc")) == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  }
}

TEST_SUITE("corpus") {
  TEST_CASE("synthesis is deterministic and seed dependent") {
    auto a = synthesize_corpus({3, 32, 48, 9});
    auto b = synthesize_corpus({3, 32, 48, 9});
    auto c = synthesize_corpus({3, 32, 48, 10});
    REQUIRE(a.size() == 3);
    CHECK(a[0].height() == 32);
    CHECK(a[0].width() == 48);
    CHECK(corpus_hash(a) == corpus_hash(b));
    CHECK(corpus_hash(a) != corpus_hash(c));
  }

  TEST_CASE("aligned crops") {
    std::mt19937_64 rng(1);
    auto plan = plan_crops(4, 64, 64, 5, 32, 16, rng);
    REQUIRE(plan.items.size() == 5);
    for (size_t i = 0; i < 5; ++i) {
      CHECK(plan.rows[i] % 16 == 0);
      CHECK(plan.cols[i] % 16 == 0);
      CHECK(plan.rows[i] + 32 <= 64);
    }
    auto x = torch::randn({4, 3, 64, 64});
    auto z = torch::randn({4, 4, 8, 8});
    auto xc = apply_crops(x, plan, 32);
    auto zc = apply_crops(z, plan, 32, 8);
    CHECK(xc.sizes() == torch::IntArrayRef({5, 3, 32, 32}));
    CHECK(zc.sizes() == torch::IntArrayRef({5, 4, 4, 4}));
    using torch::indexing::Slice;
    CHECK(torch::equal(zc[0], z[plan.items[0]].index({Slice(), Slice(plan.rows[0] / 8, plan.rows[0] / 8 + 4),
                                                       Slice(plan.cols[0] / 8, plan.cols[0] / 8 + 4)})));
  }
}
