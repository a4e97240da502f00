#include "tadm/bench.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "tadm/image_io.hpp"

namespace tadm {

namespace fs = std::filesystem;
namespace F = torch::nn::functional;

torch::Tensor byte_levels(const Image& img) {
  if (img.range() == ValueRange::kByte) return img.data().to(torch::kFloat64);
  return quantize_tensor(img.data()).to(torch::kFloat64);
}

torch::Tensor luma(const Image& img) {
  auto v = byte_levels(img);
  return v[0] * 0.299 + v[1] * 0.587 + v[2] * 0.114;
}

namespace {

void check_same_size(const Image& a, const Image& b) {
  if (a.height() != b.height() || a.width() != b.width()) throw std::invalid_argument("metric: image sizes differ");
}

torch::Tensor gaussian_window(int64_t size, double sigma) {
  auto x = torch::arange(size, torch::kFloat64) - static_cast<double>(size - 1) / 2.0;
  auto g = torch::exp(-x.square() / (2.0 * sigma * sigma));
  g = g / g.sum();
  return torch::outer(g, g);
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

}  // namespace

double psnr(const Image& a, const Image& b) {
  check_same_size(a, b);
  const double mse = (byte_levels(a) - byte_levels(b)).square().mean().item<double>();
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(255.0 * 255.0 / mse);
}

double ssim(const Image& a, const Image& b) {
  check_same_size(a, b);
  constexpr int64_t kWin = 11;
  if (a.height() < kWin || a.width() < kWin) throw std::invalid_argument("ssim: images must be at least 11x11");
  const double c1 = std::pow(0.01 * 255.0, 2);
  const double c2 = std::pow(0.03 * 255.0, 2);
  auto w = gaussian_window(kWin, 1.5).view({1, 1, kWin, kWin});
  auto x = luma(a).unsqueeze(0).unsqueeze(0);
  auto y = luma(b).unsqueeze(0).unsqueeze(0);
  auto filt = [&](const torch::Tensor& t) { return F::conv2d(t, w); };
  auto mx = filt(x);
  auto my = filt(y);
  auto sxx = filt(x * x) - mx * mx;
  auto syy = filt(y * y) - my * my;
  auto sxy = filt(x * y) - mx * my;
  auto map = ((2.0 * mx * my + c1) * (2.0 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2));
  return map.mean().item<double>();
}

double bpp_of_bytes(size_t bytes, int64_t hr_height, int64_t hr_width) {
  if (hr_height < 1 || hr_width < 1) throw std::invalid_argument("bpp: HR dims must be positive");
  return 8.0 * static_cast<double>(bytes) / static_cast<double>(hr_height * hr_width);
}

double bpp_of_file(const fs::path& path, int64_t hr_height, int64_t hr_width) {
  return bpp_of_bytes(static_cast<size_t>(fs::file_size(path)), hr_height, hr_width);
}

ImageRecord measure(const std::string& id, const Image& reference, const Image& test, double bpp) {
  ImageRecord r;
  r.id = id;
  r.psnr_db = psnr(reference, test);
  r.psnr_infinite = std::isinf(r.psnr_db);
  if (r.psnr_infinite) r.psnr_db = kPsnrSentinel;
  r.ssim = ssim(reference, test);
  r.bpp = bpp;
  return r;
}

namespace {

template <class Fn>
double mean_of(const std::vector<ImageRecord>& records, Fn&& fn) {
  if (records.empty()) return 0.0;
  double s = 0.0;
  for (const auto& r : records) s += fn(r);
  return s / static_cast<double>(records.size());
}

}  // namespace

double MetricReport::mean_psnr() const {
  return mean_of(records, [](const ImageRecord& r) { return r.psnr_reported(); });
}
double MetricReport::mean_ssim() const {
  return mean_of(records, [](const ImageRecord& r) { return r.ssim; });
}
double MetricReport::mean_bpp() const {
  return mean_of(records, [](const ImageRecord& r) { return r.bpp; });
}

std::map<std::string, double> MetricReport::mean_perceptual() const {
  std::map<std::string, double> out;
  if (records.empty()) return out;
  for (const auto& [k, v] : records.front().perceptual) {
    out[k] = mean_of(records, [&](const ImageRecord& r) { return r.perceptual.at(k); });
  }
  return out;
}

std::string MetricReport::to_csv() const {
  std::ostringstream out;
  out << "# report: " << name << "\n";
  out << "# config_hash: " << config_hash << "\n";
  out << "# psnr: RGB, peak 255, infinite written as " << fmt(kPsnrSentinel) << " with psnr_infinite=1\n";
  out << "# ssim: BT.601 luma, gaussian 11x11 sigma 1.5, valid window\n";
  out << kReportHeader;
  std::vector<std::string> extra;
  if (!records.empty()) {
    for (const auto& [k, v] : records.front().perceptual) extra.push_back(k);
  }
  for (const auto& k : extra) out << "," << k;
  out << "\n";
  auto row = [&](const std::string& id, double p, bool inf, double s, double bpp, const std::map<std::string, double>& pc) {
    out << id << "," << fmt(p) << "," << (inf ? 1 : 0) << "," << fmt(s) << "," << fmt(bpp);
    for (const auto& k : extra) out << "," << fmt(pc.at(k));
    out << "\n";
  };
  for (const auto& r : records) row(r.id, r.psnr_reported(), r.psnr_infinite, r.ssim, r.bpp, r.perceptual);
  row("mean", mean_psnr(), false, mean_ssim(), mean_bpp(), mean_perceptual());
  return out.str();
}

void MetricReport::write_csv(const fs::path& path) const {
  const auto s = to_csv();
  write_file_atomic(path, s.data(), s.size());
}

std::vector<RDPoint> rd_sweep_jpeg(const std::vector<Image>& images, const std::vector<std::string>& ids,
                                   const std::vector<int64_t>& qualities) {
  if (images.size() != ids.size()) throw std::invalid_argument("rd_sweep_jpeg: ids and images differ in length");
  std::vector<RDPoint> points;
  for (size_t i = 0; i < images.size(); ++i) {
    for (auto q : qualities) {
      auto bytes = encode_jpeg(images[i], static_cast<int>(q));
      auto decoded = decode_jpeg(bytes);
      auto rec = measure(ids[i], images[i], decoded, bpp_of_bytes(bytes.size(), images[i].height(), images[i].width()));
      points.push_back({"jpeg", ids[i], q, rec.bpp, rec.psnr_db, rec.psnr_infinite, rec.ssim});
    }
  }
  return points;
}

std::string rd_csv(const std::vector<RDPoint>& points) {
  std::ostringstream out;
  out << kRdHeader << "\n";
  for (const auto& p : points) {
    out << p.codec << "," << p.image << "," << p.param << "," << fmt(p.bpp) << "," << fmt(p.psnr_db) << ","
        << (p.psnr_infinite ? 1 : 0) << "," << fmt(p.ssim) << "\n";
  }
  return out.str();
}

void write_rd_csv(const fs::path& path, const std::vector<RDPoint>& points) {
  const auto s = rd_csv(points);
  write_file_atomic(path, s.data(), s.size());
}

std::string rd_svg(const std::vector<RDPoint>& points) {
  constexpr double kW = 640, kH = 420, kL = 60, kR = 20, kT = 30, kB = 50;
  double bmax = 0.0, pmin = 1e9, pmax = -1e9;
  for (const auto& p : points) {
    bmax = std::max(bmax, p.bpp);
    pmin = std::min(pmin, p.psnr_db);
    pmax = std::max(pmax, p.psnr_db);
  }
  if (points.empty()) {
    bmax = 1.0;
    pmin = 0.0;
    pmax = 1.0;
  }
  bmax *= 1.05;
  pmin = std::floor(pmin - 1.0);
  pmax = std::ceil(pmax + 1.0);
  auto sx = [&](double b) { return kL + b / bmax * (kW - kL - kR); };
  auto sy = [&](double p) { return kH - kB - (p - pmin) / (pmax - pmin) * (kH - kT - kB); };

  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<line x1=\"" << kL << "\" y1=\"" << kH - kB << "\" x2=\"" << kW - kR << "\" y2=\"" << kH - kB << "\" stroke=\"black\"/>\n";
  out << "<line x1=\"" << kL << "\" y1=\"" << kT << "\" x2=\"" << kL << "\" y2=\"" << kH - kB << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 5; ++i) {
    const double b = bmax * i / 5.0;
    const double p = pmin + (pmax - pmin) * i / 5.0;
    out << "<text x=\"" << sx(b) << "\" y=\"" << kH - kB + 16 << "\" text-anchor=\"middle\">" << fmt(b).substr(0, 5) << "</text>\n";
    out << "<text x=\"" << kL - 6 << "\" y=\"" << sy(p) + 4 << "\" text-anchor=\"end\">" << fmt(p).substr(0, 5) << "</text>\n";
  }
  out << "<text x=\"" << (kL + kW - kR) / 2 << "\" y=\"" << kH - 12 << "\" text-anchor=\"middle\">bits per HR pixel</text>\n";
  out << "<text x=\"16\" y=\"" << (kT + kH - kB) / 2 << "\" transform=\"rotate(-90 16 " << (kT + kH - kB) / 2
      << ")\" text-anchor=\"middle\">PSNR (dB)</text>\n";

  std::map<int64_t, std::pair<double, double>> sums;
  std::map<int64_t, int> counts;
  for (const auto& p : points) {
    if (p.codec != "jpeg") continue;
    out << "<circle cx=\"" << sx(p.bpp) << "\" cy=\"" << sy(p.psnr_db) << "\" r=\"2\" fill=\"#bbbbbb\"/>\n";
    sums[p.param].first += p.bpp;
    sums[p.param].second += p.psnr_db;
    counts[p.param] += 1;
  }
  if (!sums.empty()) {
    out << "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\" points=\"";
    for (const auto& [q, s] : sums) out << sx(s.first / counts[q]) << "," << sy(s.second / counts[q]) << " ";
    out << "\"/>\n";
  }
  const char* colors[] = {"#d62728", "#2ca02c", "#9467bd", "#ff7f0e"};
  std::map<std::string, int> others;
  for (const auto& p : points) {
    if (p.codec == "jpeg") continue;
    auto it = others.emplace(p.codec, static_cast<int>(others.size())).first;
    out << "<rect x=\"" << sx(p.bpp) - 4 << "\" y=\"" << sy(p.psnr_db) - 4 << "\" width=\"8\" height=\"8\" fill=\""
        << colors[it->second % 4] << "\"/>\n";
  }
  double ly = kT + 4;
  out << "<line x1=\"" << kW - 170 << "\" y1=\"" << ly << "\" x2=\"" << kW - 150 << "\" y2=\"" << ly
      << "\" stroke=\"#1f77b4\" stroke-width=\"2\"/><text x=\"" << kW - 145 << "\" y=\"" << ly + 4 << "\">jpeg (mean)</text>\n";
  for (const auto& [name, idx] : others) {
    ly += 16;
    out << "<rect x=\"" << kW - 164 << "\" y=\"" << ly - 4 << "\" width=\"8\" height=\"8\" fill=\"" << colors[idx % 4]
        << "\"/><text x=\"" << kW - 145 << "\" y=\"" << ly + 4 << "\">" << name << "</text>\n";
  }
  out << "</svg>\n";
  return out.str();
}

void write_rd_svg(const fs::path& path, const std::vector<RDPoint>& points) {
  const auto s = rd_svg(points);
  write_file_atomic(path, s.data(), s.size());
}

RoundTrip roundtrip(Model& model, const Image& x, const UpOptions& options) {
  RoundTrip r{rescale_down(model, x), {}, {}};
  r.lr_png = encode_png(r.down.lr, {{"tadm", r.down.meta.to_json().dump()}});
  auto decoded = decode_png(r.lr_png);
  r.up = rescale_up(model, decoded.image, LrMetadata::from_json(nlohmann::json::parse(decoded.text.at("tadm"))), options);
  return r;
}

MetricReport evaluate_model(Model& model, const std::vector<Image>& images, const std::vector<std::string>& ids,
                            const std::string& name, bool with_perceptual) {
  MetricReport report;
  report.name = name;
  report.config_hash = model.cfg.hash();
  for (size_t i = 0; i < images.size(); ++i) {
    auto rt = roundtrip(model, images[i]);
    auto rec = measure(ids[i], images[i], rt.up.xhat, bpp_of_bytes(rt.lr_png.size(), images[i].height(), images[i].width()));
    if (with_perceptual) {
      torch::NoGradGuard no_grad;
      auto a = dequantize_tensor(quantize_tensor(rt.up.xhat.data())).unsqueeze(0);
      auto b = to_signed(images[i]).batched();
      rec.perceptual[model.perceptual.p1->name()] = model.perceptual.p1->distance(a, b).item<double>();
      rec.perceptual[model.perceptual.p2->name()] = model.perceptual.p2->distance(a, b).item<double>();
    }
    report.records.push_back(rec);
  }
  return report;
}

MetricReport evaluate_bicubic(const std::vector<Image>& images, const std::vector<std::string>& ids, int64_t factor) {
  MetricReport report;
  report.name = "bicubic x" + std::to_string(factor);
  for (size_t i = 0; i < images.size(); ++i) {
    const auto& x = images[i];
    auto lr = bicubic_resize(to_signed(x), {1, factor});
    auto lr8 = quantize_to_u8(lr);
    auto up = bicubic_resize(to_signed(lr8), {factor, 1});
    auto png = encode_png(lr8);
    report.records.push_back(measure(ids[i], x, up, bpp_of_bytes(png.size(), x.height(), x.width())));
  }
  return report;
}

AblationKind parse_ablation(const std::string& name) {
  if (name == "fixed-timestep") return AblationKind::kFixedTimestep;
  if (name == "no-pixel-guidance") return AblationKind::kNoPixelGuidance;
  if (name == "no-inn") return AblationKind::kNoInn;
  if (name == "patch-size") return AblationKind::kPatchSize;
  throw ConfigError("unknown ablation '" + name + "' (fixed-timestep, no-pixel-guidance, no-inn, patch-size)");
}

std::string to_string(AblationKind kind) {
  switch (kind) {
    case AblationKind::kFixedTimestep: return "fixed-timestep";
    case AblationKind::kNoPixelGuidance: return "no-pixel-guidance";
    case AblationKind::kNoInn: return "no-inn";
    case AblationKind::kPatchSize: return "patch-size";
  }
  return "?";
}

std::vector<MetricReport> run_ablation(AblationKind kind, const RunConfig& cfg, const AblationOptions& options) {
  auto base = load_model(options.model);
  if (base.cfg.factor != cfg.factor) throw ConfigError("ablation config factor does not match the model");
  auto data = make_train_data(base.cfg);
  const auto n = std::min<size_t>(static_cast<size_t>(cfg.bench_images), data.train.size());
  std::vector<Image> images(data.train.begin(), data.train.begin() + static_cast<std::ptrdiff_t>(n));
  std::vector<std::string> ids;
  for (size_t i = 0; i < n; ++i) ids.push_back("train_" + std::to_string(i));
  fs::create_directories(options.out_dir);

  std::vector<MetricReport> reports;
  reports.push_back(evaluate_model(base, images, ids, "full"));

  auto retrain = [&](RunConfig variant_cfg, const std::string& name, int first_stage) {
    auto variant = build_model(variant_cfg);
    auto backbone = read_archive(options.backbone);
    if (variant.toy_codec) backbone.load_module("codec.", *variant.toy_codec);
    if (variant.toy_unet) backbone.load_module("unet.", *variant.toy_unet);
    if (first_stage == 2) {
      auto stage1 = read_archive(options.backbone.parent_path() / "stage1.tadm");
      stage1.load_module("dfrm.", *variant.dfrm);
    }
    StageOptions so;
    so.out_dir = options.out_dir / name;
    so.log = options.log;
    for (int stage = first_stage; stage <= 2; ++stage) train_stage(variant, stage, data, so);
    return evaluate_model(variant, images, ids, name);
  };

  switch (kind) {
    case AblationKind::kFixedTimestep:
      for (auto t : cfg.ablation_fixed_timesteps) {
        auto c = cfg;
        c.fixed_timestep = t;
        reports.push_back(retrain(c, "fixed_t" + std::to_string(t), 2));
      }
      break;
    case AblationKind::kNoPixelGuidance: {
      auto c = cfg;
      c.pixel_guidance = false;
      reports.push_back(retrain(c, "no_pixel_guidance", 1));
      break;
    }
    case AblationKind::kNoInn: {
      auto c = cfg;
      c.use_inn = false;
      reports.push_back(retrain(c, "no_inn", 1));
      break;
    }
    case AblationKind::kPatchSize:
      for (auto p : cfg.ablation_patch_sizes) {
        base.cfg.patch_size = p;
        base.cfg.stride = std::max<int64_t>(1, p * 2 / 3);
        reports.push_back(evaluate_model(base, images, ids, "patch_" + std::to_string(p)));
      }
      break;
  }
  for (auto& r : reports) r.write_csv(options.out_dir / (to_string(kind) + "_" + r.name + ".csv"));
  return reports;
}

}  // namespace tadm
