#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "tadm/image.hpp"
#include "tadm/pipeline.hpp"

namespace tadm {

inline constexpr double kPsnrSentinel = 99.0;

// Both images are compared on the 8-bit grid (kSigned inputs are quantized first).
// PSNR over all RGB samples with peak 255; +inf for identical images.
double psnr(const Image& a, const Image& b);
// SSIM on BT.601 full-range luma, 11x11 Gaussian window (sigma 1.5), valid region,
// C1 = (0.01 * 255)^2, C2 = (0.03 * 255)^2.
double ssim(const Image& a, const Image& b);
// 0.299 R + 0.587 G + 0.114 B on the 0..255 scale, float64 [H, W].
torch::Tensor luma(const Image& img);
// Levels in 0..255 as float64 [3, H, W].
torch::Tensor byte_levels(const Image& img);

double bpp_of_bytes(size_t bytes, int64_t hr_height, int64_t hr_width);
double bpp_of_file(const std::filesystem::path& path, int64_t hr_height, int64_t hr_width);

struct ImageRecord {
  std::string id;
  double psnr_db = 0;
  bool psnr_infinite = false;
  double ssim = 0;
  double bpp = 0;
  std::map<std::string, double> perceptual;

  double psnr_reported() const { return psnr_infinite ? kPsnrSentinel : psnr_db; }
};

ImageRecord measure(const std::string& id, const Image& reference, const Image& test, double bpp);

struct MetricReport {
  std::string name;
  std::string config_hash;
  std::vector<ImageRecord> records;

  // Means over records; infinite PSNR enters as the sentinel.
  double mean_psnr() const;
  double mean_ssim() const;
  double mean_bpp() const;
  std::map<std::string, double> mean_perceptual() const;
  std::string to_csv() const;
  void write_csv(const std::filesystem::path& path) const;
};

// Column header of MetricReport CSVs (before any perceptual columns).
inline constexpr const char* kReportHeader = "id,psnr_db,psnr_infinite,ssim,bpp";

struct RDPoint {
  std::string codec;  // "jpeg", "tadm", "bicubic"
  std::string image;
  int64_t param = 0;  // JPEG quality, or the rescaling factor
  double bpp = 0;
  double psnr_db = 0;
  bool psnr_infinite = false;
  double ssim = 0;
};

inline constexpr const char* kRdHeader = "codec,image,param,bpp,psnr_db,psnr_infinite,ssim";

// JPEG-encodes every image at every quality, decodes and measures.
std::vector<RDPoint> rd_sweep_jpeg(const std::vector<Image>& images, const std::vector<std::string>& ids,
                                   const std::vector<int64_t>& qualities);
std::string rd_csv(const std::vector<RDPoint>& points);
void write_rd_csv(const std::filesystem::path& path, const std::vector<RDPoint>& points);
// PSNR-vs-bpp line plot: mean JPEG curve, per-image JPEG points, and every non-JPEG point.
std::string rd_svg(const std::vector<RDPoint>& points);
void write_rd_svg(const std::filesystem::path& path, const std::vector<RDPoint>& points);

struct RoundTrip {
  DownResult down;
  UpResult up;
  std::vector<uint8_t> lr_png;
};

// down -> PNG bytes -> decode -> up, exactly as the files on disk would go.
RoundTrip roundtrip(Model& model, const Image& x, const UpOptions& options = {});

// Model round trips over `images`; bpp counts the LR PNG bytes over HR pixels.
MetricReport evaluate_model(Model& model, const std::vector<Image>& images, const std::vector<std::string>& ids,
                            const std::string& name, bool with_perceptual = true);
// Bicubic down by the factor, 8-bit quantized, bicubic up.
MetricReport evaluate_bicubic(const std::vector<Image>& images, const std::vector<std::string>& ids, int64_t factor);

enum class AblationKind { kFixedTimestep, kNoPixelGuidance, kNoInn, kPatchSize };
AblationKind parse_ablation(const std::string& name);
std::string to_string(AblationKind kind);

struct AblationOptions {
  std::filesystem::path model;     // trained model (stage 3 or later)
  std::filesystem::path backbone;  // backbone checkpoint for variants that retrain
  std::filesystem::path out_dir;
  Logger log;
};

// Trains (where needed) and evaluates the variants of one ablation; returns one report per variant,
// the unmodified model first.
std::vector<MetricReport> run_ablation(AblationKind kind, const RunConfig& cfg, const AblationOptions& options);

}  // namespace tadm
