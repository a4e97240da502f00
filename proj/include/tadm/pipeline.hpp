#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "tadm/archive.hpp"
#include "tadm/codec.hpp"
#include "tadm/config.hpp"
#include "tadm/denoiser.hpp"
#include "tadm/dfrm.hpp"
#include "tadm/diffusion.hpp"
#include "tadm/image.hpp"
#include "tadm/perceptual.hpp"
#include "tadm/tiling.hpp"
#include "tadm/timestep.hpp"

namespace tadm {

using Logger = std::function<void(const std::string&)>;

// git-describe style version of the library build.
const char* library_version();

// Every network of the system plus the configuration it was built from.
struct Model {
  RunConfig cfg;
  NoiseSchedule sched;
  ToyCodec toy_codec{nullptr};
  std::shared_ptr<CodecBackend> codec;
  ToyUNet toy_unet{nullptr};
  std::shared_ptr<DenoiserBackend> denoiser;
  Dfrm dfrm{nullptr};
  TimestepPredictor tpm{nullptr};
  HybridScheduler scheduler{nullptr};
  PerceptualPair perceptual;
  nlohmann::json meta = nlohmann::json::object();

  // Trainable tensors by qualified name ("codec.", "unet.", "dfrm.", "tpm.", "scheduler.").
  std::map<std::string, torch::Tensor> state() const;
  std::string hash() const;
  void set_eval();
};

// Freshly initialized model; parameter init is seeded from cfg.seed.
Model build_model(const RunConfig& cfg);
TensorArchive model_archive(const Model& model);
void load_model_state(Model& model, const TensorArchive& archive);
void save_model(const std::filesystem::path& path, const Model& model);
// Rebuilds the model from the config stored in the archive.
Model load_model(const std::filesystem::path& path);

// ---- inference ----

struct LrMetadata {
  int64_t factor = 0;
  int64_t height = 0;  // original HR size
  int64_t width = 0;
  std::string model_hash;
  std::string version;

  nlohmann::json to_json() const;
  static LrMetadata from_json(const nlohmann::json& j);
  bool operator==(const LrMetadata&) const = default;
};

struct DownResult {
  Image lr;  // kByte
  LrMetadata meta;
};

// encode -> DFRM downscale -> quantize.
DownResult rescale_down(Model& model, const Image& x);

// PNG with the metadata in a tEXt chunk ("tadm") and a mirrored JSON sidecar
// (same path, extension replaced by .json).
void write_lr(const std::filesystem::path& path, const DownResult& lr);
// Reads metadata from the PNG chunk, falling back to the sidecar.
DownResult read_lr(const std::filesystem::path& path);

struct TimeStepMap {
  PatchGrid grid;
  std::vector<double> t;  // one per patch, grid order

  void write_csv(const std::filesystem::path& path) const;
  // Grayscale heat map at latent resolution: blend-weighted mean of t, scaled by 255 / (T-1).
  Image heatmap(int64_t T) const;
};

struct UpOptions {
  bool tiled = true;
  bool trace = false;
};

struct UpResult {
  Image xhat{torch::zeros({3, 1, 1}), ValueRange::kSigned};
  torch::Tensor zhat;
  torch::Tensor z0;
  TimeStepMap map;
  std::vector<std::string> trace;
};

// DFRM upscale -> split into patches -> per patch {TPM, eps_theta, scheduler} -> merge -> decode.
// Raises ConfigError if the metadata does not match the model or the LR size.
UpResult rescale_up(Model& model, const Image& y, const LrMetadata& meta, const UpOptions& options = {});

// Enhancement of a batch of latents [B,4,h,w] honoring cfg.fixed_timestep.
EnhanceResult enhance_latents(Model& model, const torch::Tensor& zhat);

// ---- training ----

struct TrainData {
  std::vector<Image> train;
  std::vector<Image> val;
  torch::Tensor x;      // [N,3,H,W] signed
  torch::Tensor x_val;  // [M,3,H,W] signed
  std::string corpus_hash;
};

TrainData make_train_data(const RunConfig& cfg);

struct StageOptions {
  std::filesystem::path out_dir;
  std::optional<std::filesystem::path> resume;
  int64_t stop_after = -1;  // >= 0: stop after this many steps of this run (simulated interruption)
  Logger log;
};

struct StageResult {
  int stage = 0;
  int64_t step = 0;          // steps completed
  bool complete = false;
  double val_loss_first = 0;  // stage validation loss at step 0
  double val_loss_last = 0;
  std::vector<double> losses;  // per step of this run
  std::filesystem::path checkpoint;
};

// Codec pretraining + denoiser pretraining on codec latents. Writes backbone.tadm.
void train_backbone(Model& model, const TrainData& data, const StageOptions& options);
// Stage 1: DFRM only, loss_res. Stage 2: DFRM frozen; adapters, TPM and scheduler with loss_enh.
// Stage 3: everything trainable, loss_res (straight-through quantized chain) + loss_enh at 0.1x the stage-2 rate.
StageResult train_stage(Model& model, int stage, const TrainData& data, const StageOptions& options);

// Stage validation losses on held-out images (no grad).
double validate_stage(Model& model, int stage, const torch::Tensor& x);

// Names and tensors trained in a stage.
std::vector<std::pair<std::string, torch::Tensor>> stage_parameters(Model& model, int stage);

}  // namespace tadm
