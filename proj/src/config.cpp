#include "tadm/config.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "tadm/archive.hpp"

namespace tadm {

using nlohmann::json;

namespace {

template <class Config, class Fn>
void visit_fields(Config& c, Fn&& f) {
  f("factor", c.factor, "downscaling factor N per axis (8, 16 or 32)");
  f("patch_size", c.patch_size, "tile size p in latent cells");
  f("stride", c.stride, "tile stride s in latent cells (1 <= s <= p)");
  f("seed", c.seed, "base seed for every random stream");
  f("schedule.T", c.T, "number of diffusion steps");
  f("schedule.beta_min", c.beta_min, "first beta of the linear schedule");
  f("schedule.beta_max", c.beta_max, "last beta of the linear schedule");
  f("scheduler.t0", c.t0, "fixed pre-set time step of the hybrid scheduler");
  f("scheduler.fixed_timestep", c.fixed_timestep, "if >= 0, bypass TPM and learned scheduler with this t");
  f("loss.lambda_rec", c.lambda_rec, "weight of the dual-chain reconstruction loss");
  f("loss.lambda_gui", c.lambda_gui, "weight of the LR guidance loss");
  f("loss.lambda_pec", c.lambda_pec, "weight of the perceptual terms in the enhancement loss");
  f("lr.codec", c.lr_codec, "learning rate of the toy codec pretraining");
  f("lr.denoiser", c.lr_denoiser, "learning rate of the toy denoiser pretraining");
  f("lr.stage1", c.lr_stage1, "stage-1 learning rate (DFRM)");
  f("lr.stage2", c.lr_stage2, "stage-2 learning rate (adapters, TPM, scheduler); stage 3 uses 0.1x");
  f("steps.codec", c.steps_codec, "toy codec pretraining steps");
  f("steps.denoiser", c.steps_denoiser, "toy denoiser pretraining steps");
  f("steps.stage1", c.steps_stage1, "stage-1 steps");
  f("steps.stage2", c.steps_stage2, "stage-2 steps");
  f("steps.stage3", c.steps_stage3, "stage-3 steps");
  f("steps.checkpoint_every", c.checkpoint_every, "write a resumable checkpoint every k steps (0 = only at the end)");
  f("batch.codec", c.batch_codec, "toy codec batch size");
  f("batch.denoiser", c.batch_denoiser, "toy denoiser batch size");
  f("batch.stage", c.batch_stage, "batch size of stages 1-3");
  f("crop.codec", c.crop_codec, "toy codec crop size in pixels");
  f("crop.denoiser", c.crop_denoiser, "toy denoiser crop size in latent cells");
  f("crop.stage", c.crop_stage, "stage 1-3 crop size in pixels (multiple of N)");
  f("model.dfrm_channels", c.dfrm_channels, "DFRM encoder/decoder width");
  f("model.inn_blocks", c.inn_blocks, "number of affine coupling blocks K");
  f("model.inn_hidden", c.inn_hidden, "coupling subnet width");
  f("model.inn_clamp", c.inn_clamp, "bound alpha of the coupling log-scale alpha*tanh(.)");
  f("model.pixel_guidance", c.pixel_guidance, "inject bicubic(x) into the DFRM encoder");
  f("model.use_inn", c.use_inn, "use the invertible converter (false: identity)");
  f("model.lora_rank", c.lora_rank, "rank of the adapter deltas (denoiser and codec decoder)");
  f("model.unet_channels", c.unet_channels, "toy denoiser width");
  f("model.tpm_channels", c.tpm_channels, "time-step predictor width");
  f("model.scheduler_channels", c.scheduler_channels, "learned scheduler width");
  f("corpus.count", c.corpus_count, "number of synthesized training images");
  f("corpus.size", c.corpus_size, "side length of synthesized images");
  f("corpus.seed", c.corpus_seed, "seed of the synthesized corpus");
  f("corpus.dir", c.corpus_dir, "directory of PNG training images (empty: synthesize)");
  f("corpus.validation_count", c.validation_count, "held-out synthesized images for validation");
  f("backend.codec", c.codec_backend, "codec backend: toy | torchscript");
  f("backend.codec_weights", c.codec_weights, "TorchScript codec file");
  f("backend.codec_scale", c.codec_scale, "latent scale of the external codec");
  f("backend.codec_shift", c.codec_shift, "latent shift of the external codec");
  f("backend.denoiser", c.denoiser_backend, "denoiser backend: toy | zero | torchscript");
  f("backend.denoiser_weights", c.denoiser_weights, "TorchScript denoiser file");
  f("ablation.patch_sizes", c.ablation_patch_sizes, "patch sizes swept by the patch-size ablation");
  f("ablation.fixed_timesteps", c.ablation_fixed_timesteps, "time steps of the fixed-timestep ablation");
  f("bench.jpeg_qualities", c.jpeg_qualities, "JPEG quality levels of the R-D sweep");
  f("bench.images", c.bench_images, "number of images in bench runs");
}

json::json_pointer pointer_of(const std::string& dotted) {
  std::string p = "/";
  for (char ch : dotted) p += ch == '.' ? '/' : ch;
  return json::json_pointer(p);
}

void collect_leaves(const json& node, const std::string& prefix, std::vector<std::string>& out) {
  for (const auto& [k, v] : node.items()) {
    const auto key = prefix.empty() ? k : prefix + "." + k;
    if (v.is_object()) {
      collect_leaves(v, key, out);
    } else {
      out.push_back(key);
    }
  }
}

bool same_kind(const json& a, const json& b) {
  if (a.is_number() && b.is_number()) return !a.is_number_integer() || b.is_number_integer();
  return a.type() == b.type();
}

}  // namespace

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> out;
    RunConfig d;
    visit_fields(d, [&](const char* key, const auto& field, const char* doc) { out.push_back({key, json(field), doc}); });
    return out;
  }();
  return keys;
}

json default_config_tree() { return RunConfig{}.to_json(); }

json RunConfig::to_json() const {
  json tree = json::object();
  visit_fields(*this, [&](const char* key, const auto& field, const char*) { tree[pointer_of(key)] = field; });
  return tree;
}

RunConfig RunConfig::from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  std::map<std::string, json> known;
  for (const auto& k : config_keys()) known.emplace(k.key, k.default_value);
  std::vector<std::string> leaves;
  collect_leaves(j, "", leaves);
  for (const auto& leaf : leaves) {
    auto it = known.find(leaf);
    if (it == known.end()) throw ConfigError("unknown config key '" + leaf + "'");
    const auto& value = j.at(pointer_of(leaf));
    if (!same_kind(it->second, value)) throw ConfigError("config key '" + leaf + "' has the wrong type");
    if (value.is_array()) {
      for (const auto& e : value) {
        if (!e.is_number_integer()) throw ConfigError("config key '" + leaf + "' expects a list of integers");
      }
    }
  }
  RunConfig c;
  visit_fields(c, [&](const char* key, auto& field, const char*) {
    const auto ptr = pointer_of(key);
    if (j.contains(ptr)) j.at(ptr).get_to(field);
  });
  c.validate();
  return c;
}

void RunConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("invalid config: " + what); };
  if (factor != 8 && factor != 16 && factor != 32) fail("factor must be 8, 16 or 32");
  if (!(stride >= 1 && patch_size >= stride)) fail("need patch_size >= stride >= 1");
  if (T < 2) fail("schedule.T must be >= 2");
  if (!(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0)) fail("need 0 < beta_min <= beta_max < 1");
  if (t0 < 0 || t0 >= T) fail("scheduler.t0 must be in [0, T)");
  if (fixed_timestep >= T) fail("scheduler.fixed_timestep must be < T");
  for (double w : {lambda_rec, lambda_gui, lambda_pec}) {
    if (!std::isfinite(w) || w < 0.0) fail("loss weights must be finite and non-negative");
  }
  if (lambda_rec == 0.0 && lambda_gui == 0.0) fail("lambda_rec and lambda_gui cannot both be zero");
  for (double lr : {lr_codec, lr_denoiser, lr_stage1, lr_stage2}) {
    if (!std::isfinite(lr) || lr <= 0.0) fail("learning rates must be positive");
  }
  for (int64_t s : {steps_codec, steps_denoiser, steps_stage1, steps_stage2, steps_stage3, checkpoint_every}) {
    if (s < 0) fail("step counts must be non-negative");
  }
  for (int64_t b : {batch_codec, batch_denoiser, batch_stage, crop_denoiser}) {
    if (b < 1) fail("batch and crop sizes must be positive");
  }
  if (crop_codec < 8 || crop_codec % 8 != 0) fail("crop.codec must be a positive multiple of 8");
  if (crop_stage < factor || crop_stage % factor != 0) fail("crop.stage must be a positive multiple of the factor");
  if (corpus_count < 1 || corpus_size < crop_stage || corpus_size % 32 != 0) {
    fail("corpus.size must be a multiple of 32 and at least crop.stage");
  }
  if (validation_count < 0) fail("corpus.validation_count must be non-negative");
  if (inn_blocks < 1 || inn_hidden < 1 || !(inn_clamp > 0.0)) fail("invalid INN settings");
  if (lora_rank < 0) fail("model.lora_rank must be non-negative");
  if (codec_backend != "toy" && codec_backend != "torchscript") fail("backend.codec must be toy or torchscript");
  if (denoiser_backend != "toy" && denoiser_backend != "zero" && denoiser_backend != "torchscript") {
    fail("backend.denoiser must be toy, zero or torchscript");
  }
  if (codec_backend == "torchscript" && (codec_weights.empty() || codec_scale == 0.0)) {
    fail("torchscript codec needs backend.codec_weights and a non-zero scale");
  }
  if (denoiser_backend == "torchscript" && denoiser_weights.empty()) fail("torchscript denoiser needs weights");
  for (auto p : ablation_patch_sizes) {
    if (p < 1) fail("ablation.patch_sizes must be positive");
  }
  for (auto t : ablation_fixed_timesteps) {
    if (t < 0 || t >= T) fail("ablation.fixed_timesteps must be in [0, T)");
  }
  for (auto q : jpeg_qualities) {
    if (q < 1 || q > 100) fail("bench.jpeg_qualities must be in 1..100");
  }
  if (bench_images < 1) fail("bench.images must be positive");
}

std::string RunConfig::hash() const { return sha256_hex(to_json().dump()); }

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return RunConfig::from_json(j);
}

void apply_override(json& tree, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override must be key=value: '" + assignment + "'");
  const auto key = assignment.substr(0, eq);
  const auto text = assignment.substr(eq + 1);
  bool known = false;
  for (const auto& k : config_keys()) known = known || k.key == key;
  if (!known) throw ConfigError("unknown config key '" + key + "'");
  json value;
  try {
    value = json::parse(text);
  } catch (const json::exception&) {
    value = text;
  }
  tree[pointer_of(key)] = value;
}

std::string describe_config_keys() {
  std::ostringstream out;
  for (const auto& k : config_keys()) out << "  " << k.key << " = " << k.default_value.dump() << "\n      " << k.doc << "\n";
  return out.str();
}

}  // namespace tadm
