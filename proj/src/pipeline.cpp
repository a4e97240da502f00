#include "tadm/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

#include "tadm/corpus.hpp"
#include "tadm/image_io.hpp"
#include "tadm/rng.hpp"

#ifndef TADM_VERSION
#define TADM_VERSION "unknown"
#endif

namespace tadm {

namespace fs = std::filesystem;
using nlohmann::json;

const char* library_version() { return TADM_VERSION; }

namespace {

constexpr int64_t kChunk = 8;

void log_to(const Logger& log, const std::string& message) {
  if (log) log(message);
}

// Applies `fn` to slices of the leading dim and concatenates the results.
template <class Fn>
torch::Tensor chunked(const torch::Tensor& x, Fn&& fn) {
  std::vector<torch::Tensor> out;
  for (int64_t i = 0; i < x.size(0); i += kChunk) out.push_back(fn(x.slice(0, i, std::min(i + kChunk, x.size(0)))));
  return torch::cat(out);
}

torch::Tensor encode_all(Model& model, const torch::Tensor& x) {
  torch::NoGradGuard no_grad;
  return chunked(x, [&](const torch::Tensor& c) { return model.codec->encode(c); });
}

// Inference path of the DFRM: LR pixels are quantized before upscaling.
torch::Tensor rescaled_latents(Model& model, const torch::Tensor& x, const torch::Tensor& z) {
  torch::NoGradGuard no_grad;
  std::vector<torch::Tensor> out;
  for (int64_t i = 0; i < x.size(0); i += kChunk) {
    const auto j = std::min(i + kChunk, x.size(0));
    auto u = model.dfrm->lr_pixels(x.slice(0, i, j), z.slice(0, i, j));
    out.push_back(model.dfrm->upscale_pixels(dequantize_tensor(quantize_tensor(u))));
  }
  return torch::cat(out);
}

void freeze_all(Model& model) {
  if (model.toy_codec) set_requires_grad(*model.toy_codec, false);
  if (model.toy_unet) set_requires_grad(*model.toy_unet, false);
  set_requires_grad(*model.dfrm, false);
  set_requires_grad(*model.tpm, false);
  set_requires_grad(*model.scheduler, false);
}

void require(bool ok, const std::string& message) {
  if (!ok) throw ConfigError(message);
}

}  // namespace

std::map<std::string, torch::Tensor> Model::state() const {
  TensorArchive a;
  if (toy_codec) a.add_module("codec.", *toy_codec);
  if (toy_unet) a.add_module("unet.", *toy_unet);
  a.add_module("dfrm.", *dfrm);
  a.add_module("tpm.", *tpm);
  a.add_module("scheduler.", *scheduler);
  return a.tensors;
}

std::string Model::hash() const { return tensors_checksum(state()); }

void Model::set_eval() {
  if (toy_codec) toy_codec->eval();
  if (toy_unet) toy_unet->eval();
  dfrm->eval();
  tpm->eval();
  scheduler->eval();
}

Model build_model(const RunConfig& cfg) {
  cfg.validate();
  Model m;
  m.cfg = cfg;
  m.sched = make_schedule(cfg.T, cfg.beta_min, cfg.beta_max);
  torch::manual_seed(derive_seed(cfg.seed, {0x1417}));
  if (cfg.codec_backend == "toy") {
    ToyCodecOptions co;
    co.lora_rank = cfg.lora_rank;
    m.toy_codec = ToyCodec(co);
    m.codec = m.toy_codec.ptr();
  } else {
    m.codec = std::make_shared<TorchScriptCodec>(cfg.codec_weights, cfg.codec_scale, cfg.codec_shift);
  }
  if (cfg.denoiser_backend == "toy") {
    ToyUNetOptions uo;
    uo.channels = cfg.unet_channels;
    uo.lora_rank = cfg.lora_rank;
    m.toy_unet = ToyUNet(uo);
    m.denoiser = m.toy_unet.ptr();
  } else if (cfg.denoiser_backend == "zero") {
    m.denoiser = std::make_shared<ZeroDenoiser>();
  } else {
    m.denoiser = std::make_shared<TorchScriptDenoiser>(cfg.denoiser_weights);
  }
  DfrmOptions d;
  d.factor = cfg.factor;
  d.channels = cfg.dfrm_channels;
  d.pixel_guidance = cfg.pixel_guidance;
  d.use_inn = cfg.use_inn;
  d.inn = {cfg.inn_blocks, cfg.inn_hidden, cfg.inn_clamp};
  m.dfrm = Dfrm(d);
  TimestepPredictorOptions to;
  to.channels = cfg.tpm_channels;
  to.T = cfg.T;
  m.tpm = TimestepPredictor(to);
  HybridSchedulerOptions so;
  so.t0 = cfg.t0;
  so.channels = cfg.scheduler_channels;
  m.scheduler = HybridScheduler(m.sched, so);
  m.set_eval();
  return m;
}

TensorArchive model_archive(const Model& model) {
  TensorArchive a;
  a.tensors = model.state();
  a.meta = model.meta;
  a.meta["config"] = model.cfg.to_json();
  a.meta["model_hash"] = tensors_checksum(a.tensors);
  a.meta["version"] = library_version();
  return a;
}

void load_model_state(Model& model, const TensorArchive& archive) {
  if (model.toy_codec) archive.load_module("codec.", *model.toy_codec);
  if (model.toy_unet) archive.load_module("unet.", *model.toy_unet);
  archive.load_module("dfrm.", *model.dfrm);
  archive.load_module("tpm.", *model.tpm);
  archive.load_module("scheduler.", *model.scheduler);
}

void save_model(const fs::path& path, const Model& model) { write_archive(path, model_archive(model)); }

Model load_model(const fs::path& path) {
  auto archive = read_archive(path);
  if (!archive.meta.contains("config")) throw ConfigError("archive " + path.string() + " carries no config");
  Model m = build_model(RunConfig::from_json(archive.meta["config"]));
  load_model_state(m, archive);
  m.meta = archive.meta;
  m.meta.erase("config");
  return m;
}

json LrMetadata::to_json() const {
  return {{"factor", factor}, {"height", height}, {"width", width}, {"model_hash", model_hash}, {"version", version}};
}

LrMetadata LrMetadata::from_json(const json& j) {
  LrMetadata m;
  try {
    m.factor = j.at("factor").get<int64_t>();
    m.height = j.at("height").get<int64_t>();
    m.width = j.at("width").get<int64_t>();
    m.model_hash = j.at("model_hash").get<std::string>();
    m.version = j.value("version", "");
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed LR metadata: ") + e.what());
  }
  return m;
}

DownResult rescale_down(Model& model, const Image& x) {
  const auto n = model.cfg.factor;
  if (x.height() % n != 0 || x.width() % n != 0) {
    throw std::invalid_argument("image " + std::to_string(x.height()) + "x" + std::to_string(x.width()) +
                                " is not divisible by the factor " + std::to_string(n));
  }
  auto z = encode(*model.codec, x);
  auto [y, zlr] = downscale(model.dfrm, x, z);
  DownResult r{y, {}};
  r.meta.factor = n;
  r.meta.height = x.height();
  r.meta.width = x.width();
  r.meta.model_hash = model.hash();
  r.meta.version = library_version();
  return r;
}

void write_lr(const fs::path& path, const DownResult& lr) {
  const auto text = lr.meta.to_json().dump();
  auto bytes = encode_png(lr.lr, {{"tadm", text}});
  write_file_atomic(path, bytes.data(), bytes.size());
  auto sidecar = fs::path(path).replace_extension(".json");
  const auto pretty = lr.meta.to_json().dump(2) + "\n";
  write_file_atomic(sidecar, pretty.data(), pretty.size());
}

DownResult read_lr(const fs::path& path) {
  auto png = read_png(path);
  json j;
  if (auto it = png.text.find("tadm"); it != png.text.end()) {
    j = json::parse(it->second, nullptr, false);
  } else {
    auto sidecar = fs::path(path).replace_extension(".json");
    std::ifstream in(sidecar);
    if (!in) throw ConfigError("no rescaling metadata in " + path.string() + " and no sidecar");
    j = json::parse(in, nullptr, false);
  }
  if (j.is_discarded()) throw ConfigError("unreadable rescaling metadata for " + path.string());
  return {png.image, LrMetadata::from_json(j)};
}

void TimeStepMap::write_csv(const fs::path& path) const {
  std::ostringstream out;
  out << "row,col,t\n";
  char line[96];
  for (size_t i = 0; i < grid.offsets.size(); ++i) {
    std::snprintf(line, sizeof(line), "%lld,%lld,%.6f\n", static_cast<long long>(grid.offsets[i].row),
                  static_cast<long long>(grid.offsets[i].col), t[i]);
    out << line;
  }
  const auto s = out.str();
  write_file_atomic(path, s.data(), s.size());
}

Image TimeStepMap::heatmap(int64_t T) const {
  auto weights = blend_weights(grid);
  auto acc = torch::zeros({grid.height, grid.width}, torch::kFloat64);
  using torch::indexing::Slice;
  for (size_t i = 0; i < grid.offsets.size(); ++i) {
    const auto& o = grid.offsets[i];
    acc.index({Slice(o.row, o.row + grid.patch_height()), Slice(o.col, o.col + grid.patch_width())}) +=
        weights[i] * t[i];
  }
  auto levels = (acc / static_cast<double>(T - 1) * 255.0).add(0.5).floor().clamp(0.0, 255.0).to(torch::kFloat32);
  return Image(levels.unsqueeze(0).repeat({3, 1, 1}).contiguous(), ValueRange::kByte);
}

EnhanceResult enhance_latents(Model& model, const torch::Tensor& zhat) {
  std::optional<int64_t> fixed;
  if (model.cfg.fixed_timestep >= 0) fixed = model.cfg.fixed_timestep;
  return enhance(zhat, *model.denoiser, model.tpm, model.scheduler, fixed);
}

UpResult rescale_up(Model& model, const Image& y, const LrMetadata& meta, const UpOptions& options) {
  const auto n = model.cfg.factor;
  require(meta.factor == n, "LR factor " + std::to_string(meta.factor) + " does not match model factor " +
                                std::to_string(n));
  require(meta.model_hash == model.hash(), "LR image was produced by a different model");
  require(y.height() * n == meta.height && y.width() * n == meta.width, "LR size does not match its metadata");
  torch::NoGradGuard no_grad;
  UpResult r;
  auto note = [&](std::string s) {
    if (options.trace) r.trace.push_back(std::move(s));
  };
  r.zhat = model.dfrm->upscale_pixels(to_signed(y).batched());
  note("dfrm_upscale");
  const auto h = r.zhat.size(2);
  const auto w = r.zhat.size(3);
  std::vector<torch::Tensor> patches;
  if (options.tiled) {
    auto split = to_patches(r.zhat, model.cfg.patch_size, model.cfg.stride);
    patches = std::move(split.first);
    r.map.grid = std::move(split.second);
  } else {
    const auto side = std::max(h, w);
    r.map.grid = make_patch_grid(h, w, side, side);
    patches = {r.zhat};
  }
  note("split " + std::to_string(patches.size()));
  std::vector<torch::Tensor> outputs;
  for (size_t i = 0; i < patches.size(); ++i) {
    const auto& zi = patches[i];
    const auto id = std::to_string(i);
    torch::Tensor t;
    torch::Tensor z0;
    if (model.cfg.fixed_timestep >= 0) {
      t = torch::full({zi.size(0)}, static_cast<double>(model.cfg.fixed_timestep), zi.options());
      note("tpm_bypass " + id);
      auto eps = model.denoiser->predict_noise(zi, t);
      note("eps " + id);
      z0 = denoise_fixed(zi, eps, model.cfg.fixed_timestep, model.sched);
      note("scheduler " + id);
    } else {
      t = model.tpm->forward(zi);
      note("tpm " + id);
      auto eps = model.denoiser->predict_noise(zi, t);
      note("eps " + id);
      z0 = model.scheduler->forward(zi, eps, t);
      note("scheduler " + id);
    }
    r.map.t.push_back(t.item<double>());
    outputs.push_back(z0);
  }
  r.z0 = options.tiled ? merge_patches(outputs, r.map.grid) : outputs.front();
  note("merge");
  r.xhat = decode(*model.codec, Latent(r.z0.squeeze(0)));
  note("decode");
  return r;
}

TrainData make_train_data(const RunConfig& cfg) {
  TrainData d;
  if (!cfg.corpus_dir.empty()) {
    d.train = load_corpus_dir(cfg.corpus_dir);
  } else {
    d.train = synthesize_corpus({cfg.corpus_count, cfg.corpus_size, cfg.corpus_size, cfg.corpus_seed});
  }
  if (cfg.validation_count > 0) {
    const auto h = d.train.front().height();
    const auto w = d.train.front().width();
    d.val = synthesize_corpus({cfg.validation_count, h, w, derive_seed(cfg.corpus_seed, {0x7A11})});
  } else {
    d.val.assign(d.train.begin(), d.train.begin() + std::min<size_t>(4, d.train.size()));
  }
  d.x = stack_signed(d.train);
  d.x_val = stack_signed(d.val);
  d.corpus_hash = corpus_hash(d.train);
  return d;
}

void train_backbone(Model& model, const TrainData& data, const StageOptions& options) {
  const auto& cfg = model.cfg;
  if (model.toy_codec) {
    CodecTrainOptions co;
    co.steps = cfg.steps_codec;
    co.batch_size = cfg.batch_codec;
    co.crop_size = cfg.crop_codec;
    co.lr = cfg.lr_codec;
    co.seed = derive_seed(cfg.seed, {0xB0});
    train_toy_codec(model.toy_codec, data.train, co, [&](int64_t step, double loss) {
      if (step % 100 == 0 || step + 1 == co.steps) {
        log_to(options.log, "codec step " + std::to_string(step) + " loss " + std::to_string(loss));
      }
    });
  }
  if (model.toy_unet) {
    auto latents = encode_all(model, data.x);
    DenoiserTrainOptions uo;
    uo.steps = cfg.steps_denoiser;
    uo.batch_size = cfg.batch_denoiser;
    uo.crop = cfg.crop_denoiser;
    uo.lr = cfg.lr_denoiser;
    uo.seed = derive_seed(cfg.seed, {0xB1});
    pretrain_denoiser(model.toy_unet, latents, model.sched, uo, [&](int64_t step, double loss) {
      if (step % 100 == 0 || step + 1 == uo.steps) {
        log_to(options.log, "denoiser step " + std::to_string(step) + " loss " + std::to_string(loss));
      }
    });
  }
  model.set_eval();
  model.meta["stage"] = 0;
  model.meta["complete"] = true;
  model.meta["corpus_hash"] = data.corpus_hash;
  model.meta["codec"] = {{"kind", cfg.codec_backend},
                         {"latent_channels", kLatentChannels},
                         {"reduction", kLatentReduction},
                         {"corpus_hash", data.corpus_hash}};
  if (model.toy_codec) model.meta["codec"]["latent_scale"] = model.toy_codec->latent_scale();
  if (!options.out_dir.empty()) {
    fs::create_directories(options.out_dir);
    save_model(options.out_dir / "backbone.tadm", model);
  }
}

std::vector<std::pair<std::string, torch::Tensor>> stage_parameters(Model& model, int stage) {
  std::vector<std::pair<std::string, torch::Tensor>> out;
  auto append = [&](std::vector<std::pair<std::string, torch::Tensor>> v) {
    out.insert(out.end(), v.begin(), v.end());
  };
  if (stage == 1 || stage == 3) append(all_parameters(*model.dfrm, "dfrm."));
  if (stage == 2 || stage == 3) {
    if (model.toy_unet) append(adapter_parameters(*model.toy_unet, "unet."));
    if (model.toy_codec) append(adapter_parameters(*model.toy_codec, "codec."));
    append(all_parameters(*model.tpm, "tpm."));
    append(all_parameters(*model.scheduler, "scheduler."));
  }
  if (stage < 1 || stage > 3) throw std::invalid_argument("stage must be 1, 2 or 3");
  return out;
}

namespace {

struct StepLosses {
  torch::Tensor total;
  double rec = 0, gui = 0, enh = 0;
};

StepLosses stage_losses(Model& model, int stage, const torch::Tensor& x, const torch::Tensor& z,
                        const torch::Tensor& zhat_cached) {
  const auto& cfg = model.cfg;
  const RescaleLossWeights w{cfg.lambda_rec, cfg.lambda_gui};
  StepLosses s;
  if (stage == 1) {
    auto r = rescale_losses(model.dfrm, x, z, w);
    s.total = r.res;
    s.rec = r.rec.item<double>();
    s.gui = r.gui.item<double>();
    return s;
  }
  torch::Tensor zhat = zhat_cached;
  RescaleLosses r;
  if (stage == 3) {
    r = rescale_losses(model.dfrm, x, z, w, true);
    zhat = r.chain2;
  }
  auto e = enhance_latents(model, zhat);
  auto xhat = model.codec->decode(e.z0);
  auto enh = loss_enh(xhat, x, model.perceptual, cfg.lambda_pec);
  s.enh = enh.item<double>();
  if (stage == 2) {
    s.total = enh;
  } else {
    s.total = r.res + enh;
    s.rec = r.rec.item<double>();
    s.gui = r.gui.item<double>();
  }
  return s;
}

std::vector<std::string> read_csv_rows_before(const fs::path& path, int64_t step) {
  std::vector<std::string> rows;
  std::ifstream in(path);
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (header) {
      header = false;
      continue;
    }
    const auto a = line.find(',');
    const auto b = line.find(',', a + 1);
    if (a == std::string::npos || b == std::string::npos) continue;
    if (std::stoll(line.substr(a + 1, b - a - 1)) < step) rows.push_back(line);
  }
  return rows;
}

void write_csv_rows(const fs::path& path, const std::vector<std::string>& rows) {
  std::string s = "stage,step,loss,loss_rec,loss_gui,loss_enh,lr\n";
  for (const auto& r : rows) s += r + "\n";
  write_file_atomic(path, s.data(), s.size());
}

}  // namespace

double validate_stage(Model& model, int stage, const torch::Tensor& x) {
  torch::NoGradGuard no_grad;
  auto z = encode_all(model, x);
  double total = 0.0;
  int64_t count = 0;
  for (int64_t i = 0; i < x.size(0); i += kChunk) {
    const auto j = std::min(i + kChunk, x.size(0));
    auto xc = x.slice(0, i, j);
    auto zc = z.slice(0, i, j);
    torch::Tensor zhat;
    if (stage == 2) zhat = rescaled_latents(model, xc, zc);
    total += stage_losses(model, stage, xc, zc, zhat).total.item<double>() * static_cast<double>(j - i);
    count += j - i;
  }
  return total / static_cast<double>(count);
}

StageResult train_stage(Model& model, int stage, const TrainData& data, const StageOptions& options) {
  const auto& cfg = model.cfg;
  const int64_t total_steps = stage == 1 ? cfg.steps_stage1 : stage == 2 ? cfg.steps_stage2 : cfg.steps_stage3;
  const double lr = stage == 1 ? cfg.lr_stage1 : stage == 2 ? cfg.lr_stage2 : cfg.stage3_lr();
  StageResult result;
  result.stage = stage;
  fs::create_directories(options.out_dir);
  result.checkpoint = options.out_dir / ("stage" + std::to_string(stage) + ".tadm");
  const auto csv_path = options.out_dir / ("stage" + std::to_string(stage) + "_loss.csv");

  auto params = stage_parameters(model, stage);
  freeze_all(model);
  for (auto& [name, p] : params) p.set_requires_grad(true);
  Adam optimizer(params, AdamOptions{lr});

  int64_t start = 0;
  double val_first = 0.0;
  if (options.resume) {
    auto archive = read_archive(*options.resume);
    const auto ck_stage = archive.meta.value("stage", -1);
    const bool ck_complete = archive.meta.value("complete", false);
    load_model_state(model, archive);
    for (auto& [k, v] : archive.meta.items()) {
      if (k != "config") model.meta[k] = v;
    }
    if (ck_stage == stage && !ck_complete) {
      optimizer.load(archive, "optim.");
      start = archive.meta.value("step", int64_t{0});
      val_first = archive.meta.value("val_loss_first", 0.0);
    } else if (ck_stage == stage && ck_complete) {
      result.step = archive.meta.value("step", int64_t{0});
      result.complete = true;
      result.val_loss_first = archive.meta.value("val_loss_first", 0.0);
      result.val_loss_last = archive.meta.value("val_loss_last", 0.0);
      return result;
    } else if (ck_stage != stage - 1 || !ck_complete) {
      throw ConfigError("checkpoint " + options.resume->string() + " cannot start stage " + std::to_string(stage));
    }
  }
  if (stage == 2 && start == 0) model.meta["dfrm_checksum_stage1"] = module_checksum(*model.dfrm);

  auto z_all = encode_all(model, data.x);
  torch::Tensor zhat_all;
  if (stage == 2) zhat_all = rescaled_latents(model, data.x, z_all);
  if (start == 0) {
    val_first = validate_stage(model, stage, data.x_val);
    log_to(options.log, "stage " + std::to_string(stage) + " validation loss at step 0: " + std::to_string(val_first));
  }
  result.val_loss_first = val_first;

  auto rows = start > 0 ? read_csv_rows_before(csv_path, start) : std::vector<std::string>{};
  auto save = [&](int64_t step, bool complete) {
    model.meta["stage"] = stage;
    model.meta["step"] = step;
    model.meta["total_steps"] = total_steps;
    model.meta["complete"] = complete;
    model.meta["config_hash"] = cfg.hash();
    model.meta["corpus_hash"] = data.corpus_hash;
    model.meta["val_loss_first"] = val_first;
    auto archive = model_archive(model);
    optimizer.save(archive, "optim.");
    write_archive(result.checkpoint, archive);
    write_csv_rows(csv_path, rows);
  };

  int64_t step = start;
  int64_t ran = 0;
  for (; step < total_steps; ++step) {
    if (options.stop_after >= 0 && ran >= options.stop_after) break;
    std::mt19937_64 rng(derive_seed(cfg.seed, {0x57A6E, static_cast<uint64_t>(stage), static_cast<uint64_t>(step)}));
    auto plan = plan_crops(data.x.size(0), data.x.size(2), data.x.size(3), cfg.batch_stage, cfg.crop_stage,
                           std::max<int64_t>(cfg.factor, kLatentReduction), rng);
    auto x = apply_crops(data.x, plan, cfg.crop_stage);
    auto z = apply_crops(z_all, plan, cfg.crop_stage, kLatentReduction);
    torch::Tensor zhat;
    if (stage == 2) zhat = apply_crops(zhat_all, plan, cfg.crop_stage, kLatentReduction);
    auto losses = stage_losses(model, stage, x, z, zhat);
    optimizer.zero_grad();
    losses.total.backward();
    optimizer.step();
    const double loss = losses.total.item<double>();
    result.losses.push_back(loss);
    char row[256];
    std::snprintf(row, sizeof(row), "%d,%lld,%.9g,%.9g,%.9g,%.9g,%.9g", stage, static_cast<long long>(step), loss,
                  losses.rec, losses.gui, losses.enh, lr);
    rows.emplace_back(row);
    ++ran;
    if (step % 50 == 0) log_to(options.log, "stage " + std::to_string(stage) + " step " + std::to_string(step) + " loss " + std::to_string(loss));
    if (cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 && step + 1 < total_steps) save(step + 1, false);
  }
  result.step = step;
  result.complete = step >= total_steps;
  if (result.complete) {
    result.val_loss_last = validate_stage(model, stage, data.x_val);
    model.meta["val_loss_last"] = result.val_loss_last;
    log_to(options.log, "stage " + std::to_string(stage) + " validation loss after " + std::to_string(step) +
                            " steps: " + std::to_string(result.val_loss_last));
  }
  save(step, result.complete);
  for (auto& [name, p] : params) p.set_requires_grad(false);
  model.set_eval();
  return result;
}

}  // namespace tadm
