#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>

#include <nlohmann/json.hpp>

#include "tadm/archive.hpp"
#include "tadm/bench.hpp"
#include "tadm/config.hpp"
#include "tadm/image_io.hpp"
#include "tadm/pipeline.hpp"

namespace tadm::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

// Raised for bad input files; mapped to the validation exit code like ConfigError.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Keys that change the network or its numerics; a loaded model must keep them.
const std::vector<std::string> kArchitectureKeys = {
    "factor", "schedule.T", "schedule.beta_min", "schedule.beta_max", "scheduler.t0", "backend.codec",
    "backend.denoiser", "model.dfrm_channels", "model.inn_blocks", "model.inn_hidden", "model.inn_clamp",
    "model.pixel_guidance", "model.use_inn", "model.lora_rank", "model.unet_channels", "model.tpm_channels",
    "model.scheduler_channels"};

std::string pointer_of(const std::string& dotted) {
  std::string p = "/" + dotted;
  for (auto& c : p) {
    if (c == '.') c = '/';
  }
  return p;
}

struct Common {
  std::string config;
  std::optional<int64_t> factor, patch_size, stride, t0;
  std::optional<uint64_t> seed;
  std::string out_dir;
  std::string model;
  std::vector<std::string> sets;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "JSON config file");
  cmd->add_option("--factor", c.factor, "downscaling factor (factor)");
  cmd->add_option("--patch-size", c.patch_size, "tile size in latent cells (patch_size)");
  cmd->add_option("--stride", c.stride, "tile stride in latent cells (stride)");
  cmd->add_option("--t0", c.t0, "hybrid scheduler pre-set step (scheduler.t0)");
  cmd->add_option("--seed", c.seed, "base seed (seed)");
  cmd->add_option("--out-dir", c.out_dir, "output directory");
  cmd->add_option("--set", c.sets, "dotted-key override key=value (repeatable)");
}

void add_model(CLI::App* cmd, Common& c, bool required) {
  auto* o = cmd->add_option("--model", c.model, "trained model archive (.tadm)");
  if (required) o->required();
}

std::vector<std::string> overrides_of(const Common& c) {
  std::vector<std::string> out;
  if (c.factor) out.push_back("factor=" + std::to_string(*c.factor));
  if (c.patch_size) out.push_back("patch_size=" + std::to_string(*c.patch_size));
  if (c.stride) out.push_back("stride=" + std::to_string(*c.stride));
  if (c.t0) out.push_back("scheduler.t0=" + std::to_string(*c.t0));
  if (c.seed) out.push_back("seed=" + std::to_string(*c.seed));
  out.insert(out.end(), c.sets.begin(), c.sets.end());
  return out;
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
}

// Base tree (defaults or a loaded model's config) <- config file <- flags and overrides.
RunConfig resolve_config(const Common& c, const json& base) {
  json tree = base;
  if (!c.config.empty()) {
    auto file = read_json_file(c.config);
    RunConfig::from_json(file);
    tree.merge_patch(file);
  }
  for (const auto& o : overrides_of(c)) apply_override(tree, o);
  auto cfg = RunConfig::from_json(tree);
  cfg.validate();
  return cfg;
}

void require_same_architecture(const RunConfig& model_cfg, const RunConfig& cfg) {
  const auto a = model_cfg.to_json();
  const auto b = cfg.to_json();
  for (const auto& k : kArchitectureKeys) {
    const auto p = json::json_pointer(pointer_of(k));
    if (a.at(p) != b.at(p)) {
      throw ConfigError("config key '" + k + "' (" + b.at(p).dump() + ") differs from the model (" + a.at(p).dump() + ")");
    }
  }
}

void require_file(const fs::path& p, const std::string& what) {
  if (!fs::is_regular_file(p)) throw InputError(what + " not found: " + p.string());
}

std::string file_sha256(const fs::path& p) {
  auto bytes = read_file(p);
  return sha256_hex(bytes.data(), bytes.size());
}

struct Manifest {
  std::string verb;
  std::vector<std::string> args;
  json config;
  std::map<std::string, std::string> checkpoints;
  std::map<std::string, std::string> outputs;
  json extra = json::object();

  void checkpoint(const fs::path& p) { checkpoints[p.string()] = file_sha256(p); }
  void output(const fs::path& p) { outputs[p.string()] = file_sha256(p); }

  void write(const fs::path& dir, const RunConfig& cfg) const {
    json j;
    j["verb"] = verb;
    j["args"] = args;
    j["version"] = library_version();
    j["seed"] = cfg.seed;
    j["config"] = cfg.to_json();
    j["config_hash"] = cfg.hash();
    j["checkpoints"] = checkpoints;
    j["outputs"] = outputs;
    for (auto& [k, v] : extra.items()) j[k] = v;
    const auto s = j.dump(2) + "\n";
    fs::create_directories(dir.empty() ? fs::path(".") : dir);
    write_file_atomic(dir / "manifest.json", s.data(), s.size());
  }
};

Logger make_logger(std::ostream& err) {
  const auto start = std::chrono::steady_clock::now();
  return [&err, start](const std::string& line) {
    const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - start;
    char stamp[32];
    std::snprintf(stamp, sizeof(stamp), "[%8.1fs] ", dt.count());
    err << stamp << line << std::endl;
  };
}

fs::path out_path(const Common& c, const fs::path& default_path) {
  if (c.out_dir.empty()) return default_path;
  return fs::path(c.out_dir) / default_path.filename();
}

fs::path manifest_dir(const Common& c, const fs::path& primary_output) {
  if (!c.out_dir.empty()) return c.out_dir;
  return primary_output.parent_path();
}

// in.png -> in.lr.png
fs::path lr_name(const fs::path& input) {
  auto p = input;
  return p.replace_extension(".lr.png");
}

// in.lr.png -> in.up.png, other.png -> other.up.png
fs::path up_name(const fs::path& lr) {
  auto name = lr.filename().string();
  const std::string suffix = ".lr.png";
  if (name.size() > suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0) {
    name = name.substr(0, name.size() - suffix.size());
  } else {
    name = fs::path(name).stem().string();
  }
  return lr.parent_path() / (name + ".up.png");
}

struct Loaded {
  Model model;
  RunConfig cfg;
};

// A trained model when --model is given, otherwise a freshly initialized one.
Loaded open_model(const Common& c, Manifest& m, std::ostream& err) {
  if (c.model.empty()) {
    auto cfg = resolve_config(c, default_config_tree());
    err << "note: no --model given, using untrained weights initialized from seed " << cfg.seed << std::endl;
    auto model = build_model(cfg);
    model.set_eval();
    return {std::move(model), cfg};
  }
  require_file(c.model, "model");
  auto model = load_model(c.model);
  m.checkpoint(c.model);
  auto cfg = resolve_config(c, model.cfg.to_json());
  require_same_architecture(model.cfg, cfg);
  model.cfg = cfg;
  return {std::move(model), cfg};
}

Image read_image(const fs::path& p) {
  require_file(p, "image");
  try {
    return read_png(p).image;
  } catch (const std::exception& e) {
    throw InputError("cannot decode " + p.string() + ": " + e.what());
  }
}

void write_timestep_map(const fs::path& path, const UpResult& up, int64_t T, Manifest& m) {
  write_png(path, up.map.heatmap(T));
  auto csv = path;
  csv.replace_extension(".csv");
  up.map.write_csv(csv);
  m.output(path);
  m.output(csv);
}

// ---- verbs ----

int cmd_train(const Common& c, const std::vector<std::string>& stages, const std::string& backbone,
              int64_t stop_after, Manifest& m, std::ostream& out, std::ostream& err) {
  auto cfg = resolve_config(c, default_config_tree());
  const fs::path dir = c.out_dir.empty() ? fs::path("tadm_run") : fs::path(c.out_dir);
  std::vector<int> order;
  for (const auto& s : stages) {
    if (s == "backbone") order.push_back(0);
    else if (s == "1" || s == "2" || s == "3") order.push_back(std::stoi(s));
    else throw ConfigError("unknown stage '" + s + "' (backbone, 1, 2, 3)");
  }
  for (size_t i = 1; i < order.size(); ++i) {
    if (order[i] <= order[i - 1]) throw ConfigError("stages must be given in increasing order");
  }
  if (!backbone.empty()) require_file(backbone, "backbone");

  auto log = make_logger(err);
  auto model = build_model(cfg);
  auto data = make_train_data(cfg);
  fs::create_directories(dir);
  auto ckpt = [&](int stage) { return dir / (stage == 0 ? "backbone.tadm" : "stage" + std::to_string(stage) + ".tadm"); };

  json results = json::array();
  bool interrupted = false;
  for (int stage : order) {
    if (stage == 0) {
      if (!backbone.empty()) {
        auto archive = read_archive(backbone);
        if (model.toy_codec) archive.load_module("codec.", *model.toy_codec);
        if (model.toy_unet) archive.load_module("unet.", *model.toy_unet);
        model.meta = archive.meta;
        model.meta.erase("config");
        model.meta["stage"] = 0;
        model.meta["complete"] = true;
        model.meta["backbone_source"] = file_sha256(backbone);
        save_model(ckpt(0), model);
        m.checkpoint(backbone);
        log("backbone copied from " + backbone);
      } else {
        StageOptions so{dir, std::nullopt, -1, log};
        train_backbone(model, data, so);
      }
      m.checkpoint(ckpt(0));
      continue;
    }
    StageOptions so{dir, std::nullopt, stop_after, log};
    if (fs::exists(ckpt(stage))) so.resume = ckpt(stage);
    else if (fs::exists(ckpt(stage - 1))) so.resume = ckpt(stage - 1);
    else throw InputError("stage " + std::to_string(stage) + " needs " + ckpt(stage - 1).string());
    auto r = train_stage(model, stage, data, so);
    m.checkpoint(r.checkpoint);
    results.push_back({{"stage", stage},
                       {"step", r.step},
                       {"complete", r.complete},
                       {"val_loss_first", r.val_loss_first},
                       {"val_loss_last", r.val_loss_last}});
    out << "stage " << stage << ": step " << r.step << (r.complete ? " complete" : " interrupted")
        << " val_loss_first " << r.val_loss_first << " val_loss_last " << r.val_loss_last << "\n";
    if (!r.complete) {
      interrupted = true;
      break;
    }
    if (stage == 3) {
      save_model(dir / "model.tadm", model);
      m.checkpoint(dir / "model.tadm");
      out << "model: " << (dir / "model.tadm").string() << " hash " << model.hash() << "\n";
    }
  }
  m.extra["stages"] = results;
  m.extra["corpus_hash"] = data.corpus_hash;
  m.extra["interrupted"] = interrupted;
  m.write(dir, cfg);
  return kExitOk;
}

int cmd_down(const Common& c, const std::string& input, const std::string& output, Manifest& m, std::ostream& out,
             std::ostream& err) {
  auto x = read_image(input);
  auto [model, cfg] = open_model(c, m, err);
  const fs::path dst = output.empty() ? out_path(c, lr_name(input)) : fs::path(output);
  if (!dst.parent_path().empty()) fs::create_directories(dst.parent_path());
  auto r = rescale_down(model, x);
  write_lr(dst, r);
  m.output(dst);
  m.output(fs::path(dst).replace_extension(".json"));
  m.extra["model_hash"] = model.hash();
  m.write(manifest_dir(c, dst), cfg);
  out << dst.string() << " " << r.lr.width() << "x" << r.lr.height() << "\n";
  return kExitOk;
}

int cmd_up(const Common& c, const std::string& input, const std::string& output, const std::string& tmap,
           Manifest& m, std::ostream& out, std::ostream& err) {
  require_file(input, "LR image");
  DownResult lr = [&] {
    try {
      return read_lr(input);
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      throw InputError("cannot read LR image " + input + ": " + e.what());
    }
  }();
  auto [model, cfg] = open_model(c, m, err);
  const fs::path dst = output.empty() ? out_path(c, up_name(input)) : fs::path(output);
  if (!dst.parent_path().empty()) fs::create_directories(dst.parent_path());
  auto up = rescale_up(model, lr.lr, lr.meta);
  write_png(dst, quantize_to_u8(up.xhat));
  m.output(dst);
  if (!tmap.empty()) write_timestep_map(tmap, up, cfg.T, m);
  m.extra["model_hash"] = model.hash();
  m.write(manifest_dir(c, dst), cfg);
  out << dst.string() << " " << up.xhat.width() << "x" << up.xhat.height() << "\n";
  return kExitOk;
}

int cmd_roundtrip(const Common& c, const std::string& input, const std::string& tmap, Manifest& m,
                  std::ostream& out, std::ostream& err) {
  auto x = read_image(input);
  auto [model, cfg] = open_model(c, m, err);
  const fs::path lr_path = out_path(c, lr_name(input));
  const fs::path up_path = up_name(lr_path);
  if (!lr_path.parent_path().empty()) fs::create_directories(lr_path.parent_path());
  auto rt = roundtrip(model, x);
  write_lr(lr_path, rt.down);
  auto xhat = quantize_to_u8(rt.up.xhat);
  write_png(up_path, xhat);
  m.output(lr_path);
  m.output(up_path);
  if (!tmap.empty()) write_timestep_map(tmap, rt.up, cfg.T, m);
  auto rec = measure(fs::path(input).filename().string(), x, xhat, bpp_of_file(lr_path, x.height(), x.width()));
  MetricReport report;
  report.name = "roundtrip";
  report.config_hash = cfg.hash();
  report.records.push_back(rec);
  const auto report_path = lr_path.parent_path() / (fs::path(input).stem().string() + ".report.csv");
  report.write_csv(report_path);
  m.output(report_path);
  m.extra["model_hash"] = model.hash();
  m.extra["psnr_db"] = rec.psnr_reported();
  m.extra["ssim"] = rec.ssim;
  m.extra["bpp"] = rec.bpp;
  m.write(manifest_dir(c, lr_path), cfg);
  char line[160];
  std::snprintf(line, sizeof(line), "psnr_db %.4f%s ssim %.6f bpp %.6f\n", rec.psnr_reported(),
                rec.psnr_infinite ? " (infinite)" : "", rec.ssim, rec.bpp);
  out << line;
  return kExitOk;
}

std::pair<std::vector<Image>, std::vector<std::string>> bench_images(const RunConfig& cfg, const std::string& dir) {
  std::vector<Image> images;
  std::vector<std::string> ids;
  if (!dir.empty()) {
    if (!fs::is_directory(dir)) throw InputError("image directory not found: " + dir);
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir)) {
      if (e.path().extension() == ".png") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw InputError("no PNG images in " + dir);
    for (const auto& f : files) {
      if (static_cast<int64_t>(images.size()) >= cfg.bench_images) break;
      images.push_back(read_image(f));
      ids.push_back(f.filename().string());
    }
    return {images, ids};
  }
  auto data = make_train_data(cfg);
  for (int64_t i = 0; i < std::min<int64_t>(cfg.bench_images, static_cast<int64_t>(data.train.size())); ++i) {
    images.push_back(data.train[static_cast<size_t>(i)]);
    ids.push_back("train_" + std::to_string(i));
  }
  return {images, ids};
}

int cmd_bench(const Common& c, const std::string& images_dir, Manifest& m, std::ostream& out, std::ostream& err) {
  auto [model, cfg] = open_model(c, m, err);
  const fs::path dir = c.out_dir.empty() ? fs::path("tadm_bench") : fs::path(c.out_dir);
  fs::create_directories(dir);
  auto [images, ids] = bench_images(cfg, images_dir);

  auto points = rd_sweep_jpeg(images, ids, cfg.jpeg_qualities);
  auto tadm_report = evaluate_model(model, images, ids, "tadm x" + std::to_string(cfg.factor));
  tadm_report.config_hash = cfg.hash();
  auto bicubic_report = evaluate_bicubic(images, ids, cfg.factor);
  bicubic_report.config_hash = cfg.hash();
  for (const auto& r : tadm_report.records) {
    points.push_back({"tadm", r.id, cfg.factor, r.bpp, r.psnr_reported(), r.psnr_infinite, r.ssim});
  }
  for (const auto& r : bicubic_report.records) {
    points.push_back({"bicubic", r.id, cfg.factor, r.bpp, r.psnr_reported(), r.psnr_infinite, r.ssim});
  }
  write_rd_csv(dir / "rd.csv", points);
  write_rd_svg(dir / "rd.svg", points);
  tadm_report.write_csv(dir / "report_tadm.csv");
  bicubic_report.write_csv(dir / "report_bicubic.csv");
  for (const auto* f : {"rd.csv", "rd.svg", "report_tadm.csv", "report_bicubic.csv"}) m.output(dir / f);
  m.extra["model_hash"] = model.hash();
  m.write(dir, cfg);
  char line[200];
  for (const auto* r : {&tadm_report, &bicubic_report}) {
    std::snprintf(line, sizeof(line), "%-12s psnr_db %.4f ssim %.6f bpp %.6f\n", r->name.c_str(), r->mean_psnr(),
                  r->mean_ssim(), r->mean_bpp());
    out << line;
  }
  return kExitOk;
}

int cmd_ablate(const Common& c, const std::string& kind_name, const std::string& backbone, Manifest& m,
               std::ostream& out, std::ostream& err) {
  const auto kind = parse_ablation(kind_name);
  if (c.model.empty()) throw ConfigError("ablate needs --model");
  auto [model, cfg] = open_model(c, m, err);
  AblationOptions opts;
  opts.model = c.model;
  opts.backbone = backbone.empty() ? fs::path(c.model).parent_path() / "backbone.tadm" : fs::path(backbone);
  require_file(opts.backbone, "backbone");
  if (kind == AblationKind::kFixedTimestep) require_file(opts.backbone.parent_path() / "stage1.tadm", "stage-1 checkpoint");
  m.checkpoint(opts.backbone);
  opts.out_dir = c.out_dir.empty() ? fs::path("tadm_ablation") : fs::path(c.out_dir);
  opts.log = make_logger(err);
  auto reports = run_ablation(kind, cfg, opts);
  json summary = json::array();
  char line[200];
  for (const auto& r : reports) {
    m.output(opts.out_dir / (to_string(kind) + "_" + r.name + ".csv"));
    summary.push_back({{"name", r.name}, {"psnr_db", r.mean_psnr()}, {"ssim", r.mean_ssim()}, {"bpp", r.mean_bpp()}});
    std::snprintf(line, sizeof(line), "%-20s psnr_db %.4f ssim %.6f bpp %.6f\n", r.name.c_str(), r.mean_psnr(),
                  r.mean_ssim(), r.mean_bpp());
    out << line;
  }
  m.extra["ablation"] = to_string(kind);
  m.extra["summary"] = summary;
  m.write(opts.out_dir, cfg);
  return kExitOk;
}

int cmd_inspect(const Common& c, const std::string& input, const std::string& tmap, Manifest& m, std::ostream& out,
                std::ostream& err) {
  require_file(input, "file");
  const fs::path p = input;
  RunConfig cfg;
  if (p.extension() == ".tadm") {
    auto archive = read_archive(p);
    m.checkpoint(p);
    auto model = load_model(p);
    cfg = model.cfg;
    json info = archive.meta;
    info.erase("config");
    out << "model_hash " << model.hash() << "\n";
    out << "config_hash " << model.cfg.hash() << "\n";
    out << "tensors " << archive.tensors.size() << "\n";
    out << "meta " << info.dump() << "\n";
    if (!tmap.empty()) throw ConfigError("--timestep-map needs an LR image and --model");
    m.write(c.out_dir.empty() ? p.parent_path() : fs::path(c.out_dir), cfg);
    return kExitOk;
  }
  DownResult lr = read_lr(p);
  out << "lr " << lr.lr.width() << "x" << lr.lr.height() << "\n";
  out << "meta " << lr.meta.to_json().dump() << "\n";
  fs::path mdir = c.out_dir.empty() ? p.parent_path() : fs::path(c.out_dir);
  if (!tmap.empty()) {
    if (c.model.empty()) throw ConfigError("--timestep-map needs --model");
    auto loaded = open_model(c, m, err);
    cfg = loaded.cfg;
    auto up = rescale_up(loaded.model, lr.lr, lr.meta, UpOptions{true, true});
    const fs::path dst = c.out_dir.empty() ? fs::path(tmap) : fs::path(c.out_dir) / fs::path(tmap).filename();
    if (!dst.parent_path().empty()) fs::create_directories(dst.parent_path());
    write_timestep_map(dst, up, cfg.T, m);
    out << "grid " << up.map.grid.height << "x" << up.map.grid.width << " patch " << up.map.grid.patch_height() << "x"
        << up.map.grid.patch_width() << " patches " << up.map.grid.offsets.size() << "\n";
    for (size_t i = 0; i < up.map.t.size(); ++i) {
      out << "patch " << up.map.grid.offsets[i].row << "," << up.map.grid.offsets[i].col << " t " << up.map.t[i] << "\n";
    }
    for (const auto& line : up.trace) out << "trace " << line << "\n";
    mdir = dst.parent_path();
  } else {
    cfg = resolve_config(c, default_config_tree());
  }
  m.extra["lr_meta"] = lr.meta.to_json();
  m.write(mdir, cfg);
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"tadm: extreme image rescaling in a diffusion latent space", "tadm"};
  app.require_subcommand(1);
  app.footer("Config keys (JSON paths, override with --set key=value):\n" + describe_config_keys() +
             "\nEnvironment: TADM_DEVICE selects the device (only 'cpu' is supported).\n"
             "Exit codes: 0 success, 1 validation error, 2 runtime failure.");

  Common c;
  std::string input, output, tmap, backbone, images_dir, kind;
  std::vector<std::string> stages{"backbone", "1", "2", "3"};
  int64_t stop_after = -1;

  auto* train = app.add_subcommand("train", "backbone pretraining and the three training stages");
  add_common(train, c);
  train->add_option("--stages", stages, "stages to run, in order (backbone 1 2 3)")->delimiter(',');
  train->add_option("--backbone", backbone, "reuse the codec and denoiser of this checkpoint instead of pretraining");
  train->add_option("--stop-after", stop_after, "stop each stage after this many steps (resumable)");

  auto* down = app.add_subcommand("down", "HR image -> LR PNG with metadata");
  add_common(down, c);
  add_model(down, c, false);
  down->add_option("input", input, "HR PNG")->required();
  down->add_option("-o,--output", output, "LR PNG path (default: <input>.lr.png)");

  auto* up = app.add_subcommand("up", "LR PNG -> HR image");
  add_common(up, c);
  add_model(up, c, false);
  up->add_option("input", input, "LR PNG")->required();
  up->add_option("-o,--output", output, "HR PNG path (default: <input>.up.png)");
  up->add_option("--timestep-map", tmap, "write the per-patch time-step heat map (PNG + CSV)");

  auto* rt = app.add_subcommand("roundtrip", "down then up, with PSNR/SSIM/bpp");
  add_common(rt, c);
  add_model(rt, c, false);
  rt->add_option("input", input, "HR PNG")->required();
  rt->add_option("--timestep-map", tmap, "write the per-patch time-step heat map (PNG + CSV)");

  auto* bench = app.add_subcommand("bench", "metric reports and the JPEG rate-distortion sweep");
  add_common(bench, c);
  add_model(bench, c, true);
  bench->add_option("--images", images_dir, "directory of PNG images (default: the training corpus)");

  auto* ablate = app.add_subcommand("ablate", "train and evaluate an ablation variant");
  add_common(ablate, c);
  add_model(ablate, c, true);
  ablate->add_option("kind", kind, "fixed-timestep | no-pixel-guidance | no-inn | patch-size")->required();
  ablate->add_option("--backbone", backbone, "backbone checkpoint (default: next to --model)");

  auto* inspect = app.add_subcommand("inspect", "print checkpoint or LR metadata; time-step maps");
  add_common(inspect, c);
  add_model(inspect, c, false);
  inspect->add_option("input", input, "checkpoint (.tadm) or LR PNG")->required();
  inspect->add_option("--timestep-map", tmap, "write the per-patch time-step heat map (PNG + CSV)");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << std::endl;
    return kExitValidation;
  }

  try {
    if (const char* dev = std::getenv("TADM_DEVICE"); dev && std::string(dev) != "cpu") {
      throw ConfigError(std::string("TADM_DEVICE=") + dev + " is not supported (cpu only)");
    }
    Manifest m;
    m.args = args;
    auto* sub = app.get_subcommands().front();
    m.verb = sub->get_name();
    if (sub == train) return cmd_train(c, stages, backbone, stop_after, m, out, err);
    if (sub == down) return cmd_down(c, input, output, m, out, err);
    if (sub == up) return cmd_up(c, input, output, tmap, m, out, err);
    if (sub == rt) return cmd_roundtrip(c, input, tmap, m, out, err);
    if (sub == bench) return cmd_bench(c, images_dir, m, out, err);
    if (sub == ablate) return cmd_ablate(c, kind, backbone, m, out, err);
    return cmd_inspect(c, input, tmap, m, out, err);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << std::endl;
    return kExitValidation;
  } catch (const InputError& e) {
    err << "error: " << e.what() << std::endl;
    return kExitValidation;
  } catch (const std::exception& e) {
    std::string msg = e.what();
    if (auto nl = msg.find('\n'); nl != std::string::npos) msg = msg.substr(0, nl);
    err << "error: " << msg << std::endl;
    return kExitRuntime;
  }
}

}  // namespace tadm::cli
