#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cstring>
#include <sstream>

#include "cli.hpp"
#include "tadm/bench.hpp"
#include "tadm/config.hpp"
#include "tadm/corpus.hpp"
#include "tadm/pipeline.hpp"

namespace py = pybind11;
using namespace tadm;

namespace {

using U8Array = py::array_t<uint8_t, py::array::c_style | py::array::forcecast>;

// HxWx3 uint8 -> kByte image.
Image from_array(const U8Array& a) {
  if (a.ndim() != 3 || a.shape(2) != 3) throw std::invalid_argument("expected an HxWx3 uint8 array");
  auto t = torch::from_blob(const_cast<uint8_t*>(a.data()), {a.shape(0), a.shape(1), 3}, torch::kUInt8);
  return Image(t.permute({2, 0, 1}).to(torch::kFloat32).contiguous(), ValueRange::kByte);
}

U8Array to_array(const Image& img) {
  const auto levels = (img.range() == ValueRange::kByte ? img : quantize_to_u8(img)).data();
  auto hwc = levels.permute({1, 2, 0}).to(torch::kUInt8).contiguous();
  U8Array out({hwc.size(0), hwc.size(1), int64_t{3}});
  std::memcpy(out.mutable_data(), hwc.data_ptr<uint8_t>(), static_cast<size_t>(hwc.numel()));
  return out;
}

RunConfig config_from(const std::string& json_text) {
  auto tree = default_config_tree();
  tree.merge_patch(nlohmann::json::parse(json_text));
  auto cfg = RunConfig::from_json(tree);
  cfg.validate();
  return cfg;
}

}  // namespace

PYBIND11_MODULE(_tadm, m) {
  m.doc() = "Extreme image rescaling through a latent diffusion codec";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);

  m.def("version", &library_version);
  m.def("default_config_json", [] { return default_config_tree().dump(); });
  m.def("describe_config", &describe_config_keys);

  m.def("psnr", [](const U8Array& a, const U8Array& b) { return psnr(from_array(a), from_array(b)); });
  m.def("ssim", [](const U8Array& a, const U8Array& b) { return ssim(from_array(a), from_array(b)); });
  m.def(
      "synthesize_corpus",
      [](int64_t count, int64_t size, uint64_t seed) {
        std::vector<U8Array> out;
        for (const auto& img : synthesize_corpus({count, size, size, seed})) out.push_back(to_array(img));
        return out;
      },
      py::arg("count"), py::arg("size") = 256, py::arg("seed") = 0);

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        int code;
        {
          py::gil_scoped_release release;
          code = cli::run(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs a tadm command line; returns (exit_code, stdout, stderr).");

  py::class_<Model>(m, "Model")
      .def_static(
          "build", [](const std::string& config_json) { return build_model(config_from(config_json)); },
          py::arg("config_json") = "{}", "Freshly initialized model from a JSON object of config overrides.")
      .def_static("load", [](const std::filesystem::path& p) { return load_model(p); })
      .def("save", [](const Model& self, const std::filesystem::path& p) { save_model(p, self); })
      .def("hash", &Model::hash)
      .def("config_json", [](const Model& self) { return self.cfg.to_json().dump(); })
      .def(
          "down",
          [](Model& self, const U8Array& x) {
            auto img = from_array(x);
            DownResult r = [&] {
              py::gil_scoped_release release;
              return rescale_down(self, img);
            }();
            return py::make_tuple(to_array(r.lr), r.meta.to_json().dump());
          },
          py::arg("image"), "HR HxWx3 uint8 -> (LR array, metadata JSON).")
      .def(
          "up",
          [](Model& self, const U8Array& y, const std::string& meta_json, bool tiled) {
            auto img = from_array(y);
            auto meta = LrMetadata::from_json(nlohmann::json::parse(meta_json));
            UpResult r = [&] {
              py::gil_scoped_release release;
              return rescale_up(self, img, meta, {tiled, false});
            }();
            return py::make_tuple(to_array(r.xhat), r.map.t);
          },
          py::arg("lr"), py::arg("meta_json"), py::arg("tiled") = true,
          "LR array + metadata -> (HR array, per-patch time steps).");
}
