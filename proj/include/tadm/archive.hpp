#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

namespace tadm {

// SHA-256 of a byte range, lowercase hex.
std::string sha256_hex(const void* data, size_t size);
std::string sha256_hex(std::string_view text);

// Hash over tensor bytes (shape and dtype included) in name order.
std::string tensors_checksum(const std::map<std::string, torch::Tensor>& tensors);
// Checksum of a module's parameters and buffers.
std::string module_checksum(const torch::nn::Module& module);

// Versioned archive: magic "TADMPACK", u32 format version, u64 manifest length,
// JSON manifest, then raw little-endian tensor blobs. The manifest carries free-form
// metadata under "meta" and one entry per blob (name, dtype, shape, offset, nbytes, sha256).
struct TensorArchive {
  static constexpr uint32_t kFormatVersion = 1;

  nlohmann::json meta = nlohmann::json::object();
  std::map<std::string, torch::Tensor> tensors;

  void add_module(const std::string& prefix, const torch::nn::Module& module);
  // Strict: every parameter/buffer of `module` must be present with a matching shape.
  void load_module(const std::string& prefix, torch::nn::Module& module) const;
  bool has_prefix(const std::string& prefix) const;
  std::map<std::string, torch::Tensor> with_prefix(const std::string& prefix) const;
};

// Written to a temporary sibling and renamed into place.
void write_archive(const std::filesystem::path& path, const TensorArchive& archive);
TensorArchive read_archive(const std::filesystem::path& path);

}  // namespace tadm
