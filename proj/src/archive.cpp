#include "tadm/archive.hpp"

#include <openssl/evp.h>

#include <cstring>
#include <memory>
#include <stdexcept>

#include "tadm/image_io.hpp"

namespace tadm {

namespace {

constexpr char kMagic[8] = {'T', 'A', 'D', 'M', 'P', 'A', 'C', 'K'};

class Sha256 {
 public:
  Sha256() : ctx_(EVP_MD_CTX_new(), EVP_MD_CTX_free) {
    if (!ctx_ || EVP_DigestInit_ex(ctx_.get(), EVP_sha256(), nullptr) != 1) {
      throw std::runtime_error("sha256: init failed");
    }
  }
  void update(const void* data, size_t size) { EVP_DigestUpdate(ctx_.get(), data, size); }
  std::string hex() {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx_.get(), digest, &len);
    static constexpr char kHex[] = "0123456789abcdef";
    std::string out;
    out.reserve(len * 2);
    for (unsigned int i = 0; i < len; ++i) {
      out.push_back(kHex[digest[i] >> 4]);
      out.push_back(kHex[digest[i] & 0xF]);
    }
    return out;
  }

 private:
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx_;
};

std::string dtype_name(torch::Dtype dtype) {
  switch (dtype) {
    case torch::kFloat32: return "f32";
    case torch::kFloat64: return "f64";
    case torch::kInt64: return "i64";
    case torch::kUInt8: return "u8";
    default: throw std::invalid_argument("archive: unsupported dtype " + std::string(c10::toString(dtype)));
  }
}

torch::Dtype dtype_from_name(const std::string& name) {
  if (name == "f32") return torch::kFloat32;
  if (name == "f64") return torch::kFloat64;
  if (name == "i64") return torch::kInt64;
  if (name == "u8") return torch::kUInt8;
  throw std::runtime_error("archive: unknown dtype '" + name + "'");
}

torch::Tensor cpu_contiguous(const torch::Tensor& t) { return t.detach().to(torch::kCPU).contiguous(); }

std::map<std::string, torch::Tensor> module_state(const torch::nn::Module& module) {
  std::map<std::string, torch::Tensor> state;
  for (const auto& item : module.named_parameters(true)) state[item.key()] = item.value();
  for (const auto& item : module.named_buffers(true)) state[item.key()] = item.value();
  return state;
}

}  // namespace

std::string sha256_hex(const void* data, size_t size) {
  Sha256 h;
  h.update(data, size);
  return h.hex();
}

std::string sha256_hex(std::string_view text) { return sha256_hex(text.data(), text.size()); }

std::string tensors_checksum(const std::map<std::string, torch::Tensor>& tensors) {
  Sha256 h;
  for (const auto& [name, tensor] : tensors) {
    auto t = cpu_contiguous(tensor);
    const auto header = name + ":" + dtype_name(t.scalar_type()) + ":" + c10::str(t.sizes());
    h.update(header.data(), header.size());
    h.update(t.data_ptr(), t.nbytes());
  }
  return h.hex();
}

std::string module_checksum(const torch::nn::Module& module) { return tensors_checksum(module_state(module)); }

void TensorArchive::add_module(const std::string& prefix, const torch::nn::Module& module) {
  for (const auto& [name, tensor] : module_state(module)) tensors[prefix + name] = cpu_contiguous(tensor).clone();
}

void TensorArchive::load_module(const std::string& prefix, torch::nn::Module& module) const {
  torch::NoGradGuard no_grad;
  for (auto& [name, target] : module_state(module)) {
    auto it = tensors.find(prefix + name);
    if (it == tensors.end()) throw std::runtime_error("archive: missing tensor '" + prefix + name + "'");
    if (it->second.sizes() != target.sizes()) {
      throw std::runtime_error("archive: shape mismatch for '" + prefix + name + "'");
    }
    target.copy_(it->second);
  }
}

bool TensorArchive::has_prefix(const std::string& prefix) const {
  auto it = tensors.lower_bound(prefix);
  return it != tensors.end() && it->first.compare(0, prefix.size(), prefix) == 0;
}

std::map<std::string, torch::Tensor> TensorArchive::with_prefix(const std::string& prefix) const {
  std::map<std::string, torch::Tensor> out;
  for (auto it = tensors.lower_bound(prefix); it != tensors.end() && it->first.compare(0, prefix.size(), prefix) == 0;
       ++it) {
    out.emplace(it->first.substr(prefix.size()), it->second);
  }
  return out;
}

void write_archive(const std::filesystem::path& path, const TensorArchive& archive) {
  nlohmann::json manifest;
  manifest["format_version"] = TensorArchive::kFormatVersion;
  manifest["meta"] = archive.meta;
  manifest["blobs"] = nlohmann::json::array();
  std::vector<torch::Tensor> blobs;
  uint64_t offset = 0;
  for (const auto& [name, tensor] : archive.tensors) {
    auto t = cpu_contiguous(tensor);
    manifest["blobs"].push_back({{"name", name},
                                 {"dtype", dtype_name(t.scalar_type())},
                                 {"shape", t.sizes().vec()},
                                 {"offset", offset},
                                 {"nbytes", t.nbytes()},
                                 {"sha256", sha256_hex(t.data_ptr(), t.nbytes())}});
    offset += t.nbytes();
    blobs.push_back(std::move(t));
  }
  const auto text = manifest.dump();
  std::vector<uint8_t> bytes;
  bytes.reserve(sizeof(kMagic) + 12 + text.size() + offset);
  auto append = [&bytes](const void* p, size_t n) {
    const auto* b = static_cast<const uint8_t*>(p);
    bytes.insert(bytes.end(), b, b + n);
  };
  append(kMagic, sizeof(kMagic));
  const uint32_t version = TensorArchive::kFormatVersion;
  const uint64_t manifest_len = text.size();
  append(&version, sizeof(version));
  append(&manifest_len, sizeof(manifest_len));
  append(text.data(), text.size());
  for (const auto& t : blobs) append(t.data_ptr(), t.nbytes());
  write_file_atomic(path, bytes.data(), bytes.size());
}

TensorArchive read_archive(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  const size_t header = sizeof(kMagic) + sizeof(uint32_t) + sizeof(uint64_t);
  if (bytes.size() < header || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw std::runtime_error("archive: " + path.string() + " is not a TADMPACK file");
  }
  uint32_t version = 0;
  uint64_t manifest_len = 0;
  std::memcpy(&version, bytes.data() + sizeof(kMagic), sizeof(version));
  std::memcpy(&manifest_len, bytes.data() + sizeof(kMagic) + sizeof(version), sizeof(manifest_len));
  if (version != TensorArchive::kFormatVersion) {
    throw std::runtime_error("archive: unsupported format version " + std::to_string(version));
  }
  if (header + manifest_len > bytes.size()) throw std::runtime_error("archive: truncated manifest");
  const auto manifest = nlohmann::json::parse(bytes.begin() + header, bytes.begin() + header + manifest_len);
  const size_t data_start = header + manifest_len;

  TensorArchive archive;
  archive.meta = manifest.at("meta");
  for (const auto& blob : manifest.at("blobs")) {
    const auto offset = blob.at("offset").get<uint64_t>();
    const auto nbytes = blob.at("nbytes").get<uint64_t>();
    if (data_start + offset + nbytes > bytes.size()) throw std::runtime_error("archive: truncated blob");
    const auto* src = bytes.data() + data_start + offset;
    if (sha256_hex(src, nbytes) != blob.at("sha256").get<std::string>()) {
      throw std::runtime_error("archive: checksum mismatch for '" + blob.at("name").get<std::string>() + "'");
    }
    const auto shape = blob.at("shape").get<std::vector<int64_t>>();
    auto t = torch::empty(shape, dtype_from_name(blob.at("dtype").get<std::string>()));
    if (t.nbytes() != nbytes) throw std::runtime_error("archive: blob size does not match shape");
    std::memcpy(t.data_ptr(), src, nbytes);
    archive.tensors.emplace(blob.at("name").get<std::string>(), std::move(t));
  }
  return archive;
}

}  // namespace tadm
