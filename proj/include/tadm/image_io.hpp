#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "tadm/image.hpp"

namespace tadm {

// 8-bit RGB PNG. Text chunks are stored as uncompressed tEXt entries.
struct PngFile {
  Image image;  // kByte
  std::map<std::string, std::string> text;
};

std::vector<uint8_t> encode_png(const Image& img, const std::map<std::string, std::string>& text = {});
PngFile decode_png(const std::vector<uint8_t>& bytes);

void write_png(const std::filesystem::path& path, const Image& img,
               const std::map<std::string, std::string>& text = {});
PngFile read_png(const std::filesystem::path& path);

// Baseline JPEG at integer quality 1..100 (4:2:0 chroma, libjpeg defaults).
std::vector<uint8_t> encode_jpeg(const Image& img, int quality);
Image decode_jpeg(const std::vector<uint8_t>& bytes);

// Any range in, interleaved RGB bytes out (kSigned inputs are quantized).
std::vector<uint8_t> to_rgb_bytes(const Image& img);
Image from_rgb_bytes(const uint8_t* data, int64_t height, int64_t width);

std::vector<uint8_t> read_file(const std::filesystem::path& path);
// Writes to a sibling temporary file and renames it into place.
void write_file_atomic(const std::filesystem::path& path, const void* data, size_t size);

}  // namespace tadm
