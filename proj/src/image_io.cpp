#include "tadm/image_io.hpp"

#include <png.h>
#include <jpeglib.h>

#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <stdexcept>

namespace tadm {

namespace fs = std::filesystem;

std::vector<uint8_t> to_rgb_bytes(const Image& img) {
  auto levels = img.range() == ValueRange::kByte ? img.data() : quantize_tensor(img.data());
  auto hwc = levels.permute({1, 2, 0}).contiguous().to(torch::kUInt8);
  std::vector<uint8_t> out(static_cast<size_t>(hwc.numel()));
  std::memcpy(out.data(), hwc.data_ptr<uint8_t>(), out.size());
  return out;
}

Image from_rgb_bytes(const uint8_t* data, int64_t height, int64_t width) {
  auto hwc = torch::from_blob(const_cast<uint8_t*>(data), {height, width, 3}, torch::kUInt8);
  return Image(hwc.permute({2, 0, 1}).to(torch::kFloat32).contiguous(), ValueRange::kByte);
}

std::vector<uint8_t> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_atomic(const fs::path& path, const void* data, size_t size) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
    if (!out) throw std::runtime_error("short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

// ---------------------------------------------------------------------------
// PNG

namespace {

struct PngIo {
  std::vector<uint8_t>* out = nullptr;
  const std::vector<uint8_t>* in = nullptr;
  size_t pos = 0;
  char message[256] = {};
};

void png_write_cb(png_structp png, png_bytep data, png_size_t len) {
  auto* io = static_cast<PngIo*>(png_get_io_ptr(png));
  io->out->insert(io->out->end(), data, data + len);
}

void png_flush_cb(png_structp) {}

void png_read_cb(png_structp png, png_bytep data, png_size_t len) {
  auto* io = static_cast<PngIo*>(png_get_io_ptr(png));
  if (io->pos + len > io->in->size()) png_error(png, "truncated PNG");
  std::memcpy(data, io->in->data() + io->pos, len);
  io->pos += len;
}

void png_error_cb(png_structp png, png_const_charp msg) {
  auto* io = static_cast<PngIo*>(png_get_error_ptr(png));
  std::snprintf(io->message, sizeof(io->message), "%s", msg);
  png_longjmp(png, 1);
}

void png_warning_cb(png_structp, png_const_charp) {}

}  // namespace

std::vector<uint8_t> encode_png(const Image& img, const std::map<std::string, std::string>& text) {
  const auto rgb = to_rgb_bytes(img);
  const auto h = static_cast<png_uint_32>(img.height());
  const auto w = static_cast<png_uint_32>(img.width());
  std::vector<uint8_t> out;
  PngIo io;
  io.out = &out;

  std::vector<png_text> chunks;
  chunks.reserve(text.size());
  for (const auto& [key, value] : text) {
    png_text t{};
    t.compression = PNG_TEXT_COMPRESSION_NONE;
    t.key = const_cast<char*>(key.c_str());
    t.text = const_cast<char*>(value.c_str());
    t.text_length = value.size();
    chunks.push_back(t);
  }
  std::vector<png_bytep> rows(h);
  for (png_uint_32 y = 0; y < h; ++y) rows[y] = const_cast<png_bytep>(rgb.data() + static_cast<size_t>(y) * w * 3);

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &io, png_error_cb, png_warning_cb);
  if (!png) throw std::runtime_error("png: cannot create write struct");
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error(std::string("png: ") + io.message);
  }
  png_set_write_fn(png, &io, png_write_cb, png_flush_cb);
  png_set_IHDR(png, info, w, h, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_set_compression_level(png, 9);
  if (!chunks.empty()) png_set_text(png, info, chunks.data(), static_cast<int>(chunks.size()));
  png_set_rows(png, info, rows.data());
  png_write_png(png, info, PNG_TRANSFORM_IDENTITY, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

PngFile decode_png(const std::vector<uint8_t>& bytes) {
  if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) throw std::runtime_error("png: bad signature");
  PngIo io;
  io.in = &bytes;
  std::vector<uint8_t> rgb;
  std::map<std::string, std::string> text_chunks;
  png_uint_32 h = 0;
  png_uint_32 w = 0;

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &io, png_error_cb, png_warning_cb);
  if (!png) throw std::runtime_error("png: cannot create read struct");
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error(std::string("png: ") + io.message);
  }
  png_set_read_fn(png, &io, png_read_cb);
  png_read_png(png, info,
               PNG_TRANSFORM_STRIP_16 | PNG_TRANSFORM_STRIP_ALPHA | PNG_TRANSFORM_PACKING | PNG_TRANSFORM_EXPAND |
                   PNG_TRANSFORM_GRAY_TO_RGB,
               nullptr);
  h = png_get_image_height(png, info);
  w = png_get_image_width(png, info);
  const bool rgb_layout = png_get_channels(png, info) == 3;
  if (rgb_layout) {
    auto rows = png_get_rows(png, info);
    rgb.resize(static_cast<size_t>(h) * w * 3);
    for (png_uint_32 y = 0; y < h; ++y) std::memcpy(rgb.data() + static_cast<size_t>(y) * w * 3, rows[y], w * 3);
    png_textp text = nullptr;
    int count = 0;
    png_get_text(png, info, &text, &count);
    for (int i = 0; i < count; ++i) text_chunks[text[i].key] = std::string(text[i].text, text[i].text_length);
  }
  png_destroy_read_struct(&png, &info, nullptr);
  if (!rgb_layout) throw std::runtime_error("png: expected RGB after transforms");
  return PngFile{from_rgb_bytes(rgb.data(), h, w), std::move(text_chunks)};
}

void write_png(const fs::path& path, const Image& img, const std::map<std::string, std::string>& text) {
  const auto bytes = encode_png(img, text);
  write_file_atomic(path, bytes.data(), bytes.size());
}

PngFile read_png(const fs::path& path) { return decode_png(read_file(path)); }

// ---------------------------------------------------------------------------
// JPEG

namespace {

struct JpegError {
  jpeg_error_mgr mgr;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegError*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}

}  // namespace

std::vector<uint8_t> encode_jpeg(const Image& img, int quality) {
  if (quality < 1 || quality > 100) throw std::invalid_argument("encode_jpeg: quality must be in 1..100");
  const auto rgb = to_rgb_bytes(img);
  jpeg_compress_struct cinfo{};
  JpegError err{};
  cinfo.err = jpeg_std_error(&err.mgr);
  err.mgr.error_exit = jpeg_error_exit;
  unsigned char* buffer = nullptr;
  unsigned long size = 0;
  if (setjmp(err.jump)) {
    jpeg_destroy_compress(&cinfo);
    std::free(buffer);
    throw std::runtime_error(std::string("jpeg: ") + err.message);
  }
  jpeg_create_compress(&cinfo);
  jpeg_mem_dest(&cinfo, &buffer, &size);
  cinfo.image_width = static_cast<JDIMENSION>(img.width());
  cinfo.image_height = static_cast<JDIMENSION>(img.height());
  cinfo.input_components = 3;
  cinfo.in_color_space = JCS_RGB;
  jpeg_set_defaults(&cinfo);
  jpeg_set_quality(&cinfo, quality, TRUE);
  jpeg_start_compress(&cinfo, TRUE);
  const auto stride = static_cast<size_t>(img.width()) * 3;
  while (cinfo.next_scanline < cinfo.image_height) {
    JSAMPROW row = const_cast<JSAMPROW>(rgb.data() + cinfo.next_scanline * stride);
    jpeg_write_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_compress(&cinfo);
  std::vector<uint8_t> out(buffer, buffer + size);
  jpeg_destroy_compress(&cinfo);
  std::free(buffer);
  return out;
}

Image decode_jpeg(const std::vector<uint8_t>& bytes) {
  jpeg_decompress_struct cinfo{};
  JpegError err{};
  cinfo.err = jpeg_std_error(&err.mgr);
  err.mgr.error_exit = jpeg_error_exit;
  std::vector<uint8_t> rgb;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw std::runtime_error(std::string("jpeg: ") + err.message);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  const auto w = cinfo.output_width;
  const auto h = cinfo.output_height;
  rgb.resize(static_cast<size_t>(w) * h * 3);
  while (cinfo.output_scanline < h) {
    JSAMPROW row = rgb.data() + static_cast<size_t>(cinfo.output_scanline) * w * 3;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return from_rgb_bytes(rgb.data(), h, w);
}

}  // namespace tadm
