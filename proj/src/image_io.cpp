#include "friendnet/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <memory>
#include <string>

namespace friendnet {
namespace {

struct FileCloser {
  void operator()(std::FILE* f) const noexcept {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.string().c_str(), mode));
  if (!f) throw ImageIoError("cannot open " + path.string());
  return f;
}

struct RawPng {
  int width = 0;
  int height = 0;
  int channels = 0;
  int bit_depth = 0;
  std::vector<std::uint16_t> samples;  // row-major, interleaved
};

// Every object with a destructor is created before setjmp so a longjmp out
// of libpng never skips a destructor.
bool decode(std::FILE* fp, RawPng& out, std::vector<unsigned char>& buffer, std::vector<png_bytep>& rows) {
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) return false;
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    return false;
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    return false;
  }
  png_init_io(png, fp);
  png_read_info(png, info);
  const png_byte color = png_get_color_type(png, info);
  const png_byte depth = png_get_bit_depth(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  png_set_strip_alpha(png);
  if (depth == 16) png_set_swap(png);
  png_read_update_info(png, info);

  out.width = static_cast<int>(png_get_image_width(png, info));
  out.height = static_cast<int>(png_get_image_height(png, info));
  out.channels = png_get_channels(png, info);
  out.bit_depth = png_get_bit_depth(png, info);
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  buffer.resize(rowbytes * static_cast<std::size_t>(out.height));
  rows.resize(static_cast<std::size_t>(out.height));
  for (int y = 0; y < out.height; ++y) rows[static_cast<std::size_t>(y)] = buffer.data() + rowbytes * y;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return true;
}

RawPng read_raw(const std::filesystem::path& path) {
  FilePtr fp = open_file(path, "rb");
  RawPng raw;
  std::vector<unsigned char> buffer;
  std::vector<png_bytep> rows;
  if (!decode(fp.get(), raw, buffer, rows)) throw ImageIoError("not a readable PNG: " + path.string());
  const std::size_t count = static_cast<std::size_t>(raw.width) * raw.height * raw.channels;
  raw.samples.resize(count);
  if (raw.bit_depth == 16) {
    for (std::size_t i = 0; i < count; ++i) {
      raw.samples[i] = static_cast<std::uint16_t>(buffer[2 * i] | (buffer[2 * i + 1] << 8));
    }
  } else {
    for (std::size_t i = 0; i < count; ++i) raw.samples[i] = buffer[i];
  }
  return raw;
}

bool encode(std::FILE* fp, int width, int height, int color_type, int bit_depth, std::vector<png_bytep>& rows) {
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) return false;
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    return false;
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    return false;
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), bit_depth, color_type,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  if (bit_depth == 16) png_set_swap(png);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return true;
}

void write_raw(const std::filesystem::path& path, int width, int height, int channels, int bit_depth,
               std::vector<unsigned char>& buffer) {
  const int color = channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB;
  const std::size_t rowbytes = static_cast<std::size_t>(width) * channels * (bit_depth / 8);
  std::vector<png_bytep> rows(static_cast<std::size_t>(height));
  for (int y = 0; y < height; ++y) rows[static_cast<std::size_t>(y)] = buffer.data() + rowbytes * y;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  FilePtr fp = open_file(path, "wb");
  if (!encode(fp.get(), width, height, color, bit_depth, rows)) throw ImageIoError("PNG encode failed: " + path.string());
}

}  // namespace

Image read_png(const std::filesystem::path& path) {
  const RawPng raw = read_raw(path);
  const float scale = raw.bit_depth == 16 ? 1.0f / 65535.0f : 1.0f / 255.0f;
  Image im(raw.height, raw.width, 3);
  for (int y = 0; y < raw.height; ++y) {
    for (int x = 0; x < raw.width; ++x) {
      const std::size_t base = (static_cast<std::size_t>(y) * raw.width + x) * raw.channels;
      for (int c = 0; c < 3; ++c) {
        const int src = raw.channels >= 3 ? c : 0;
        im.at(y, x, c) = static_cast<float>(raw.samples[base + src]) * scale;
      }
    }
  }
  return im;
}

void write_png(const std::filesystem::path& path, const Image& image) {
  if (image.channels() != 1 && image.channels() != 3) throw ImageIoError("write_png: need 1 or 3 channels");
  std::vector<unsigned char> buffer(image.size());
  for (std::size_t i = 0; i < image.size(); ++i) {
    const float v = std::clamp(image.values()[i], 0.0f, 1.0f);
    buffer[i] = static_cast<unsigned char>(std::lround(v * 255.0f));
  }
  write_raw(path, image.width(), image.height(), image.channels(), 8, buffer);
}

void write_png_gray16(const std::filesystem::path& path, const Gray16& image) {
  std::vector<unsigned char> buffer(image.samples.size() * 2);
  for (std::size_t i = 0; i < image.samples.size(); ++i) {
    buffer[2 * i] = static_cast<unsigned char>(image.samples[i] & 0xff);
    buffer[2 * i + 1] = static_cast<unsigned char>(image.samples[i] >> 8);
  }
  write_raw(path, image.width, image.height, 1, 16, buffer);
}

Gray16 read_png_gray16(const std::filesystem::path& path) {
  RawPng raw = read_raw(path);
  if (raw.channels != 1 || raw.bit_depth != 16) throw ImageIoError("expected 16-bit gray PNG: " + path.string());
  return Gray16{raw.height, raw.width, std::move(raw.samples)};
}

}  // namespace friendnet
