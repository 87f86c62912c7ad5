#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <vector>

#include "friendnet/image.hpp"

namespace friendnet {

class ImageIoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Reads an 8- or 16-bit PNG as RGB scaled to [0, 1]. Gray inputs are
/// replicated to three channels; alpha is dropped.
Image read_png(const std::filesystem::path& path);

/// Writes an RGB (or gray) image as 8-bit PNG, value = round(clamp(v) * 255).
void write_png(const std::filesystem::path& path, const Image& image);

/// Raw 16-bit single-channel samples.
struct Gray16 {
  int height = 0;
  int width = 0;
  std::vector<std::uint16_t> samples;
};

void write_png_gray16(const std::filesystem::path& path, const Gray16& image);
Gray16 read_png_gray16(const std::filesystem::path& path);

}  // namespace friendnet
