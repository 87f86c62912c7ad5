#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "friendnet/tensor.hpp"

namespace friendnet {

/// Height x width x channels intensities, interleaved per pixel, nominally in [0, 1].
class Image {
 public:
  Image() = default;
  Image(int height, int width, int channels = 3, float fill = 0.0f)
      : height_(height), width_(width), channels_(channels),
        data_(static_cast<std::size_t>(height) * width * channels, fill) {
    if (height < 1 || width < 1 || channels < 1) {
      throw std::invalid_argument("Image: dimensions must be positive, got " + std::to_string(height) + "x" +
                                  std::to_string(width) + "x" + std::to_string(channels));
    }
  }

  [[nodiscard]] int height() const noexcept { return height_; }
  [[nodiscard]] int width() const noexcept { return width_; }
  [[nodiscard]] int channels() const noexcept { return channels_; }
  [[nodiscard]] std::size_t size() const noexcept { return data_.size(); }
  [[nodiscard]] bool empty() const noexcept { return data_.empty(); }

  float& at(int y, int x, int c) noexcept { return data_[(static_cast<std::size_t>(y) * width_ + x) * channels_ + c]; }
  [[nodiscard]] float at(int y, int x, int c) const noexcept {
    return data_[(static_cast<std::size_t>(y) * width_ + x) * channels_ + c];
  }
  float* data() noexcept { return data_.data(); }
  [[nodiscard]] const float* data() const noexcept { return data_.data(); }
  std::vector<float>& values() noexcept { return data_; }
  [[nodiscard]] const std::vector<float>& values() const noexcept { return data_; }

  /// Every value finite and inside [0, 1].
  [[nodiscard]] bool in_unit_range() const noexcept {
    for (float v : data_) {
      if (!std::isfinite(v) || v < 0.0f || v > 1.0f) return false;
    }
    return true;
  }

  [[nodiscard]] bool same_dims(const Image& o) const noexcept {
    return height_ == o.height_ && width_ == o.width_ && channels_ == o.channels_;
  }

 private:
  int height_ = 0;
  int width_ = 0;
  int channels_ = 0;
  std::vector<float> data_;
};

/// Single-channel float field (depth, transmission, guidance).
struct Plane {
  int height = 0;
  int width = 0;
  std::vector<float> values;

  Plane() = default;
  Plane(int h, int w, float fill = 0.0f) : height(h), width(w), values(static_cast<std::size_t>(h) * w, fill) {}

  float& at(int y, int x) noexcept { return values[static_cast<std::size_t>(y) * width + x]; }
  [[nodiscard]] float at(int y, int x) const noexcept { return values[static_cast<std::size_t>(y) * width + x]; }
};

/// Packs equally sized images into an (N, C, H, W) tensor.
template <typename T>
Tensor<T> images_to_tensor(const std::vector<Image>& batch) {
  if (batch.empty()) throw std::invalid_argument("images_to_tensor: empty batch");
  const Image& first = batch.front();
  Tensor<T> t(static_cast<int>(batch.size()), first.channels(), first.height(), first.width());
  for (int n = 0; n < t.n(); ++n) {
    const Image& im = batch[static_cast<std::size_t>(n)];
    if (!im.same_dims(first)) throw std::invalid_argument("images_to_tensor: mixed image sizes in batch");
    for (int c = 0; c < t.c(); ++c) {
      T* p = t.plane(n, c);
      for (int y = 0; y < t.h(); ++y) {
        for (int x = 0; x < t.w(); ++x) p[static_cast<std::size_t>(y) * t.w() + x] = static_cast<T>(im.at(y, x, c));
      }
    }
  }
  return t;
}

template <typename T>
Image tensor_to_image(const Tensor<T>& t, int n) {
  Image im(t.h(), t.w(), t.c());
  for (int c = 0; c < t.c(); ++c) {
    const T* p = t.plane(n, c);
    for (int y = 0; y < t.h(); ++y) {
      for (int x = 0; x < t.w(); ++x) im.at(y, x, c) = static_cast<float>(p[static_cast<std::size_t>(y) * t.w() + x]);
    }
  }
  return im;
}

}  // namespace friendnet
