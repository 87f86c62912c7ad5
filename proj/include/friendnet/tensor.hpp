#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace friendnet {

/// Dense 4-D array in NCHW order. Every tensor in the library is rank 4;
/// scalars are 1x1x1x1 and per-channel vectors are Nx Cx1x1.
struct Shape {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;

  [[nodiscard]] std::size_t numel() const noexcept {
    return static_cast<std::size_t>(n) * static_cast<std::size_t>(c) * static_cast<std::size_t>(h) *
           static_cast<std::size_t>(w);
  }
  [[nodiscard]] std::size_t plane() const noexcept {
    return static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
  }
  [[nodiscard]] std::string str() const {
    return "[" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
           std::to_string(w) + "]";
  }
  friend bool operator==(const Shape&, const Shape&) = default;
};

template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0)) : shape_(shape), data_(shape.numel(), fill) {
    if (shape.n < 0 || shape.c < 0 || shape.h < 0 || shape.w < 0) {
      throw std::invalid_argument("Tensor: negative dimension in " + shape.str());
    }
  }
  Tensor(int n, int c, int h, int w, T fill = T(0)) : Tensor(Shape{n, c, h, w}, fill) {}

  static Tensor scalar(T v) { return Tensor(1, 1, 1, 1, v); }

  [[nodiscard]] const Shape& shape() const noexcept { return shape_; }
  [[nodiscard]] int n() const noexcept { return shape_.n; }
  [[nodiscard]] int c() const noexcept { return shape_.c; }
  [[nodiscard]] int h() const noexcept { return shape_.h; }
  [[nodiscard]] int w() const noexcept { return shape_.w; }
  [[nodiscard]] std::size_t size() const noexcept { return data_.size(); }
  [[nodiscard]] bool empty() const noexcept { return data_.empty(); }

  [[nodiscard]] T* data() noexcept { return data_.data(); }
  [[nodiscard]] const T* data() const noexcept { return data_.data(); }
  [[nodiscard]] std::span<T> span() noexcept { return data_; }
  [[nodiscard]] std::span<const T> span() const noexcept { return data_; }
  [[nodiscard]] std::vector<T>& vec() noexcept { return data_; }
  [[nodiscard]] const std::vector<T>& vec() const noexcept { return data_; }

  [[nodiscard]] std::size_t offset(int n, int c, int y, int x) const noexcept {
    return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + y) * shape_.w + x;
  }
  T& at(int n, int c, int y, int x) noexcept { return data_[offset(n, c, y, x)]; }
  const T& at(int n, int c, int y, int x) const noexcept { return data_[offset(n, c, y, x)]; }
  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  /// Pointer to the HxW plane of (n, c).
  T* plane(int n, int c) noexcept { return data_.data() + offset(n, c, 0, 0); }
  const T* plane(int n, int c) const noexcept { return data_.data() + offset(n, c, 0, 0); }

  [[nodiscard]] T item() const {
    if (data_.size() != 1) throw std::logic_error("Tensor::item on non-scalar " + shape_.str());
    return data_[0];
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  /// Same data, new shape with identical element count.
  [[nodiscard]] Tensor reshaped(Shape s) const {
    if (s.numel() != data_.size()) throw std::invalid_argument("Tensor::reshaped: size mismatch");
    Tensor out;
    out.shape_ = s;
    out.data_ = data_;
    return out;
  }

  template <typename U>
  [[nodiscard]] Tensor<U> cast() const {
    Tensor<U> out(shape_);
    std::transform(data_.begin(), data_.end(), out.data(), [](T v) { return static_cast<U>(v); });
    return out;
  }

 private:
  Shape shape_{};
  std::vector<T> data_;
};

}  // namespace friendnet
