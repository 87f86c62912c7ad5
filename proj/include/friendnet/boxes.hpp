#pragma once

#include <algorithm>

namespace friendnet {

/// Axis-aligned box in pixel coordinates; pixel (x, y) covers [x, x+1) x [y, y+1).
struct BBox {
  float xmin = 0.0f;
  float ymin = 0.0f;
  float xmax = 0.0f;
  float ymax = 0.0f;

  [[nodiscard]] float width() const noexcept { return xmax - xmin; }
  [[nodiscard]] float height() const noexcept { return ymax - ymin; }
  [[nodiscard]] float area() const noexcept { return width() * height(); }
  [[nodiscard]] bool valid() const noexcept { return xmax > xmin && ymax > ymin; }
  [[nodiscard]] float center_x() const noexcept { return 0.5f * (xmin + xmax); }
  [[nodiscard]] float center_y() const noexcept { return 0.5f * (ymin + ymax); }

  [[nodiscard]] BBox clipped(float width_limit, float height_limit) const noexcept {
    return BBox{std::clamp(xmin, 0.0f, width_limit), std::clamp(ymin, 0.0f, height_limit),
                std::clamp(xmax, 0.0f, width_limit), std::clamp(ymax, 0.0f, height_limit)};
  }
  friend bool operator==(const BBox&, const BBox&) = default;
};

struct Detection {
  int class_id = 0;
  float score = 0.0f;
  BBox box;
  friend bool operator==(const Detection&, const Detection&) = default;
};

struct DetectionTarget {
  int class_id = 0;
  BBox box;
  friend bool operator==(const DetectionTarget&, const DetectionTarget&) = default;
};

}  // namespace friendnet
