#pragma once

// Detector predictions rendered as a single-channel guidance image: pixels
// inside a predicted box carry (class_id + 1) * score, all others 0.

#include <filesystem>
#include <vector>

#include "friendnet/boxes.hpp"
#include "friendnet/image.hpp"

namespace friendnet::guidance {

struct GuidanceMask {
  Plane plane;
  int num_classes = 1;
  bool normalized = false;

  [[nodiscard]] int height() const noexcept { return plane.height; }
  [[nodiscard]] int width() const noexcept { return plane.width; }
};

/// A pixel belongs to a box when its centre (x + 0.5, y + 0.5) lies in
/// [xmin, xmax) x [ymin, ymax). Where boxes overlap the highest-score
/// detection wins, ties going to the larger class_id.
GuidanceMask render_guidance(const std::vector<Detection>& detections, int height, int width, int num_classes);

/// Divides by num_classes so values land in [0, 1].
GuidanceMask normalize_guidance(const GuidanceMask& mask);

/// Area-average resampling (up or down); identity when the size already matches.
GuidanceMask resample_guidance(const GuidanceMask& mask, int target_height, int target_width);

/// Area-average resampling of a raw single-channel plane.
void resample_area(const float* src, int src_h, int src_w, float* dst, int dst_h, int dst_w);

/// Writes stored = round(value * 65535) as 16-bit gray PNG plus a JSON
/// sidecar (<png>.json) recording num_classes and the scale. Requires a
/// normalized mask.
void export_mask(const std::filesystem::path& png_path, const GuidanceMask& mask);
GuidanceMask import_mask(const std::filesystem::path& png_path);

}  // namespace friendnet::guidance
