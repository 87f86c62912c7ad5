#pragma once

#include <map>
#include <vector>

#include "friendnet/boxes.hpp"
#include "friendnet/image.hpp"

namespace friendnet::evalkit {

/// PSNR reported when the two images are identical.
inline constexpr double kPsnrCap = 100.0;

/// 10 log10(1 / MSE) over all pixels and channels, peak 1.
double psnr(const Image& a, const Image& b);

struct SsimOptions {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 1.0;
};

/// Gaussian-window SSIM per channel, averaged over valid window positions
/// and then over channels.
double ssim(const Image& a, const Image& b, const SsimOptions& options = {});

/// Intersection over union; throws std::invalid_argument on degenerate boxes.
double iou(const BBox& a, const BBox& b);

/// One image's worth of predictions and ground truth.
struct ImageDetections {
  std::vector<Detection> detections;
  std::vector<DetectionTarget> ground_truth;
};

struct ApResult {
  double ap = 0.0;
  int num_ground_truth = 0;
  /// False when the class has no ground truth (ap is then reported as 0).
  bool defined = false;
};

/// Average precision of one class over a set of images. Detections are
/// ranked by score (stable for ties); each is matched to the unmatched
/// same-image ground truth of highest IoU, and counts as a true positive
/// when that IoU reaches the threshold. AP is the area under the
/// all-points-interpolated precision/recall curve.
ApResult average_precision(const std::vector<ImageDetections>& images, int class_id, double iou_threshold = 0.5);

/// Single-image convenience overload (all boxes treated as one class).
ApResult average_precision(const std::vector<Detection>& detections, const std::vector<DetectionTarget>& ground_truth,
                           double iou_threshold = 0.5);

/// Per-class AP for every class that has ground truth, and their mean.
struct MapResult {
  std::map<int, double> per_class_ap;
  double map = 0.0;
  int instances = 0;
};
MapResult mean_average_precision(const std::vector<ImageDetections>& images, double iou_threshold = 0.5);

}  // namespace friendnet::evalkit
