#pragma once

// Single-scale anchor-free grid detector, its loss, and the frozen handle the
// dehazer trains against.
//
// Raw predictions are an (N, 5 + K, H/8, W/8) tensor. Channel layout per cell:
//   0        objectness logit
//   1..K     class logits
//   K+1..K+4 box parameters tx, ty, tw, th
// A cell (i, j) decodes to centre ((j + sigmoid(tx)) * 8, (i + sigmoid(ty)) * 8)
// and size (8 * exp(tw), 8 * exp(th)).

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "friendnet/boxes.hpp"
#include "friendnet/checkpoint.hpp"
#include "friendnet/image.hpp"
#include "friendnet/nn/module.hpp"
#include "json.hpp"

namespace friendnet::detector {

inline constexpr int kStride = 8;
/// tw/th are clamped to this magnitude before exp().
inline constexpr double kMaxLogScale = 4.0;

struct DetLossWeights {
  double box = 0.05;
  double obj = 1.0;
  double cls = 0.5;
  void validate() const;
};

struct DetectorConfig {
  int num_classes = 3;
  int width = 16;  // channels of the first stage; later stages use 2x and 4x
  void validate() const;
};

nlohmann::json to_json(const DetectorConfig& config);
DetectorConfig detector_config_from_json(const nlohmann::json& j);

template <typename T>
class GridDetector : public nn::Module<T> {
 public:
  GridDetector(const DetectorConfig& config, Rng& rng);

  /// images: (N, 3, H, W) with H and W multiples of kStride.
  nn::Var<T> forward(const nn::Var<T>& images) const;

  [[nodiscard]] const DetectorConfig& config() const noexcept { return config_; }

 private:
  DetectorConfig config_;
  std::vector<nn::Conv2d<T>*> body_;
  nn::Conv2d<T>* head_;
};

struct DecodeOptions {
  double conf_threshold = 0.25;
  double nms_iou = 0.45;
};

/// Detections of image `n`, clipped to the image, sorted by descending score.
template <typename T>
std::vector<Detection> decode(const Tensor<T>& pred, int n, int num_classes, const DecodeOptions& options = {});

/// Greedy per-class non-maximum suppression; input order breaks score ties.
std::vector<Detection> nms(std::vector<Detection> detections, double iou_threshold);

/// Index (row, col) of the positive cell for every target of one image after
/// collision resolution; targets that lose a collision map to (-1, -1).
std::vector<std::pair<int, int>> assign_cells(const std::vector<DetectionTarget>& targets, int grid_h, int grid_w);

/// Breakdown of one evaluation of the loss.
struct DetLossParts {
  double box = 0.0;
  double obj = 0.0;
  double cls = 0.0;
  int positives = 0;
};

/// L = w.box * mean(1 - IoU) + w.obj * mean BCE(objectness) + w.cls * mean CE(classes).
/// Box and class terms average over positive cells across the batch, the
/// objectness term over every cell. `targets[n]` belongs to image n.
template <typename T>
nn::Var<T> detection_loss(const nn::Var<T>& pred, const std::vector<std::vector<DetectionTarget>>& targets,
                          const DetLossWeights& weights, int num_classes, DetLossParts* parts = nullptr);

/// Anything that can turn an image into detections.
class Detector {
 public:
  virtual ~Detector() = default;
  [[nodiscard]] virtual std::vector<Detection> detect(const Image& image) const = 0;
  [[nodiscard]] virtual int num_classes() const = 0;
};

/// Pre-trained grid detector with immutable weights. Gradients flow through
/// forward() to its input but never reach its parameters.
class FrozenDetector : public Detector {
 public:
  /// Throws CheckpointError on checksum mismatch or a non-detector checkpoint.
  static std::shared_ptr<FrozenDetector> load(const std::filesystem::path& checkpoint);
  static std::shared_ptr<FrozenDetector> from_checkpoint(const Checkpoint& checkpoint);

  nn::Var<float> forward(const nn::Var<float>& images) const;
  [[nodiscard]] std::vector<Detection> detect(const Image& image) const override;
  /// Any image size; non-multiples of kStride are edge-padded for the forward pass.
  [[nodiscard]] std::vector<Detection> detect_batch(const Tensor<float>& images, int n) const;
  [[nodiscard]] int num_classes() const override { return net_->config().num_classes; }

  /// FNV-1a over the weights, recomputed on every call.
  [[nodiscard]] std::uint64_t checksum() const;
  /// True when no parameter has ever received a gradient.
  [[nodiscard]] bool gradients_empty() const;

  DecodeOptions decode_options;
  [[nodiscard]] const GridDetector<float>& network() const noexcept { return *net_; }

 private:
  FrozenDetector(const DetectorConfig& config);
  std::unique_ptr<GridDetector<float>> net_;
};

/// Detections produced elsewhere (for example a real YOLO run through an
/// adapter script), read from a JSONL file of {image_path, detections}.
class ExternalDetections {
 public:
  explicit ExternalDetections(const std::filesystem::path& jsonl);
  /// Empty when the image is not listed.
  [[nodiscard]] std::vector<Detection> lookup(const std::string& image_path) const;

 private:
  std::vector<std::pair<std::string, std::vector<Detection>>> records_;
};

struct PretrainConfig {
  DetectorConfig net;
  DetLossWeights weights;
  int steps = 500;
  int batch_size = 8;
  double lr = 3e-3;
  double lr_floor = 1e-5;
  double weight_decay = 0.01;
  /// Fraction of training images hazed on the fly (training beta range).
  double haze_probability = 0.5;
  std::uint64_t seed = 0;
};

struct PretrainResult {
  Checkpoint checkpoint;
  std::vector<double> losses;
};

/// Trains on clean images (optionally hazed) listed in a manifest with
/// annotations. Throws std::invalid_argument when no record has annotations.
PretrainResult pretrain_detector(const std::filesystem::path& manifest, const PretrainConfig& config);

nlohmann::json to_json(const PretrainConfig& config);
/// Flat keys (num_classes, width, lambda_box, ..., seed) or a nested "net";
/// unknown keys throw.
PretrainConfig pretrain_config_from_json(const nlohmann::json& j, const PretrainConfig& base = {});

}  // namespace friendnet::detector
