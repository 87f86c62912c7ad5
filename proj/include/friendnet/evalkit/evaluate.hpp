#pragma once

// End-to-end evaluation: guidance from the frozen detector on the hazy input,
// restoration, image-quality metrics against the clean image, and detection
// metrics of the frozen detector on the restored output.

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "friendnet/dehazenet.hpp"
#include "friendnet/detector.hpp"
#include "friendnet/guidance.hpp"
#include "friendnet/image.hpp"
#include "json.hpp"

namespace friendnet::evalkit {

struct EvalSample {
  std::string id;
  Image clean;
  Image hazy;
  std::vector<DetectionTarget> annotations;
  /// Haze parameters used to make `hazy`, when known.
  std::optional<double> beta;
  double airlight = 0.5;
};

class Restorer {
 public:
  virtual ~Restorer() = default;
  [[nodiscard]] virtual std::string name() const = 0;
  /// Whether restore() reads the guidance mask; skips the detector pass when false.
  [[nodiscard]] virtual bool uses_guidance() const { return false; }
  virtual Image restore(const EvalSample& sample, const guidance::GuidanceMask& mask) = 0;
};

/// Output = input.
class IdentityRestorer : public Restorer {
 public:
  [[nodiscard]] std::string name() const override { return "identity"; }
  Image restore(const EvalSample& sample, const guidance::GuidanceMask& mask) override;
};

/// Closed-form inversion with the sample's true haze parameters. Throws when
/// the sample carries no beta.
class OracleRestorer : public Restorer {
 public:
  [[nodiscard]] std::string name() const override { return "oracle"; }
  Image restore(const EvalSample& sample, const guidance::GuidanceMask& mask) override;
};

class NetworkRestorer : public Restorer {
 public:
  explicit NetworkRestorer(dehazenet::DehazeNet<float>& net) : net_(net) {}
  [[nodiscard]] std::string name() const override { return "dehazenet"; }
  [[nodiscard]] bool uses_guidance() const override;
  Image restore(const EvalSample& sample, const guidance::GuidanceMask& mask) override;

 private:
  dehazenet::DehazeNet<float>& net_;
};

struct ItemResult {
  std::string id;
  std::optional<std::string> error;
  double psnr = 0.0;
  double ssim = 0.0;
  int detections = 0;
  int ground_truth = 0;
};

struct EvalReport {
  std::string model;
  int images = 0;     // successfully evaluated
  int instances = 0;  // ground-truth boxes over evaluated images
  int errors = 0;
  /// Unset when no image was evaluated.
  std::optional<double> psnr_mean;
  std::optional<double> ssim_mean;
  std::map<int, double> per_class_ap;
  std::optional<double> map50;
  std::vector<ItemResult> items;

  [[nodiscard]] nlohmann::json to_json() const;
  [[nodiscard]] std::string to_table() const;
  /// Per-image rows: id, psnr, ssim, detections, ground_truth, error.
  void write_csv(const std::filesystem::path& path) const;
};

/// Guidance mask for one hazy image, rendered at its size and normalized.
guidance::GuidanceMask detector_guidance(const detector::Detector& detector, const Image& hazy);

EvalReport evaluate(Restorer& model, const detector::Detector& detector, const std::vector<EvalSample>& samples);

/// Manifest records need image_path (clean) and hazy_path; beta is used by the
/// oracle. Unreadable or incomplete records become error rows.
EvalReport evaluate(Restorer& model, const detector::Detector& detector, const std::filesystem::path& manifest);

}  // namespace friendnet::evalkit
