#pragma once

// Line-delimited JSON manifests shared by dataset generation, haze synthesis,
// training and evaluation. One record per line:
//   {"image_path": "...", "hazy_path": "...", "beta": 0.09,
//    "annotations": [{"class_id": 0, "bbox": [xmin, ymin, xmax, ymax]}]}
// hazy_path, beta and error are optional. Relative paths resolve against the
// directory holding the manifest.

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "friendnet/boxes.hpp"

namespace friendnet {

class ManifestError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ManifestRecord {
  std::string image_path;
  std::optional<std::string> hazy_path;
  std::optional<double> beta;
  std::vector<DetectionTarget> annotations;
  std::optional<std::string> error;

  friend bool operator==(const ManifestRecord&, const ManifestRecord&) = default;
};

nlohmann::json to_json(const ManifestRecord& record);
ManifestRecord record_from_json(const nlohmann::json& j);

nlohmann::json to_json(const BBox& box);
BBox bbox_from_json(const nlohmann::json& j);
nlohmann::json to_json(const Detection& det);
Detection detection_from_json(const nlohmann::json& j);

std::vector<ManifestRecord> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestRecord>& records);

/// Resolves a manifest-relative path.
std::filesystem::path resolve_path(const std::filesystem::path& manifest_path, const std::string& entry);

/// Detections emitted by any detector (including out-of-process ones), one
/// JSON line per image: {"image_path": "...", "detections": [{"class_id",
/// "score", "bbox"}]}.
struct DetectionRecord {
  std::string image_path;
  std::vector<Detection> detections;
};
std::vector<DetectionRecord> read_detections(const std::filesystem::path& path);
void write_detections(const std::filesystem::path& path, const std::vector<DetectionRecord>& records);

}  // namespace friendnet
