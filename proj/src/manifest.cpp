#include "friendnet/manifest.hpp"

#include <fstream>

namespace friendnet {

using nlohmann::json;

json to_json(const BBox& box) { return json::array({box.xmin, box.ymin, box.xmax, box.ymax}); }

BBox bbox_from_json(const json& j) {
  if (!j.is_array() || j.size() != 4) throw ManifestError("bbox must be [xmin, ymin, xmax, ymax]");
  BBox b{j[0].get<float>(), j[1].get<float>(), j[2].get<float>(), j[3].get<float>()};
  if (!b.valid()) throw ManifestError("bbox requires xmax > xmin and ymax > ymin");
  return b;
}

json to_json(const Detection& det) {
  return json{{"class_id", det.class_id}, {"score", det.score}, {"bbox", to_json(det.box)}};
}

Detection detection_from_json(const json& j) {
  Detection d;
  d.class_id = j.at("class_id").get<int>();
  d.score = j.at("score").get<float>();
  d.box = bbox_from_json(j.at("bbox"));
  if (d.class_id < 0) throw ManifestError("class_id must be non-negative");
  if (!(d.score >= 0.0f && d.score <= 1.0f)) throw ManifestError("score must lie in [0, 1]");
  return d;
}

json to_json(const ManifestRecord& r) {
  json j;
  j["image_path"] = r.image_path;
  if (r.hazy_path) j["hazy_path"] = *r.hazy_path;
  if (r.beta) j["beta"] = *r.beta;
  json ann = json::array();
  for (const auto& a : r.annotations) ann.push_back(json{{"class_id", a.class_id}, {"bbox", to_json(a.box)}});
  j["annotations"] = std::move(ann);
  if (r.error) j["error"] = *r.error;
  return j;
}

ManifestRecord record_from_json(const json& j) {
  ManifestRecord r;
  r.image_path = j.at("image_path").get<std::string>();
  if (j.contains("hazy_path") && !j["hazy_path"].is_null()) r.hazy_path = j["hazy_path"].get<std::string>();
  if (j.contains("beta") && !j["beta"].is_null()) r.beta = j["beta"].get<double>();
  if (j.contains("annotations")) {
    for (const auto& a : j["annotations"]) {
      DetectionTarget t{a.at("class_id").get<int>(), bbox_from_json(a.at("bbox"))};
      if (t.class_id < 0) throw ManifestError("class_id must be non-negative");
      r.annotations.push_back(t);
    }
  }
  if (j.contains("error") && !j["error"].is_null()) r.error = j["error"].get<std::string>();
  return r;
}

std::vector<ManifestRecord> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ManifestError("cannot open manifest " + path.string());
  std::vector<ManifestRecord> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(record_from_json(json::parse(line)));
    } catch (const std::exception& e) {
      throw ManifestError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestRecord>& records) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ManifestError("cannot write manifest " + path.string());
  for (const auto& r : records) out << to_json(r).dump() << '\n';
}

std::filesystem::path resolve_path(const std::filesystem::path& manifest_path, const std::string& entry) {
  std::filesystem::path p(entry);
  if (p.is_absolute()) return p;
  return manifest_path.parent_path() / p;
}

std::vector<DetectionRecord> read_detections(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ManifestError("cannot open detections " + path.string());
  std::vector<DetectionRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const json j = json::parse(line);
    DetectionRecord r;
    r.image_path = j.at("image_path").get<std::string>();
    for (const auto& d : j.at("detections")) r.detections.push_back(detection_from_json(d));
    out.push_back(std::move(r));
  }
  return out;
}

void write_detections(const std::filesystem::path& path, const std::vector<DetectionRecord>& records) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ManifestError("cannot write detections " + path.string());
  for (const auto& r : records) {
    json dets = json::array();
    for (const auto& d : r.detections) dets.push_back(to_json(d));
    out << json{{"image_path", r.image_path}, {"detections", dets}}.dump() << '\n';
  }
}

}  // namespace friendnet
