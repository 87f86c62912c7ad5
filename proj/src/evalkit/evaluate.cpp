#include "friendnet/evalkit/evaluate.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "friendnet/evalkit/metrics.hpp"
#include "friendnet/hazegen.hpp"
#include "friendnet/image_io.hpp"
#include "friendnet/manifest.hpp"

namespace friendnet::evalkit {

Image IdentityRestorer::restore(const EvalSample& sample, const guidance::GuidanceMask&) { return sample.hazy; }

Image OracleRestorer::restore(const EvalSample& sample, const guidance::GuidanceMask&) {
  if (!sample.beta) throw std::invalid_argument("oracle restorer: sample '" + sample.id + "' has no beta");
  const hazegen::HazeParams params{static_cast<float>(sample.airlight), static_cast<float>(*sample.beta)};
  const auto t = hazegen::transmission_map(hazegen::depth_map(sample.hazy.height(), sample.hazy.width()), params.beta);
  return hazegen::dehaze_oracle(sample.hazy, params, t);
}

bool NetworkRestorer::uses_guidance() const { return net_.config().enable_gfb || net_.config().enable_gab; }

Image NetworkRestorer::restore(const EvalSample& sample, const guidance::GuidanceMask& mask) {
  if (mask.plane.values.empty()) {
    guidance::GuidanceMask blank{Plane(sample.hazy.height(), sample.hazy.width()), 1, true};
    return dehazenet::dehaze(net_, sample.hazy, blank);
  }
  return dehazenet::dehaze(net_, sample.hazy, mask);
}

guidance::GuidanceMask detector_guidance(const detector::Detector& detector, const Image& hazy) {
  const auto dets = detector.detect(hazy);
  return guidance::normalize_guidance(
      guidance::render_guidance(dets, hazy.height(), hazy.width(), detector.num_classes()));
}

EvalReport evaluate(Restorer& model, const detector::Detector& detector, const std::vector<EvalSample>& samples) {
  EvalReport report;
  report.model = model.name();
  std::vector<ImageDetections> det_images;
  double psnr_sum = 0.0, ssim_sum = 0.0;
  for (const auto& s : samples) {
    ItemResult item;
    item.id = s.id;
    try {
      if (!s.clean.same_dims(s.hazy)) throw std::invalid_argument("clean and hazy sizes differ");
      guidance::GuidanceMask mask;
      if (model.uses_guidance()) mask = detector_guidance(detector, s.hazy);
      const Image restored = model.restore(s, mask);
      item.psnr = psnr(restored, s.clean);
      item.ssim = ssim(restored, s.clean);
      ImageDetections d{detector.detect(restored), s.annotations};
      item.detections = static_cast<int>(d.detections.size());
      item.ground_truth = static_cast<int>(s.annotations.size());
      det_images.push_back(std::move(d));
    } catch (const std::exception& e) {
      item.error = e.what();
    }
    if (item.error) {
      ++report.errors;
    } else {
      ++report.images;
      report.instances += item.ground_truth;
      psnr_sum += item.psnr;
      ssim_sum += item.ssim;
    }
    report.items.push_back(std::move(item));
  }
  if (report.images > 0) {
    report.psnr_mean = psnr_sum / report.images;
    report.ssim_mean = ssim_sum / report.images;
  }
  if (report.instances > 0) {
    const MapResult m = mean_average_precision(det_images);
    report.per_class_ap = m.per_class_ap;
    report.map50 = m.map;
  }
  return report;
}

EvalReport evaluate(Restorer& model, const detector::Detector& detector, const std::filesystem::path& manifest) {
  std::vector<EvalSample> samples;
  std::vector<ItemResult> load_errors;
  for (const auto& rec : read_manifest(manifest)) {
    EvalSample s;
    s.id = rec.image_path;
    try {
      if (rec.error) throw std::runtime_error("record marked as failed: " + *rec.error);
      if (!rec.hazy_path) throw std::runtime_error("record has no hazy_path");
      s.clean = read_png(resolve_path(manifest, rec.image_path));
      s.hazy = read_png(resolve_path(manifest, *rec.hazy_path));
      s.annotations = rec.annotations;
      s.beta = rec.beta;
      samples.push_back(std::move(s));
    } catch (const std::exception& e) {
      load_errors.push_back({rec.image_path, std::string(e.what())});
    }
  }
  EvalReport report = evaluate(model, detector, samples);
  report.errors += static_cast<int>(load_errors.size());
  for (auto& e : load_errors) report.items.push_back(std::move(e));
  return report;
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json j;
  j["model"] = model;
  j["counts"] = {{"images", images}, {"instances", instances}, {"errors", errors}};
  j["psnr_mean"] = psnr_mean ? nlohmann::json(*psnr_mean) : nlohmann::json(nullptr);
  j["ssim_mean"] = ssim_mean ? nlohmann::json(*ssim_mean) : nlohmann::json(nullptr);
  nlohmann::json ap = nlohmann::json::object();
  for (const auto& [cls, v] : per_class_ap) ap[std::to_string(cls)] = v;
  j["per_class_ap"] = ap;
  j["map50"] = map50 ? nlohmann::json(*map50) : nlohmann::json(nullptr);
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& it : items) {
    nlohmann::json r{{"id", it.id}};
    if (it.error) {
      r["error"] = *it.error;
    } else {
      r["psnr"] = it.psnr;
      r["ssim"] = it.ssim;
      r["detections"] = it.detections;
      r["ground_truth"] = it.ground_truth;
    }
    rows.push_back(std::move(r));
  }
  j["items"] = rows;
  return j;
}

std::string EvalReport::to_table() const {
  std::ostringstream os;
  char line[128];
  os << "model     " << model << "\n";
  std::snprintf(line, sizeof(line), "images    %d\ninstances %d\nerrors    %d\n", images, instances, errors);
  os << line;
  if (psnr_mean) {
    std::snprintf(line, sizeof(line), "PSNR      %.4f dB\nSSIM      %.6f\n", *psnr_mean, *ssim_mean);
    os << line;
  }
  for (const auto& [cls, v] : per_class_ap) {
    std::snprintf(line, sizeof(line), "AP[%d]     %.4f\n", cls, v);
    os << line;
  }
  if (map50) {
    std::snprintf(line, sizeof(line), "mAP@0.5   %.4f\n", *map50);
    os << line;
  }
  for (const auto& it : items) {
    if (it.error) os << "error     " << it.id << ": " << *it.error << "\n";
  }
  return os.str();
}

void EvalReport::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "id,psnr,ssim,detections,ground_truth,error\n";
  for (const auto& it : items) {
    std::string err = it.error.value_or("");
    for (char& c : err) {
      if (c == ',' || c == '\n') c = ';';
    }
    char nums[96];
    if (it.error) {
      nums[0] = ',';
      nums[1] = ',';
      nums[2] = ',';
      nums[3] = '\0';
    } else {
      std::snprintf(nums, sizeof(nums), "%.6f,%.6f,%d,%d", it.psnr, it.ssim, it.detections, it.ground_truth);
    }
    out << it.id << "," << nums << "," << err << "\n";
  }
}

}  // namespace friendnet::evalkit
