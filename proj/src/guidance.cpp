#include "friendnet/guidance.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>

#include "friendnet/image_io.hpp"
#include "json.hpp"

namespace friendnet::guidance {
namespace {

constexpr double kMaskScale = 65535.0;

// Pixel index range [lo, hi) whose centres fall in [a, b).
void covered_range(float a, float b, int limit, int& lo, int& hi) {
  lo = std::max(0, static_cast<int>(std::ceil(static_cast<double>(a) - 0.5)));
  hi = std::min(limit, static_cast<int>(std::ceil(static_cast<double>(b) - 0.5)));
}

// Row-stochastic weights for 1-D area resampling: weight[o][i] is the
// fraction of output cell o covered by input cell i.
std::vector<std::vector<std::pair<int, double>>> area_weights(int in, int out) {
  std::vector<std::vector<std::pair<int, double>>> w(static_cast<std::size_t>(out));
  const double scale = static_cast<double>(in) / out;
  for (int o = 0; o < out; ++o) {
    const double start = o * scale;
    const double end = (o + 1) * scale;
    for (int i = static_cast<int>(std::floor(start)); i < in && i < end; ++i) {
      const double overlap = std::min(end, i + 1.0) - std::max(start, static_cast<double>(i));
      if (overlap > 0) w[static_cast<std::size_t>(o)].emplace_back(i, overlap / scale);
    }
  }
  return w;
}

}  // namespace

GuidanceMask render_guidance(const std::vector<Detection>& detections, int height, int width, int num_classes) {
  if (height < 1 || width < 1) throw std::invalid_argument("render_guidance: dimensions must be positive");
  if (num_classes < 1) throw std::invalid_argument("render_guidance: num_classes must be positive");
  for (const auto& d : detections) {
    if (d.class_id < 0 || d.class_id >= num_classes) {
      throw std::invalid_argument("render_guidance: class_id " + std::to_string(d.class_id) + " outside [0, " +
                                  std::to_string(num_classes) + ")");
    }
  }
  // Paint in ascending priority so the winner of every overlap lands last.
  std::vector<const Detection*> order;
  order.reserve(detections.size());
  for (const auto& d : detections) order.push_back(&d);
  std::stable_sort(order.begin(), order.end(), [](const Detection* a, const Detection* b) {
    if (a->score != b->score) return a->score < b->score;
    return a->class_id < b->class_id;
  });
  GuidanceMask mask{Plane(height, width), num_classes, false};
  for (const Detection* d : order) {
    const float value = static_cast<float>(d->class_id + 1) * d->score;
    int x0, x1, y0, y1;
    covered_range(d->box.xmin, d->box.xmax, width, x0, x1);
    covered_range(d->box.ymin, d->box.ymax, height, y0, y1);
    for (int y = y0; y < y1; ++y) {
      for (int x = x0; x < x1; ++x) mask.plane.at(y, x) = value;
    }
  }
  return mask;
}

GuidanceMask normalize_guidance(const GuidanceMask& mask) {
  GuidanceMask out = mask;
  const float k = static_cast<float>(mask.num_classes);
  for (auto& v : out.plane.values) v /= k;
  out.normalized = true;
  return out;
}

void resample_area(const float* src, int src_h, int src_w, float* dst, int dst_h, int dst_w) {
  if (src_h == dst_h && src_w == dst_w) {
    std::copy_n(src, static_cast<std::size_t>(src_h) * src_w, dst);
    return;
  }
  const auto wy = area_weights(src_h, dst_h);
  const auto wx = area_weights(src_w, dst_w);
  std::vector<double> rows(static_cast<std::size_t>(dst_h) * src_w, 0.0);
  for (int oy = 0; oy < dst_h; ++oy) {
    for (const auto& [iy, wgt] : wy[static_cast<std::size_t>(oy)]) {
      for (int x = 0; x < src_w; ++x) rows[static_cast<std::size_t>(oy) * src_w + x] += wgt * src[static_cast<std::size_t>(iy) * src_w + x];
    }
  }
  for (int oy = 0; oy < dst_h; ++oy) {
    for (int ox = 0; ox < dst_w; ++ox) {
      double acc = 0;
      for (const auto& [ix, wgt] : wx[static_cast<std::size_t>(ox)]) acc += wgt * rows[static_cast<std::size_t>(oy) * src_w + ix];
      dst[static_cast<std::size_t>(oy) * dst_w + ox] = static_cast<float>(acc);
    }
  }
}

GuidanceMask resample_guidance(const GuidanceMask& mask, int target_height, int target_width) {
  if (target_height < 1 || target_width < 1) throw std::invalid_argument("resample_guidance: target dims must be positive");
  if (target_height == mask.height() && target_width == mask.width()) return mask;
  GuidanceMask out{Plane(target_height, target_width), mask.num_classes, mask.normalized};
  resample_area(mask.plane.values.data(), mask.height(), mask.width(), out.plane.values.data(), target_height,
                target_width);
  // Convex combinations stay in the input range; trim float drift at the edges.
  const auto [lo, hi] = std::minmax_element(mask.plane.values.begin(), mask.plane.values.end());
  for (auto& v : out.plane.values) v = std::clamp(v, *lo, *hi);
  return out;
}

void export_mask(const std::filesystem::path& png_path, const GuidanceMask& mask) {
  if (!mask.normalized) throw std::invalid_argument("export_mask: mask must be normalized first");
  Gray16 img{mask.height(), mask.width(), std::vector<std::uint16_t>(mask.plane.values.size())};
  for (std::size_t i = 0; i < img.samples.size(); ++i) {
    const double v = std::clamp(static_cast<double>(mask.plane.values[i]), 0.0, 1.0);
    img.samples[i] = static_cast<std::uint16_t>(std::lround(v * kMaskScale));
  }
  write_png_gray16(png_path, img);
  nlohmann::json side{{"mask_path", png_path.filename().string()},
                      {"num_classes", mask.num_classes},
                      {"scale", kMaskScale},
                      {"encoding", "stored = round(normalized_value * scale)"},
                      {"normalized", true}};
  std::ofstream(png_path.string() + ".json") << side.dump(2) << '\n';
}

GuidanceMask import_mask(const std::filesystem::path& png_path) {
  std::ifstream in(png_path.string() + ".json");
  if (!in) throw std::runtime_error("import_mask: missing sidecar for " + png_path.string());
  const nlohmann::json side = nlohmann::json::parse(in);
  const double scale = side.at("scale").get<double>();
  const Gray16 img = read_png_gray16(png_path);
  GuidanceMask mask{Plane(img.height, img.width), side.at("num_classes").get<int>(), true};
  for (std::size_t i = 0; i < img.samples.size(); ++i) {
    mask.plane.values[i] = static_cast<float>(img.samples[i] / scale);
  }
  return mask;
}

}  // namespace friendnet::guidance
