#include "friendnet/evalkit/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <stdexcept>

namespace friendnet::evalkit {

double psnr(const Image& a, const Image& b) {
  if (!a.same_dims(b)) throw std::invalid_argument("psnr: image dimensions differ");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a.values()[i]) - static_cast<double>(b.values()[i]);
    acc += d * d;
  }
  const double mse = acc / static_cast<double>(a.size());
  if (mse == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

namespace {

std::vector<double> gaussian_kernel(int size, double sigma) {
  std::vector<double> k(static_cast<std::size_t>(size));
  const double c = (size - 1) / 2.0;
  double total = 0.0;
  for (int i = 0; i < size; ++i) {
    k[static_cast<std::size_t>(i)] = std::exp(-((i - c) * (i - c)) / (2.0 * sigma * sigma));
    total += k[static_cast<std::size_t>(i)];
  }
  for (auto& v : k) v /= total;
  return k;
}

// Separable 'valid' filtering of an h x w field.
std::vector<double> filter_valid(const std::vector<double>& src, int h, int w, const std::vector<double>& k) {
  const int n = static_cast<int>(k.size());
  const int ow = w - n + 1;
  const int oh = h - n + 1;
  std::vector<double> tmp(static_cast<std::size_t>(h) * ow);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int i = 0; i < n; ++i) s += k[static_cast<std::size_t>(i)] * src[static_cast<std::size_t>(y) * w + x + i];
      tmp[static_cast<std::size_t>(y) * ow + x] = s;
    }
  }
  std::vector<double> out(static_cast<std::size_t>(oh) * ow);
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (int i = 0; i < n; ++i) s += k[static_cast<std::size_t>(i)] * tmp[static_cast<std::size_t>(y + i) * ow + x];
      out[static_cast<std::size_t>(y) * ow + x] = s;
    }
  }
  return out;
}

}  // namespace

double ssim(const Image& a, const Image& b, const SsimOptions& o) {
  if (!a.same_dims(b)) throw std::invalid_argument("ssim: image dimensions differ");
  if (std::min(a.height(), a.width()) < o.window) {
    throw std::invalid_argument("ssim: image smaller than the " + std::to_string(o.window) + "px window");
  }
  const double c1 = (o.k1 * o.dynamic_range) * (o.k1 * o.dynamic_range);
  const double c2 = (o.k2 * o.dynamic_range) * (o.k2 * o.dynamic_range);
  const auto kernel = gaussian_kernel(o.window, o.sigma);
  const int h = a.height(), w = a.width();
  const std::size_t pixels = static_cast<std::size_t>(h) * w;
  double total = 0.0;
  for (int c = 0; c < a.channels(); ++c) {
    std::vector<double> xa(pixels), xb(pixels), aa(pixels), bb(pixels), ab(pixels);
    for (std::size_t p = 0; p < pixels; ++p) {
      xa[p] = a.values()[p * a.channels() + c];
      xb[p] = b.values()[p * b.channels() + c];
      aa[p] = xa[p] * xa[p];
      bb[p] = xb[p] * xb[p];
      ab[p] = xa[p] * xb[p];
    }
    const auto mu_a = filter_valid(xa, h, w, kernel);
    const auto mu_b = filter_valid(xb, h, w, kernel);
    const auto e_aa = filter_valid(aa, h, w, kernel);
    const auto e_bb = filter_valid(bb, h, w, kernel);
    const auto e_ab = filter_valid(ab, h, w, kernel);
    double acc = 0.0;
    for (std::size_t i = 0; i < mu_a.size(); ++i) {
      const double var_a = e_aa[i] - mu_a[i] * mu_a[i];
      const double var_b = e_bb[i] - mu_b[i] * mu_b[i];
      const double cov = e_ab[i] - mu_a[i] * mu_b[i];
      const double num = (2.0 * mu_a[i] * mu_b[i] + c1) * (2.0 * cov + c2);
      const double den = (mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (var_a + var_b + c2);
      acc += num / den;
    }
    total += acc / static_cast<double>(mu_a.size());
  }
  return total / a.channels();
}

double iou(const BBox& a, const BBox& b) {
  if (!a.valid() || !b.valid()) throw std::invalid_argument("iou: degenerate box");
  const double iw = std::min<double>(a.xmax, b.xmax) - std::max<double>(a.xmin, b.xmin);
  const double ih = std::min<double>(a.ymax, b.ymax) - std::max<double>(a.ymin, b.ymin);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  const double area_a = (static_cast<double>(a.xmax) - a.xmin) * (static_cast<double>(a.ymax) - a.ymin);
  const double area_b = (static_cast<double>(b.xmax) - b.xmin) * (static_cast<double>(b.ymax) - b.ymin);
  return inter / (area_a + area_b - inter);
}

ApResult average_precision(const std::vector<ImageDetections>& images, int class_id, double iou_threshold) {
  struct Ranked {
    float score;
    std::size_t image;
    const BBox* box;
  };
  std::vector<Ranked> ranked;
  std::vector<std::vector<const BBox*>> gts(images.size());
  std::vector<std::vector<bool>> used(images.size());
  ApResult result;
  for (std::size_t i = 0; i < images.size(); ++i) {
    for (const auto& d : images[i].detections) {
      if (d.class_id == class_id) ranked.push_back({d.score, i, &d.box});
    }
    for (const auto& g : images[i].ground_truth) {
      if (g.class_id == class_id) gts[i].push_back(&g.box);
    }
    used[i].assign(gts[i].size(), false);
    result.num_ground_truth += static_cast<int>(gts[i].size());
  }
  if (result.num_ground_truth == 0) return result;
  result.defined = true;
  std::stable_sort(ranked.begin(), ranked.end(), [](const Ranked& a, const Ranked& b) { return a.score > b.score; });

  std::vector<double> recall, precision;
  recall.reserve(ranked.size());
  precision.reserve(ranked.size());
  int tp = 0, fp = 0;
  for (const auto& r : ranked) {
    int best = -1;
    double best_iou = -1.0;
    for (std::size_t g = 0; g < gts[r.image].size(); ++g) {
      if (used[r.image][g]) continue;
      const double v = iou(*r.box, *gts[r.image][g]);
      if (v >= iou_threshold && v > best_iou) {
        best_iou = v;
        best = static_cast<int>(g);
      }
    }
    if (best >= 0) {
      used[r.image][static_cast<std::size_t>(best)] = true;
      ++tp;
    } else {
      ++fp;
    }
    recall.push_back(static_cast<double>(tp) / result.num_ground_truth);
    precision.push_back(static_cast<double>(tp) / (tp + fp));
  }

  // All-points interpolation: precision envelope integrated over recall.
  std::vector<double> mrec{0.0}, mpre{0.0};
  mrec.insert(mrec.end(), recall.begin(), recall.end());
  mpre.insert(mpre.end(), precision.begin(), precision.end());
  mrec.push_back(1.0);
  mpre.push_back(0.0);
  for (std::size_t i = mpre.size() - 1; i > 0; --i) mpre[i - 1] = std::max(mpre[i - 1], mpre[i]);
  double ap = 0.0;
  for (std::size_t i = 0; i + 1 < mrec.size(); ++i) {
    if (mrec[i + 1] != mrec[i]) ap += (mrec[i + 1] - mrec[i]) * mpre[i + 1];
  }
  result.ap = ap;
  return result;
}

ApResult average_precision(const std::vector<Detection>& detections, const std::vector<DetectionTarget>& ground_truth,
                           double iou_threshold) {
  ImageDetections one;
  for (auto d : detections) {
    d.class_id = 0;
    one.detections.push_back(d);
  }
  for (auto g : ground_truth) {
    g.class_id = 0;
    one.ground_truth.push_back(g);
  }
  return average_precision(std::vector<ImageDetections>{one}, 0, iou_threshold);
}

MapResult mean_average_precision(const std::vector<ImageDetections>& images, double iou_threshold) {
  std::set<int> classes;
  MapResult out;
  for (const auto& im : images) {
    for (const auto& g : im.ground_truth) {
      classes.insert(g.class_id);
      ++out.instances;
    }
  }
  double total = 0.0;
  for (int c : classes) {
    const ApResult r = average_precision(images, c, iou_threshold);
    out.per_class_ap[c] = r.ap;
    total += r.ap;
  }
  out.map = classes.empty() ? 0.0 : total / static_cast<double>(classes.size());
  return out;
}

}  // namespace friendnet::evalkit
