#include "friendnet/detector.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "friendnet/evalkit/metrics.hpp"
#include "friendnet/hazegen.hpp"
#include "friendnet/image_io.hpp"
#include "friendnet/manifest.hpp"
#include "friendnet/nn/optim.hpp"

namespace friendnet::detector {
namespace {

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// log(1 + exp(-|z|)) + max(z, 0) - z * y, stable for any z.
double bce_with_logits(double z, double y) { return std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z))); }

struct DecodedBox {
  double x1, y1, x2, y2;
  double w, h;
  double sx, sy;  // sigmoid(tx), sigmoid(ty)
  bool clamped_w, clamped_h;
};

DecodedBox decode_cell(double tx, double ty, double tw, double th, int row, int col) {
  DecodedBox b{};
  b.sx = sigmoid(tx);
  b.sy = sigmoid(ty);
  b.clamped_w = std::abs(tw) > kMaxLogScale;
  b.clamped_h = std::abs(th) > kMaxLogScale;
  const double cx = (col + b.sx) * kStride;
  const double cy = (row + b.sy) * kStride;
  b.w = kStride * std::exp(std::clamp(tw, -kMaxLogScale, kMaxLogScale));
  b.h = kStride * std::exp(std::clamp(th, -kMaxLogScale, kMaxLogScale));
  b.x1 = cx - 0.5 * b.w;
  b.x2 = cx + 0.5 * b.w;
  b.y1 = cy - 0.5 * b.h;
  b.y2 = cy + 0.5 * b.h;
  return b;
}

// IoU of a decoded box against a target and its derivatives with respect to
// (tx, ty, tw, th).
double iou_and_grad(const DecodedBox& p, const BBox& g, double d[4]) {
  d[0] = d[1] = d[2] = d[3] = 0.0;
  const double gx1 = g.xmin, gy1 = g.ymin, gx2 = g.xmax, gy2 = g.ymax;
  const double iw = std::min(p.x2, gx2) - std::max(p.x1, gx1);
  const double ih = std::min(p.y2, gy2) - std::max(p.y1, gy1);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  const double ap = p.w * p.h;
  const double ag = (gx2 - gx1) * (gy2 - gy1);
  const double uni = ap + ag - inter;
  const double iou = inter / uni;

  // d iou = dI * (1/U + I/U^2) - dAp * I/U^2
  const double k_i = 1.0 / uni + inter / (uni * uni);
  const double k_a = inter / (uni * uni);
  const double d_ix1 = p.x1 > gx1 ? -ih : 0.0;  // dI/dx1
  const double d_ix2 = p.x2 < gx2 ? ih : 0.0;
  const double d_iy1 = p.y1 > gy1 ? -iw : 0.0;
  const double d_iy2 = p.y2 < gy2 ? iw : 0.0;
  // x1 = cx - w/2, x2 = cx + w/2
  const double d_cx = k_i * (d_ix1 + d_ix2);
  const double d_cy = k_i * (d_iy1 + d_iy2);
  const double d_w = k_i * 0.5 * (d_ix2 - d_ix1) - k_a * p.h;
  const double d_h = k_i * 0.5 * (d_iy2 - d_iy1) - k_a * p.w;
  d[0] = d_cx * kStride * p.sx * (1.0 - p.sx);
  d[1] = d_cy * kStride * p.sy * (1.0 - p.sy);
  d[2] = p.clamped_w ? 0.0 : d_w * p.w;
  d[3] = p.clamped_h ? 0.0 : d_h * p.h;
  return iou;
}

}  // namespace

void DetLossWeights::validate() const {
  if (!(box >= 0.0 && obj >= 0.0 && cls >= 0.0)) throw std::invalid_argument("detection loss weights must be >= 0");
}

void DetectorConfig::validate() const {
  if (num_classes < 1) throw std::invalid_argument("detector: num_classes must be >= 1");
  if (width < 1) throw std::invalid_argument("detector: width must be >= 1");
}

nlohmann::json to_json(const DetectorConfig& c) { return {{"num_classes", c.num_classes}, {"width", c.width}}; }

DetectorConfig detector_config_from_json(const nlohmann::json& j) {
  DetectorConfig c;
  c.num_classes = j.at("num_classes").get<int>();
  c.width = j.at("width").get<int>();
  c.validate();
  return c;
}

template <typename T>
GridDetector<T>::GridDetector(const DetectorConfig& config, Rng& rng) : config_(config) {
  config_.validate();
  const int w = config_.width;
  const int chans[6] = {3, w, 2 * w, 4 * w, 4 * w, 4 * w};
  const int strides[5] = {2, 2, 2, 1, 1};
  for (int i = 0; i < 5; ++i) {
    body_.push_back(&this->template register_module<nn::Conv2d<T>>("conv" + std::to_string(i), chans[i], chans[i + 1],
                                                                    3, rng, nn::ConvSpec{strides[i], 1, 1}));
  }
  head_ = &this->template register_module<nn::Conv2d<T>>("head", 4 * w, 5 + config_.num_classes, 1, rng);
  // Rare-object prior on objectness so early training is not swamped by negatives.
  head_->bias()->mutable_value()[0] = T(-4);
}

template <typename T>
nn::Var<T> GridDetector<T>::forward(const nn::Var<T>& images) const {
  const Shape& s = images.shape();
  if (s.c != 3) throw std::invalid_argument("detector: expected 3-channel input, got " + s.str());
  if (s.h % kStride != 0 || s.w % kStride != 0) {
    throw std::invalid_argument("detector: input " + std::to_string(s.h) + "x" + std::to_string(s.w) +
                                " is not divisible by the stride " + std::to_string(kStride));
  }
  nn::Var<T> x = images;
  for (const auto* conv : body_) x = nn::silu(conv->forward(x));
  return head_->forward(x);
}

std::vector<Detection> nms(std::vector<Detection> dets, double iou_threshold) {
  std::stable_sort(dets.begin(), dets.end(), [](const Detection& a, const Detection& b) { return a.score > b.score; });
  std::vector<Detection> kept;
  for (const auto& d : dets) {
    bool suppressed = false;
    for (const auto& k : kept) {
      if (k.class_id == d.class_id && evalkit::iou(k.box, d.box) > iou_threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(d);
  }
  return kept;
}

template <typename T>
std::vector<Detection> decode(const Tensor<T>& pred, int n, int num_classes, const DecodeOptions& opt) {
  if (pred.c() != 5 + num_classes) {
    throw std::invalid_argument("decode: prediction has " + std::to_string(pred.c()) + " channels, expected " +
                                std::to_string(5 + num_classes));
  }
  const int gh = pred.h(), gw = pred.w();
  const float img_w = static_cast<float>(gw * kStride), img_h = static_cast<float>(gh * kStride);
  std::vector<Detection> dets;
  std::vector<double> logits(static_cast<std::size_t>(num_classes));
  for (int i = 0; i < gh; ++i) {
    for (int j = 0; j < gw; ++j) {
      const double obj = sigmoid(pred.at(n, 0, i, j));
      double top = -INFINITY;
      int best = 0;
      for (int k = 0; k < num_classes; ++k) {
        logits[static_cast<std::size_t>(k)] = pred.at(n, 1 + k, i, j);
        if (logits[static_cast<std::size_t>(k)] > top) {
          top = logits[static_cast<std::size_t>(k)];
          best = k;
        }
      }
      double z = 0.0;
      for (double l : logits) z += std::exp(l - top);
      const double score = obj / z;
      if (score < opt.conf_threshold) continue;
      const int b0 = 1 + num_classes;
      const DecodedBox b =
          decode_cell(pred.at(n, b0, i, j), pred.at(n, b0 + 1, i, j), pred.at(n, b0 + 2, i, j), pred.at(n, b0 + 3, i, j), i, j);
      const BBox box = BBox{static_cast<float>(b.x1), static_cast<float>(b.y1), static_cast<float>(b.x2),
                            static_cast<float>(b.y2)}
                           .clipped(img_w, img_h);
      if (!box.valid()) continue;
      dets.push_back(Detection{best, static_cast<float>(score), box});
    }
  }
  return nms(std::move(dets), opt.nms_iou);
}

std::vector<std::pair<int, int>> assign_cells(const std::vector<DetectionTarget>& targets, int grid_h, int grid_w) {
  std::vector<std::pair<int, int>> cells(targets.size(), {-1, -1});
  std::vector<int> owner(static_cast<std::size_t>(grid_h) * grid_w, -1);
  for (std::size_t t = 0; t < targets.size(); ++t) {
    const BBox& b = targets[t].box;
    if (!b.valid()) throw std::invalid_argument("detection target with degenerate box");
    const int row = std::clamp(static_cast<int>(std::floor(b.center_y() / kStride)), 0, grid_h - 1);
    const int col = std::clamp(static_cast<int>(std::floor(b.center_x() / kStride)), 0, grid_w - 1);
    int& o = owner[static_cast<std::size_t>(row) * grid_w + col];
    if (o >= 0) {
      const auto& cur = targets[static_cast<std::size_t>(o)];
      const bool wins = b.area() > cur.box.area() || (b.area() == cur.box.area() && targets[t].class_id > cur.class_id);
      if (!wins) continue;
      cells[static_cast<std::size_t>(o)] = {-1, -1};
    }
    o = static_cast<int>(t);
    cells[t] = {row, col};
  }
  return cells;
}

template <typename T>
nn::Var<T> detection_loss(const nn::Var<T>& pred, const std::vector<std::vector<DetectionTarget>>& targets,
                          const DetLossWeights& w, int num_classes, DetLossParts* parts) {
  w.validate();
  const Tensor<T>& p = pred.value();
  const int n_img = p.n(), gh = p.h(), gw = p.w();
  if (p.c() != 5 + num_classes) throw std::invalid_argument("detection_loss: channel count does not match 5 + K");
  if (static_cast<int>(targets.size()) != n_img) throw std::invalid_argument("detection_loss: one target list per image");

  Tensor<T> grad(p.shape());
  const double cells = static_cast<double>(n_img) * gh * gw;

  struct Positive {
    int n, row, col;
    const DetectionTarget* target;
  };
  std::vector<Positive> positives;
  for (int n = 0; n < n_img; ++n) {
    const auto& tl = targets[static_cast<std::size_t>(n)];
    const auto cells_of = assign_cells(tl, gh, gw);
    for (std::size_t t = 0; t < tl.size(); ++t) {
      if (tl[t].class_id < 0 || tl[t].class_id >= num_classes) {
        throw std::invalid_argument("detection_loss: target class_id out of range");
      }
      if (cells_of[t].first >= 0) positives.push_back({n, cells_of[t].first, cells_of[t].second, &tl[t]});
    }
  }

  Tensor<T> obj_target(Shape{n_img, 1, gh, gw});
  for (const auto& pos : positives) obj_target.at(pos.n, 0, pos.row, pos.col) = T(1);

  double l_obj = 0.0;
  for (int n = 0; n < n_img; ++n) {
    for (int i = 0; i < gh; ++i) {
      for (int j = 0; j < gw; ++j) {
        const double z = p.at(n, 0, i, j);
        const double y = obj_target.at(n, 0, i, j);
        l_obj += bce_with_logits(z, y);
        grad.at(n, 0, i, j) = static_cast<T>(w.obj * (sigmoid(z) - y) / cells);
      }
    }
  }
  l_obj /= cells;

  double l_box = 0.0, l_cls = 0.0;
  const double npos = static_cast<double>(positives.size());
  const int b0 = 1 + num_classes;
  std::vector<double> logits(static_cast<std::size_t>(num_classes));
  for (const auto& pos : positives) {
    double top = -INFINITY;
    for (int k = 0; k < num_classes; ++k) {
      logits[static_cast<std::size_t>(k)] = p.at(pos.n, 1 + k, pos.row, pos.col);
      top = std::max(top, logits[static_cast<std::size_t>(k)]);
    }
    double z = 0.0;
    for (double l : logits) z += std::exp(l - top);
    const double lse = top + std::log(z);
    l_cls += lse - logits[static_cast<std::size_t>(pos.target->class_id)];
    for (int k = 0; k < num_classes; ++k) {
      const double prob = std::exp(logits[static_cast<std::size_t>(k)] - lse);
      const double onehot = k == pos.target->class_id ? 1.0 : 0.0;
      grad.at(pos.n, 1 + k, pos.row, pos.col) = static_cast<T>(w.cls * (prob - onehot) / npos);
    }

    const DecodedBox box = decode_cell(p.at(pos.n, b0, pos.row, pos.col), p.at(pos.n, b0 + 1, pos.row, pos.col),
                                       p.at(pos.n, b0 + 2, pos.row, pos.col), p.at(pos.n, b0 + 3, pos.row, pos.col),
                                       pos.row, pos.col);
    double d[4];
    const double iou = iou_and_grad(box, pos.target->box, d);
    l_box += 1.0 - iou;
    for (int k = 0; k < 4; ++k) grad.at(pos.n, b0 + k, pos.row, pos.col) = static_cast<T>(-w.box * d[k] / npos);
  }
  if (npos > 0) {
    l_box /= npos;
    l_cls /= npos;
  }
  if (parts) *parts = DetLossParts{l_box, l_obj, l_cls, static_cast<int>(positives.size())};

  const double total = w.box * l_box + w.obj * l_obj + w.cls * l_cls;
  auto node = pred.shared();
  return nn::make_result<T>(Tensor<T>::scalar(static_cast<T>(total)), {pred},
                            [node, g = std::move(grad)](nn::Node<T>& self) {
                              Tensor<T>& slot = nn::grad_slot(node);
                              const T up = self.grad[0];
                              for (std::size_t i = 0; i < slot.size(); ++i) slot[i] += up * g[i];
                            });
}

// ---------------------------------------------------------------------------

FrozenDetector::FrozenDetector(const DetectorConfig& config) {
  Rng unused(0);
  net_ = std::make_unique<GridDetector<float>>(config, unused);
  net_->set_training(false);
}

std::shared_ptr<FrozenDetector> FrozenDetector::from_checkpoint(const Checkpoint& ck) {
  if (ck.kind != "detector") throw CheckpointError("expected a detector checkpoint, got '" + ck.kind + "'");
  const nlohmann::json& net_cfg = ck.config.contains("net") ? ck.config.at("net") : ck.config;
  std::shared_ptr<FrozenDetector> d(new FrozenDetector(detector_config_from_json(net_cfg)));
  load_into(ck, *d->net_);
  d->net_->set_requires_grad(false);
  return d;
}

std::shared_ptr<FrozenDetector> FrozenDetector::load(const std::filesystem::path& path) {
  return from_checkpoint(read_checkpoint(path));
}

nn::Var<float> FrozenDetector::forward(const nn::Var<float>& images) const { return net_->forward(images); }

std::vector<Detection> FrozenDetector::detect_batch(const Tensor<float>& images, int n) const {
  nn::NoGradGuard guard;
  // Sizes that are not stride multiples are padded at the bottom/right by
  // edge replication; boxes are clipped back to the original extent.
  const int h = images.h(), w = images.w();
  const int ph = (h + kStride - 1) / kStride * kStride;
  const int pw = (w + kStride - 1) / kStride * kStride;
  Tensor<float> one(Shape{1, images.c(), ph, pw});
  for (int c = 0; c < images.c(); ++c) {
    const float* src = images.plane(n, c);
    float* dst = one.plane(0, c);
    for (int y = 0; y < ph; ++y) {
      const float* row = src + static_cast<long>(std::min(y, h - 1)) * w;
      for (int x = 0; x < pw; ++x) dst[static_cast<long>(y) * pw + x] = row[std::min(x, w - 1)];
    }
  }
  const auto pred = net_->forward(nn::Var<float>(one));
  std::vector<Detection> dets = decode(pred.value(), 0, num_classes(), decode_options);
  if (ph == h && pw == w) return dets;
  std::vector<Detection> kept;
  for (auto d : dets) {
    d.box = d.box.clipped(static_cast<float>(w), static_cast<float>(h));
    if (d.box.valid()) kept.push_back(d);
  }
  return kept;
}

std::vector<Detection> FrozenDetector::detect(const Image& image) const {
  return detect_batch(images_to_tensor<float>({image}), 0);
}

std::uint64_t FrozenDetector::checksum() const { return module_checksum(*net_); }

bool FrozenDetector::gradients_empty() const {
  for (const auto& p : net_->parameters()) {
    if (p.var->has_grad() || p.var->requires_grad()) return false;
  }
  return true;
}

ExternalDetections::ExternalDetections(const std::filesystem::path& jsonl) {
  for (auto& r : read_detections(jsonl)) records_.emplace_back(r.image_path, std::move(r.detections));
}

std::vector<Detection> ExternalDetections::lookup(const std::string& image_path) const {
  for (const auto& [path, dets] : records_) {
    if (path == image_path) return dets;
  }
  return {};
}

// ---------------------------------------------------------------------------

nlohmann::json to_json(const PretrainConfig& c) {
  return {{"net", to_json(c.net)},
          {"lambda_box", c.weights.box},
          {"lambda_obj", c.weights.obj},
          {"lambda_cls", c.weights.cls},
          {"steps", c.steps},
          {"batch_size", c.batch_size},
          {"lr", c.lr},
          {"lr_floor", c.lr_floor},
          {"weight_decay", c.weight_decay},
          {"haze_probability", c.haze_probability},
          {"seed", c.seed}};
}

PretrainConfig pretrain_config_from_json(const nlohmann::json& j, const PretrainConfig& base) {
  if (!j.is_object()) throw std::invalid_argument("pretrain config: expected a JSON object");
  PretrainConfig c = base;
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "net") {
        c.net = detector_config_from_json(value);
      } else if (key == "num_classes") {
        value.get_to(c.net.num_classes);
      } else if (key == "width") {
        value.get_to(c.net.width);
      } else if (key == "lambda_box") {
        value.get_to(c.weights.box);
      } else if (key == "lambda_obj") {
        value.get_to(c.weights.obj);
      } else if (key == "lambda_cls") {
        value.get_to(c.weights.cls);
      } else if (key == "steps") {
        value.get_to(c.steps);
      } else if (key == "batch_size") {
        value.get_to(c.batch_size);
      } else if (key == "lr") {
        value.get_to(c.lr);
      } else if (key == "lr_floor") {
        value.get_to(c.lr_floor);
      } else if (key == "weight_decay") {
        value.get_to(c.weight_decay);
      } else if (key == "haze_probability") {
        value.get_to(c.haze_probability);
      } else if (key == "seed") {
        value.get_to(c.seed);
      } else {
        throw std::invalid_argument("pretrain config: unknown key '" + key + "'");
      }
    } catch (const nlohmann::json::exception& e) {
      throw std::invalid_argument("pretrain config: bad value for '" + key + "': " + e.what());
    }
  }
  c.net.validate();
  c.weights.validate();
  return c;
}

PretrainResult pretrain_detector(const std::filesystem::path& manifest_path, const PretrainConfig& cfg) {
  cfg.net.validate();
  cfg.weights.validate();
  if (cfg.steps < 0 || cfg.batch_size < 1) throw std::invalid_argument("pretrain: steps >= 0 and batch_size >= 1 required");

  struct Sample {
    Image image;
    std::vector<DetectionTarget> targets;
  };
  std::vector<Sample> data;
  for (const auto& rec : read_manifest(manifest_path)) {
    if (rec.annotations.empty() || rec.error) continue;
    data.push_back({read_png(resolve_path(manifest_path, rec.image_path)), rec.annotations});
  }
  if (data.empty()) throw std::invalid_argument("pretrain: manifest has no annotated images");

  Rng init_rng = Rng::stream(cfg.seed, 1);
  GridDetector<float> net(cfg.net, init_rng);
  PretrainResult result;
  if (cfg.steps > 0) {
    std::vector<nn::Var<float>*> params;
    for (auto& p : net.parameters()) params.push_back(p.var);
    nn::AdamW<float> opt(params, {0.9, 0.999, 1e-8, cfg.weight_decay});
    Rng rng = Rng::stream(cfg.seed, 2);
    for (int step = 0; step < cfg.steps; ++step) {
      std::vector<Image> batch;
      std::vector<std::vector<DetectionTarget>> targets;
      for (int b = 0; b < cfg.batch_size; ++b) {
        const Sample& s = data[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(data.size()) - 1))];
        const std::uint64_t haze_seed = rng.next();
        if (rng.uniform() < cfg.haze_probability) {
          const auto params_h = hazegen::sample_params(haze_seed, hazegen::kTrainBetaLow, hazegen::kTrainBetaHigh);
          batch.push_back(hazegen::synthesize(s.image, params_h).hazy);
        } else {
          batch.push_back(s.image);
        }
        targets.push_back(s.targets);
      }
      net.zero_grad();
      const nn::Var<float> pred = net.forward(nn::Var<float>(images_to_tensor<float>(batch)));
      nn::Var<float> loss = detection_loss(pred, targets, cfg.weights, cfg.net.num_classes);
      const double value = loss.value().item();
      if (!std::isfinite(value)) throw std::runtime_error("pretrain: non-finite loss at step " + std::to_string(step));
      result.losses.push_back(value);
      loss.backward();
      opt.step(nn::cosine_lr(step, cfg.steps, cfg.lr, cfg.lr_floor));
    }
  }
  result.checkpoint = snapshot(net, "detector", to_json(cfg));
  return result;
}

template class GridDetector<float>;
template class GridDetector<double>;
template std::vector<Detection> decode(const Tensor<float>&, int, int, const DecodeOptions&);
template std::vector<Detection> decode(const Tensor<double>&, int, int, const DecodeOptions&);
template nn::Var<float> detection_loss(const nn::Var<float>&, const std::vector<std::vector<DetectionTarget>>&,
                                       const DetLossWeights&, int, DetLossParts*);
template nn::Var<double> detection_loss(const nn::Var<double>&, const std::vector<std::vector<DetectionTarget>>&,
                                        const DetLossWeights&, int, DetLossParts*);

}  // namespace friendnet::detector
