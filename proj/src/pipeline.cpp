#include "friendnet/pipeline.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "friendnet/guidance.hpp"
#include "friendnet/image_io.hpp"
#include "friendnet/manifest.hpp"
#include "friendnet/nn/optim.hpp"

namespace friendnet::pipeline {
namespace {

const char* loss_name(RestorationLossKind k) { return k == RestorationLossKind::kMae ? "mae" : "mse"; }

RestorationLossKind parse_loss(const std::string& s) {
  if (s == "mae") return RestorationLossKind::kMae;
  if (s == "mse") return RestorationLossKind::kMse;
  throw std::invalid_argument("train config: restoration_loss must be \"mae\" or \"mse\", got \"" + s + "\"");
}

const std::set<std::string>& net_keys() {
  static const std::set<std::string> keys{"num_levels",      "base_channels", "blocks_per_level", "channel_attention_ratio",
                                          "pdb_expansion",   "enable_pfeb_stage2", "enable_gfb", "enable_gab",
                                          "gfb_levels",      "gab_levels"};
  return keys;
}

struct Sample {
  Image clean;
  std::vector<DetectionTarget> targets;
};

std::vector<Sample> load_training_set(const std::filesystem::path& manifest, int crop) {
  std::vector<Sample> data;
  for (const auto& rec : read_manifest(manifest)) {
    if (rec.error || rec.annotations.empty()) continue;
    Image im = read_png(resolve_path(manifest, rec.image_path));
    if (im.height() < crop || im.width() < crop) {
      throw std::invalid_argument("train: image " + rec.image_path + " is smaller than crop_size " +
                                  std::to_string(crop));
    }
    data.push_back({std::move(im), rec.annotations});
  }
  if (data.empty()) throw std::invalid_argument("train: manifest has no annotated images");
  return data;
}

Image crop_image(const Image& im, int y0, int x0, int size) {
  Image out(size, size, im.channels());
  for (int y = 0; y < size; ++y) {
    const float* src = &im.values()[(static_cast<std::size_t>(y0 + y) * im.width() + x0) * im.channels()];
    std::copy(src, src + static_cast<std::size_t>(size) * im.channels(),
              out.data() + static_cast<std::size_t>(y) * size * im.channels());
  }
  return out;
}

// Boxes shifted into the crop; a box survives when at least half its area does.
std::vector<DetectionTarget> crop_targets(const std::vector<DetectionTarget>& targets, int y0, int x0, int size) {
  std::vector<DetectionTarget> out;
  const float s = static_cast<float>(size);
  for (const auto& t : targets) {
    const BBox shifted{t.box.xmin - x0, t.box.ymin - y0, t.box.xmax - x0, t.box.ymax - y0};
    const BBox c = shifted.clipped(s, s);
    if (c.valid() && c.area() >= 0.5f * t.box.area()) out.push_back({t.class_id, c});
  }
  return out;
}

std::filesystem::path write_abort_snapshot(const std::optional<std::filesystem::path>& out_dir, const TrainConfig& cfg,
                                           int step, const std::vector<Image>& clean, const std::vector<Image>& hazy,
                                           const std::vector<float>& betas,
                                           const std::vector<std::vector<DetectionTarget>>& targets, double l_res,
                                           double l_det) {
  const std::filesystem::path base = out_dir ? *out_dir : std::filesystem::temp_directory_path();
  const std::filesystem::path dir = base / ("abort_step_" + std::to_string(step));
  std::filesystem::create_directories(dir);
  nlohmann::json j{{"step", step}, {"l_res", l_res}, {"l_det", l_det}, {"config", to_json(cfg)}};
  nlohmann::json items = nlohmann::json::array();
  for (std::size_t b = 0; b < clean.size(); ++b) {
    const std::string stem = "item_" + std::to_string(b);
    write_png(dir / (stem + "_clean.png"), clean[b]);
    write_png(dir / (stem + "_hazy.png"), hazy[b]);
    nlohmann::json anns = nlohmann::json::array();
    for (const auto& t : targets[b]) anns.push_back({{"class_id", t.class_id}, {"bbox", friendnet::to_json(t.box)}});
    items.push_back({{"clean", stem + "_clean.png"}, {"hazy", stem + "_hazy.png"}, {"beta", betas[b]},
                     {"annotations", anns}});
  }
  j["items"] = items;
  std::ofstream(dir / "batch.json") << j.dump(2) << "\n";
  return dir;
}

}  // namespace

void TrainConfig::validate() const {
  if (batch_size < 1) throw std::invalid_argument("train config: batch_size must be >= 1");
  if (epochs < 0 || steps_per_epoch < 0) throw std::invalid_argument("train config: epochs and steps_per_epoch must be >= 0");
  if (!(initial_lr > 0.0) || !(lr_floor >= 0.0) || lr_floor > initial_lr) {
    throw std::invalid_argument("train config: need 0 <= lr_floor <= initial_lr and initial_lr > 0");
  }
  if (lr_schedule != "cosine") throw std::invalid_argument("train config: lr_schedule must be \"cosine\"");
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw std::invalid_argument("train config: lambda must be >= 0");
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("train config: weight_decay must be >= 0");
  if (!(beta_low >= 0.0f) || beta_high < beta_low) throw std::invalid_argument("train config: need 0 <= beta_low <= beta_high");
  if (!(airlight >= 0.0f && airlight <= 1.0f)) throw std::invalid_argument("train config: airlight must be in [0, 1]");
  if (checkpoint_every < 0) throw std::invalid_argument("train config: checkpoint_every must be >= 0");
  if (mixed_precision) throw std::invalid_argument("train config: mixed_precision is not implemented");
  net.validate();
  const int align = std::max(detector::kStride, net.divisor());
  if (crop_size < align || crop_size % detector::kStride != 0 || crop_size % net.divisor() != 0) {
    throw std::invalid_argument("train config: crop_size must be a positive multiple of " +
                                std::to_string(detector::kStride) + " and " + std::to_string(net.divisor()));
  }
}

nlohmann::json to_json(const TrainConfig& c) {
  nlohmann::json j{{"batch_size", c.batch_size},
                   {"crop_size", c.crop_size},
                   {"epochs", c.epochs},
                   {"steps_per_epoch", c.steps_per_epoch},
                   {"initial_lr", c.initial_lr},
                   {"lr_schedule", c.lr_schedule},
                   {"lr_floor", c.lr_floor},
                   {"weight_decay", c.weight_decay},
                   {"lambda", c.lambda},
                   {"restoration_loss", loss_name(c.restoration_loss)},
                   {"detection_loss", c.detection_loss},
                   {"beta_low", c.beta_low},
                   {"beta_high", c.beta_high},
                   {"airlight", c.airlight},
                   {"checkpoint_every", c.checkpoint_every},
                   {"mixed_precision", c.mixed_precision},
                   {"seed", c.seed}};
  j.update(dehazenet::to_json(c.net));
  return j;
}

TrainConfig train_config_from_json(const nlohmann::json& j, const TrainConfig& base) {
  if (!j.is_object()) throw std::invalid_argument("train config: expected a JSON object");
  TrainConfig c = base;
  nlohmann::json net = dehazenet::to_json(base.net);
  for (const auto& [key, value] : j.items()) {
    try {
      if (net_keys().count(key)) {
        net[key] = value;
      } else if (key == "batch_size") {
        value.get_to(c.batch_size);
      } else if (key == "crop_size") {
        value.get_to(c.crop_size);
      } else if (key == "epochs") {
        value.get_to(c.epochs);
      } else if (key == "steps_per_epoch") {
        value.get_to(c.steps_per_epoch);
      } else if (key == "initial_lr") {
        value.get_to(c.initial_lr);
      } else if (key == "lr_schedule") {
        value.get_to(c.lr_schedule);
      } else if (key == "lr_floor") {
        value.get_to(c.lr_floor);
      } else if (key == "weight_decay") {
        value.get_to(c.weight_decay);
      } else if (key == "lambda") {
        value.get_to(c.lambda);
      } else if (key == "restoration_loss") {
        c.restoration_loss = parse_loss(value.get<std::string>());
      } else if (key == "detection_loss") {
        value.get_to(c.detection_loss);
      } else if (key == "beta_low") {
        value.get_to(c.beta_low);
      } else if (key == "beta_high") {
        value.get_to(c.beta_high);
      } else if (key == "airlight") {
        value.get_to(c.airlight);
      } else if (key == "checkpoint_every") {
        value.get_to(c.checkpoint_every);
      } else if (key == "mixed_precision") {
        value.get_to(c.mixed_precision);
      } else if (key == "seed") {
        value.get_to(c.seed);
      } else {
        throw std::invalid_argument("train config: unknown key '" + key + "'");
      }
    } catch (const nlohmann::json::exception& e) {
      throw std::invalid_argument("train config: bad value for '" + key + "': " + e.what());
    }
  }
  c.net = dehazenet::network_config_from_json(net);
  c.validate();
  return c;
}

TrainConfig load_train_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument("config " + path.string() + ": " + e.what());
  }
  return train_config_from_json(j);
}

template <typename T>
nn::Var<T> restoration_loss_impl(const nn::Var<T>& restored, const nn::Var<T>& clean, RestorationLossKind kind) {
  if (restored.shape() != clean.shape()) {
    throw std::invalid_argument("restoration_loss: shape mismatch " + restored.shape().str() + " vs " +
                                clean.shape().str());
  }
  return kind == RestorationLossKind::kMae ? nn::mean_abs_error(restored, clean) : nn::mean_squared_error(restored, clean);
}

nn::Var<float> restoration_loss(const nn::Var<float>& restored, const nn::Var<float>& clean, RestorationLossKind kind) {
  return restoration_loss_impl(restored, clean, kind);
}

nn::Var<double> restoration_loss(const nn::Var<double>& restored, const nn::Var<double>& clean,
                                 RestorationLossKind kind) {
  return restoration_loss_impl(restored, clean, kind);
}

double total_loss(double l_res, double l_det, double lambda) { return l_res + lambda * l_det; }

nn::Var<float> total_loss(const nn::Var<float>& l_res, const nn::Var<float>& l_det, double lambda) {
  return nn::add(l_res, nn::scale(l_det, static_cast<float>(lambda)));
}

nlohmann::json to_json(const LogEntry& e) {
  return {{"step", e.step}, {"l_res", e.l_res}, {"l_det", e.l_det}, {"l_total", e.l_total}, {"lr", e.lr}};
}

TrainResult train_dehazer(const TrainConfig& cfg, const std::filesystem::path& manifest,
                          const detector::FrozenDetector& det, const std::optional<std::filesystem::path>& out_dir) {
  cfg.validate();
  const std::vector<Sample> data = load_training_set(manifest, cfg.crop_size);

  TrainResult result;
  result.detector_checksum_before = det.checksum();
  const nlohmann::json ck_config{{"net", dehazenet::to_json(cfg.net)}, {"train", to_json(cfg)}};

  Rng init_rng = Rng::stream(cfg.seed, 1);
  dehazenet::DehazeNet<float> net(cfg.net, init_rng);
  net.set_training(true);
  const bool want_guidance = cfg.net.enable_gfb || cfg.net.enable_gab;

  std::ofstream log_file;
  if (out_dir) {
    std::filesystem::create_directories(*out_dir);
    log_file.open(*out_dir / "train_log.jsonl", std::ios::trunc);
    if (!log_file) throw std::runtime_error("cannot write " + (*out_dir / "train_log.jsonl").string());
  }

  const int total = cfg.total_steps();
  if (total > 0) {
    std::vector<nn::Var<float>*> params;
    for (auto& p : net.parameters()) params.push_back(p.var);
    nn::AdamW<float> opt(params, {0.9, 0.999, 1e-8, cfg.weight_decay});
    Rng rng = Rng::stream(cfg.seed, 2);
    const int crop = cfg.crop_size;
    const int n = cfg.batch_size;
    const detector::DetLossWeights det_weights{};

    for (int step = 0; step < total; ++step) {
      std::vector<Image> clean, hazy;
      std::vector<float> betas;
      std::vector<std::vector<DetectionTarget>> targets;
      for (int b = 0; b < n; ++b) {
        const Sample& s = data[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(data.size()) - 1))];
        const int y0 = rng.uniform_int(0, s.clean.height() - crop);
        const int x0 = rng.uniform_int(0, s.clean.width() - crop);
        const auto hp = hazegen::sample_params(rng.next(), cfg.beta_low, cfg.beta_high, cfg.airlight);
        clean.push_back(crop_image(s.clean, y0, x0, crop));
        hazy.push_back(hazegen::synthesize(clean.back(), hp).hazy);
        betas.push_back(hp.beta);
        targets.push_back(crop_targets(s.targets, y0, x0, crop));
      }
      const Tensor<float> hazy_t = images_to_tensor<float>(hazy);
      Tensor<float> guide(Shape{n, 1, crop, crop});
      if (want_guidance) {
        for (int b = 0; b < n; ++b) {
          const auto dets = det.detect_batch(hazy_t, b);
          const auto mask = guidance::normalize_guidance(guidance::render_guidance(dets, crop, crop, det.num_classes()));
          std::copy(mask.plane.values.begin(), mask.plane.values.end(), guide.plane(b, 0));
        }
      }

      net.zero_grad();
      const nn::Var<float> restored = net.forward(nn::Var<float>(hazy_t), guide);
      const nn::Var<float> clean_v(images_to_tensor<float>(clean));
      nn::Var<float> l_res = restoration_loss(restored, clean_v, cfg.restoration_loss);
      nn::Var<float> objective = l_res;
      double l_det_value = 0.0;
      if (cfg.detection_loss) {
        // With lambda = 0 the detection term is observed but kept off the graph.
        const nn::Var<float> det_in = cfg.lambda > 0.0 ? restored : restored.detach();
        const nn::Var<float> l_det =
            detector::detection_loss(det.forward(det_in), targets, det_weights, det.num_classes());
        l_det_value = l_det.value().item();
        if (cfg.lambda > 0.0) objective = total_loss(l_res, l_det, cfg.lambda);
      }

      LogEntry e;
      e.step = step + 1;
      e.l_res = l_res.value().item();
      e.l_det = l_det_value;
      e.l_total = total_loss(e.l_res, e.l_det, cfg.lambda);
      e.lr = nn::cosine_lr(step, total, cfg.initial_lr, cfg.lr_floor);
      if (!std::isfinite(e.l_res) || !std::isfinite(e.l_det) || !std::isfinite(objective.value().item())) {
        const auto dir = write_abort_snapshot(out_dir, cfg, e.step, clean, hazy, betas, targets, e.l_res, e.l_det);
        throw TrainingAborted("train: non-finite loss at step " + std::to_string(e.step) + " (l_res " +
                                  std::to_string(e.l_res) + ", l_det " + std::to_string(e.l_det) +
                                  "); batch saved to " + dir.string(),
                              dir);
      }
      objective.backward();
      opt.step(e.lr);

      result.log.push_back(e);
      if (log_file.is_open()) log_file << to_json(e).dump() << "\n" << std::flush;
      if (out_dir && cfg.checkpoint_every > 0 && e.step % cfg.checkpoint_every == 0) {
        char name[48];
        std::snprintf(name, sizeof(name), "step_%06d.ckpt", e.step);
        std::filesystem::create_directories(*out_dir / "checkpoints");
        write_checkpoint(*out_dir / "checkpoints" / name, snapshot(net, "dehazer", ck_config));
      }
    }
  }

  result.checkpoint = snapshot(net, "dehazer", ck_config);
  if (out_dir) write_checkpoint(*out_dir / "dehazer.ckpt", result.checkpoint);
  result.detector_checksum_after = det.checksum();
  if (result.detector_checksum_after != result.detector_checksum_before || !det.gradients_empty()) {
    throw std::runtime_error("train: frozen detector weights changed (checksum " +
                             checksum_hex(result.detector_checksum_before) + " -> " +
                             checksum_hex(result.detector_checksum_after) + ")");
  }
  return result;
}

TrainResult train_dehazer(const TrainConfig& cfg, const std::filesystem::path& manifest,
                          const std::filesystem::path& detector_checkpoint,
                          const std::optional<std::filesystem::path>& out_dir) {
  const auto det = detector::FrozenDetector::load(detector_checkpoint);
  return train_dehazer(cfg, manifest, *det, out_dir);
}

std::unique_ptr<dehazenet::DehazeNet<float>> load_dehazer(const Checkpoint& ck) {
  if (ck.kind != "dehazer") throw CheckpointError("expected a dehazer checkpoint, got '" + ck.kind + "'");
  if (!ck.config.contains("net")) throw CheckpointError("dehazer checkpoint has no network config");
  Rng rng(0);
  auto net = std::make_unique<dehazenet::DehazeNet<float>>(dehazenet::network_config_from_json(ck.config.at("net")), rng);
  load_into(ck, *net);
  net->set_training(false);
  return net;
}

std::unique_ptr<dehazenet::DehazeNet<float>> load_dehazer(const std::filesystem::path& path) {
  return load_dehazer(read_checkpoint(path));
}

// ---------------------------------------------------------------------------
// Ablation

namespace {

bool parse_lambda_variant(const std::string& v, double& lambda) {
  static const std::string prefix = "lambda=";
  if (v.rfind(prefix, 0) != 0) return false;
  const std::string num = v.substr(prefix.size());
  std::size_t used = 0;
  try {
    lambda = std::stod(num, &used);
  } catch (const std::exception&) {
    return false;
  }
  return used == num.size() && std::isfinite(lambda) && lambda >= 0.0;
}

}  // namespace

TrainConfig apply_variant(const TrainConfig& base, const std::string& variant) {
  TrainConfig c = base;
  double lambda = 0.0;
  if (variant == "full") {
  } else if (variant == "no_pfeb_s2") {
    c.net.enable_pfeb_stage2 = false;
  } else if (variant == "no_gfb") {
    c.net.enable_gfb = false;
  } else if (variant == "no_gab") {
    c.net.enable_gab = false;
  } else if (variant == "no_gfb_gab") {
    c.net.enable_gfb = false;
    c.net.enable_gab = false;
  } else if (variant == "mse") {
    c.restoration_loss = RestorationLossKind::kMse;
  } else if (variant == "no_ldet") {
    c.detection_loss = false;
  } else if (parse_lambda_variant(variant, lambda)) {
    c.lambda = lambda;
  } else {
    throw std::invalid_argument("ablation: unknown variant '" + variant + "'");
  }
  return c;
}

void validate_variants(const std::vector<std::string>& variants) {
  const TrainConfig probe;
  for (const auto& v : variants) (void)apply_variant(probe, v);
}

std::vector<std::string> default_ablation_variants() {
  return {"full", "no_pfeb_s2", "no_gfb", "no_gab", "mse", "no_ldet"};
}

std::vector<std::string> lambda_sweep_variants() { return {"lambda=0.01", "lambda=0.4", "lambda=10"}; }

AblationReport run_ablation(const TrainConfig& base, const std::vector<std::string>& variants,
                            const std::filesystem::path& train_manifest, const detector::FrozenDetector& detector,
                            const std::vector<evalkit::EvalSample>& eval_samples) {
  validate_variants(variants);
  std::vector<TrainConfig> configs;
  for (const auto& v : variants) {
    configs.push_back(apply_variant(base, v));
    configs.back().validate();
  }
  AblationReport report;
  for (std::size_t i = 0; i < variants.size(); ++i) {
    const TrainResult r = train_dehazer(configs[i], train_manifest, detector);
    auto net = load_dehazer(r.checkpoint);
    evalkit::NetworkRestorer restorer(*net);
    const evalkit::EvalReport ev = evalkit::evaluate(restorer, detector, eval_samples);
    AblationRow row;
    row.variant = variants[i];
    row.parameters = net->parameter_count();
    row.psnr = ev.psnr_mean.value_or(0.0);
    row.ssim = ev.ssim_mean.value_or(0.0);
    row.map50 = ev.map50.value_or(0.0);
    row.final_l_res = r.log.empty() ? 0.0 : r.log.back().l_res;
    report.rows.push_back(row);
  }
  return report;
}

nlohmann::json AblationReport::to_json() const {
  nlohmann::json rows_j = nlohmann::json::array();
  for (const auto& r : rows) {
    rows_j.push_back({{"variant", r.variant},
                      {"parameters", r.parameters},
                      {"psnr", r.psnr},
                      {"ssim", r.ssim},
                      {"map50", r.map50},
                      {"final_l_res", r.final_l_res}});
  }
  return {{"columns", {"variant", "parameters", "psnr", "ssim", "map50", "final_l_res"}}, {"rows", rows_j}};
}

std::string AblationReport::to_table() const {
  std::ostringstream os;
  char line[160];
  std::snprintf(line, sizeof(line), "%-14s %10s %9s %8s %8s %11s\n", "variant", "params", "PSNR", "SSIM", "mAP@0.5",
                "final_Lres");
  os << line;
  for (const auto& r : rows) {
    std::snprintf(line, sizeof(line), "%-14s %10zu %9.4f %8.5f %8.4f %11.6f\n", r.variant.c_str(), r.parameters,
                  r.psnr, r.ssim, r.map50, r.final_l_res);
    os << line;
  }
  return os.str();
}

std::vector<evalkit::EvalSample> make_eval_samples(const std::filesystem::path& manifest, std::uint64_t seed,
                                                   float beta_low, float beta_high) {
  const hazegen::ParamsPolicy policy{seed, beta_low, beta_high, hazegen::kDefaultAirlight};
  std::vector<evalkit::EvalSample> out;
  const auto records = read_manifest(manifest);
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& rec = records[i];
    if (rec.error || rec.annotations.empty()) continue;
    evalkit::EvalSample s;
    s.id = rec.image_path;
    s.clean = read_png(resolve_path(manifest, rec.image_path));
    const auto hp = hazegen::sample_params(hazegen::item_seed(policy, i), beta_low, beta_high, policy.airlight);
    s.hazy = hazegen::synthesize(s.clean, hp).hazy;
    s.beta = hp.beta;
    s.airlight = hp.airlight;
    s.annotations = rec.annotations;
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace friendnet::pipeline
