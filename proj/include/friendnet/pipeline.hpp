#pragma once

// Task-driven dehazer training against a frozen detector, loss assembly,
// dehazer checkpoints and the ablation harness.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "friendnet/checkpoint.hpp"
#include "friendnet/dehazenet.hpp"
#include "friendnet/detector.hpp"
#include "friendnet/evalkit/evaluate.hpp"
#include "friendnet/hazegen.hpp"
#include "json.hpp"

namespace friendnet::pipeline {

enum class RestorationLossKind { kMae, kMse };

/// Flat key/value training configuration. Keys in JSON match the field names;
/// network keys are the NetworkConfig field names.
struct TrainConfig {
  int batch_size = 8;
  int crop_size = 64;
  int epochs = 1;
  int steps_per_epoch = 200;
  double initial_lr = 2e-3;
  /// Cosine annealing is the only schedule; it ends at lr_floor.
  std::string lr_schedule = "cosine";
  double lr_floor = 1e-6;
  double weight_decay = 0.01;
  double lambda = 0.4;
  RestorationLossKind restoration_loss = RestorationLossKind::kMae;
  /// False removes the detection term from the graph entirely (no detector
  /// pass on the restored image, l_det logged as 0).
  bool detection_loss = true;
  float beta_low = hazegen::kTrainBetaLow;
  float beta_high = hazegen::kTrainBetaHigh;
  float airlight = hazegen::kDefaultAirlight;
  /// Write an intermediate checkpoint every N steps (0 = final only).
  int checkpoint_every = 0;
  /// Reserved; must stay false.
  bool mixed_precision = false;
  std::uint64_t seed = 0;
  dehazenet::NetworkConfig net;

  [[nodiscard]] int total_steps() const noexcept { return epochs * steps_per_epoch; }
  void validate() const;
};

nlohmann::json to_json(const TrainConfig& config);
/// Starts from `base` and applies every key of `j`; unknown keys throw.
TrainConfig train_config_from_json(const nlohmann::json& j, const TrainConfig& base = {});
TrainConfig load_train_config(const std::filesystem::path& path);

nn::Var<float> restoration_loss(const nn::Var<float>& restored, const nn::Var<float>& clean, RestorationLossKind kind);
nn::Var<double> restoration_loss(const nn::Var<double>& restored, const nn::Var<double>& clean,
                                 RestorationLossKind kind);
/// L_res + lambda * L_det.
double total_loss(double l_res, double l_det, double lambda);
nn::Var<float> total_loss(const nn::Var<float>& l_res, const nn::Var<float>& l_det, double lambda);

struct LogEntry {
  int step = 0;  // 1-based
  double l_res = 0.0;
  double l_det = 0.0;
  double l_total = 0.0;
  double lr = 0.0;
};
nlohmann::json to_json(const LogEntry& entry);

class TrainingAborted : public std::runtime_error {
 public:
  TrainingAborted(const std::string& what, std::filesystem::path snapshot)
      : std::runtime_error(what), snapshot_dir(std::move(snapshot)) {}
  std::filesystem::path snapshot_dir;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<LogEntry> log;
  std::uint64_t detector_checksum_before = 0;
  std::uint64_t detector_checksum_after = 0;
};

/// When out_dir is set: train_log.jsonl, dehazer.ckpt, checkpoints/step_*.ckpt
/// and, on a non-finite loss, abort_step_<n>/ with the offending batch.
/// Throws std::runtime_error if the detector weights changed.
TrainResult train_dehazer(const TrainConfig& config, const std::filesystem::path& manifest,
                          const detector::FrozenDetector& detector,
                          const std::optional<std::filesystem::path>& out_dir = std::nullopt);
TrainResult train_dehazer(const TrainConfig& config, const std::filesystem::path& manifest,
                          const std::filesystem::path& detector_checkpoint,
                          const std::optional<std::filesystem::path>& out_dir = std::nullopt);

/// Builds the network described by a dehazer checkpoint and loads its weights.
std::unique_ptr<dehazenet::DehazeNet<float>> load_dehazer(const Checkpoint& checkpoint);
std::unique_ptr<dehazenet::DehazeNet<float>> load_dehazer(const std::filesystem::path& path);

/// Named ablation variants: full, no_pfeb_s2, no_gfb, no_gab, no_gfb_gab, mse,
/// no_ldet, and lambda=<value>.
TrainConfig apply_variant(const TrainConfig& base, const std::string& variant);
/// Throws std::invalid_argument naming the first unknown variant.
void validate_variants(const std::vector<std::string>& variants);
std::vector<std::string> default_ablation_variants();
std::vector<std::string> lambda_sweep_variants();

struct AblationRow {
  std::string variant;
  std::size_t parameters = 0;
  double psnr = 0.0;
  double ssim = 0.0;
  double map50 = 0.0;
  double final_l_res = 0.0;
};

struct AblationReport {
  std::vector<AblationRow> rows;
  [[nodiscard]] nlohmann::json to_json() const;
  [[nodiscard]] std::string to_table() const;
};

/// Trains every variant from the same seed and evaluates it on `eval_samples`.
/// All variant names are checked before any training starts.
AblationReport run_ablation(const TrainConfig& base, const std::vector<std::string>& variants,
                            const std::filesystem::path& train_manifest, const detector::FrozenDetector& detector,
                            const std::vector<evalkit::EvalSample>& eval_samples);

/// Hazes every annotated clean image of a manifest with deterministic test-range
/// haze, in memory.
std::vector<evalkit::EvalSample> make_eval_samples(const std::filesystem::path& manifest, std::uint64_t seed,
                                                   float beta_low = hazegen::kTestBetaLow,
                                                   float beta_high = hazegen::kTestBetaHigh);

}  // namespace friendnet::pipeline
