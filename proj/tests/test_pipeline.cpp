#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "friendnet/pipeline.hpp"
#include "friendnet/shapes.hpp"
#include "grad_check.hpp"

using namespace friendnet;
using namespace friendnet::pipeline;

namespace {

std::filesystem::path scratch(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("friendnet_pipe_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Small corpus plus an untrained detector, shared by every test.
struct Fixture {
  std::filesystem::path manifest;
  std::shared_ptr<detector::FrozenDetector> det;
};

const Fixture& fixture() {
  static const Fixture f = [] {
    const auto dir = scratch("fixture");
    shapes::SceneSpec spec;
    spec.canvas = 32;
    spec.min_size = 8;
    spec.max_size = 14;
    spec.seed = 2;
    shapes::make_shapes_dataset(spec, 4, dir / "data");
    Rng rng(7);
    detector::DetectorConfig dc{shapes::kNumClasses, 4};
    detector::GridDetector<float> net(dc, rng);
    write_checkpoint(dir / "det.ckpt", snapshot(net, "detector", {{"net", detector::to_json(dc)}}));
    return Fixture{dir / "data" / "manifest.jsonl", detector::FrozenDetector::load(dir / "det.ckpt")};
  }();
  return f;
}

TrainConfig tiny_config(int steps) {
  TrainConfig c;
  c.batch_size = 2;
  c.crop_size = 16;
  c.steps_per_epoch = steps;
  c.seed = 3;
  c.net.num_levels = 2;
  c.net.base_channels = 4;
  c.net.blocks_per_level = 1;
  c.net.channel_attention_ratio = 2;
  c.net.pdb_expansion = 1;
  return c;
}

nn::Var<float> var_of(std::vector<float> v) {
  Tensor<float> t(Shape{1, 1, 1, static_cast<int>(v.size())});
  std::copy(v.begin(), v.end(), t.data());
  return nn::Var<float>(t);
}

}  // namespace

TEST(Losses, HandExamples) {
  const auto mae = restoration_loss(var_of({0.5f, 0.5f}), var_of({0.4f, 0.6f}), RestorationLossKind::kMae);
  EXPECT_NEAR(mae.value().item(), 0.1, 1e-7);
  const auto mse = restoration_loss(var_of({0.5f, 0.5f}), var_of({0.4f, 0.6f}), RestorationLossKind::kMse);
  EXPECT_NEAR(mse.value().item(), 0.01, 1e-8);
  EXPECT_DOUBLE_EQ(total_loss(0.2, 2.5, 0.4), 1.2);
  EXPECT_DOUBLE_EQ(total_loss(0.2, 2.5, 0.0), 0.2);
  EXPECT_NEAR(total_loss(var_of({0.2f}), var_of({2.5f}), 0.4).value().item(), 1.2, 1e-6);
  EXPECT_THROW(restoration_loss(var_of({0.5f}), var_of({0.4f, 0.6f}), RestorationLossKind::kMae),
               std::invalid_argument);
}

TEST(Losses, RestorationGradientsMatchFiniteDifferences) {
  Rng rng(4);
  const auto a = friendnet::testing::random_tensor(Shape{1, 3, 4, 4}, rng);
  const auto b = friendnet::testing::random_tensor(Shape{1, 3, 4, 4}, rng);
  for (auto kind : {RestorationLossKind::kMae, RestorationLossKind::kMse}) {
    nn::Var<double> x(a, true);
    restoration_loss(x, nn::Var<double>(b), kind).backward();
    for (std::size_t i = 0; i < a.size(); i += 5) {
      auto plus = a, minus = a;
      plus.data()[i] += 1e-6;
      minus.data()[i] -= 1e-6;
      const double fd = (restoration_loss(nn::Var<double>(plus), nn::Var<double>(b), kind).value().item() -
                         restoration_loss(nn::Var<double>(minus), nn::Var<double>(b), kind).value().item()) /
                        2e-6;
      EXPECT_NEAR(x.grad().data()[i], fd, 1e-6);
    }
  }
}

TEST(TrainConfig, JsonRoundTripAndStrictKeys) {
  TrainConfig c = tiny_config(5);
  c.lambda = 0.01;
  c.restoration_loss = RestorationLossKind::kMse;
  const TrainConfig back = train_config_from_json(to_json(c));
  EXPECT_EQ(to_json(back), to_json(c));
  EXPECT_THROW(train_config_from_json({{"lamda", 0.4}}), std::invalid_argument);
  EXPECT_THROW(train_config_from_json({{"batch_size", "eight"}}), std::invalid_argument);
  EXPECT_THROW(train_config_from_json({{"restoration_loss", "huber"}}), std::invalid_argument);
  EXPECT_THROW(train_config_from_json({{"lambda", -1.0}}), std::invalid_argument);
  EXPECT_THROW(train_config_from_json({{"crop_size", 20}}), std::invalid_argument);
  EXPECT_THROW(train_config_from_json({{"mixed_precision", true}}), std::invalid_argument);
  EXPECT_THROW(train_config_from_json({{"lr_schedule", "step"}}), std::invalid_argument);
  EXPECT_EQ(train_config_from_json({{"enable_gab", false}}).net.enable_gab, false);

  const auto dir = scratch("cfg");
  std::ofstream(dir / "c.json") << R"({"lambda": 10, "seed": 9})";
  const TrainConfig f = load_train_config(dir / "c.json");
  EXPECT_EQ(f.lambda, 10.0);
  EXPECT_EQ(f.seed, 9u);
}

TEST(Training, ZeroStepsCheckpointEqualsInitialization) {
  const auto& fx = fixture();
  const TrainConfig c = tiny_config(0);
  const TrainResult r = train_dehazer(c, fx.manifest, *fx.det);
  EXPECT_TRUE(r.log.empty());
  Rng rng = Rng::stream(c.seed, 1);
  dehazenet::DehazeNet<float> fresh(c.net, rng);
  EXPECT_EQ(module_checksum(fresh), module_checksum(*load_dehazer(r.checkpoint)));
}

TEST(Training, LogsCheckpointsAndKeepsDetectorFrozen) {
  const auto& fx = fixture();
  TrainConfig c = tiny_config(4);
  c.checkpoint_every = 2;
  const auto dir = scratch("run");
  const TrainResult r = train_dehazer(c, fx.manifest, *fx.det, dir);
  ASSERT_EQ(r.log.size(), 4u);
  EXPECT_EQ(r.detector_checksum_before, r.detector_checksum_after);
  EXPECT_EQ(r.detector_checksum_after, fx.det->checksum());
  EXPECT_TRUE(fx.det->gradients_empty());
  EXPECT_TRUE(std::filesystem::exists(dir / "checkpoints" / "step_000002.ckpt"));
  EXPECT_TRUE(std::filesystem::exists(dir / "checkpoints" / "step_000004.ckpt"));
  EXPECT_EQ(slurp(dir / "checkpoints" / "step_000004.ckpt"), slurp(dir / "dehazer.ckpt"));

  std::ifstream log(dir / "train_log.jsonl");
  std::string line;
  int step = 0;
  while (std::getline(log, line)) {
    const auto j = nlohmann::json::parse(line);
    ++step;
    EXPECT_EQ(j["step"], step);
    for (const char* k : {"l_res", "l_det", "l_total", "lr"}) EXPECT_TRUE(j.contains(k)) << k;
    EXPECT_DOUBLE_EQ(j["l_total"].get<double>(), j["l_res"].get<double>() + c.lambda * j["l_det"].get<double>());
  }
  EXPECT_EQ(step, 4);
  EXPECT_DOUBLE_EQ(r.log[0].lr, c.initial_lr);
  EXPECT_GT(r.log[0].lr, r.log[3].lr);

  const auto net = load_dehazer(dir / "dehazer.ckpt");
  EXPECT_EQ(module_checksum(*net), module_checksum(*load_dehazer(r.checkpoint)));
}

TEST(Training, DeterministicForSeed) {
  const auto& fx = fixture();
  const TrainConfig c = tiny_config(3);
  const auto a = scratch("det_a"), b = scratch("det_b");
  train_dehazer(c, fx.manifest, *fx.det, a);
  train_dehazer(c, fx.manifest, *fx.det, b);
  EXPECT_EQ(slurp(a / "dehazer.ckpt"), slurp(b / "dehazer.ckpt"));
  EXPECT_EQ(slurp(a / "train_log.jsonl"), slurp(b / "train_log.jsonl"));
  TrainConfig other = c;
  other.seed = 4;
  const auto d = scratch("det_c");
  train_dehazer(other, fx.manifest, *fx.det, d);
  EXPECT_NE(slurp(a / "dehazer.ckpt"), slurp(d / "dehazer.ckpt"));
}

TEST(Training, ZeroLambdaMatchesRemovedDetectionTerm) {
  const auto& fx = fixture();
  TrainConfig zero = tiny_config(3);
  zero.lambda = 0.0;
  TrainConfig removed = tiny_config(3);
  removed.detection_loss = false;
  const TrainResult a = train_dehazer(zero, fx.manifest, *fx.det);
  const TrainResult b = train_dehazer(removed, fx.manifest, *fx.det);
  EXPECT_EQ(module_checksum(*load_dehazer(a.checkpoint)), module_checksum(*load_dehazer(b.checkpoint)));
  for (std::size_t i = 0; i < a.log.size(); ++i) {
    EXPECT_EQ(a.log[i].l_res, b.log[i].l_res);
    EXPECT_GT(a.log[i].l_det, 0.0);
    EXPECT_EQ(b.log[i].l_det, 0.0);
  }
  // A positive lambda changes the trajectory.
  const TrainResult c = train_dehazer(tiny_config(3), fx.manifest, *fx.det);
  EXPECT_NE(module_checksum(*load_dehazer(a.checkpoint)), module_checksum(*load_dehazer(c.checkpoint)));
}

TEST(Training, NonFiniteLossAbortsWithSnapshot) {
  const auto& fx = fixture();
  TrainConfig c = tiny_config(6);
  // Beyond float range: the float objective overflows on the first step.
  c.lambda = 1e39;
  const auto dir = scratch("abort");
  try {
    train_dehazer(c, fx.manifest, *fx.det, dir);
    FAIL() << "expected TrainingAborted";
  } catch (const TrainingAborted& e) {
    EXPECT_TRUE(std::filesystem::exists(e.snapshot_dir / "batch.json"));
    EXPECT_TRUE(std::filesystem::exists(e.snapshot_dir / "item_0_hazy.png"));
    const auto j = nlohmann::json::parse(slurp(e.snapshot_dir / "batch.json"));
    EXPECT_EQ(j["items"].size(), 2u);
  }
  EXPECT_TRUE(fx.det->gradients_empty());
}

TEST(Training, RejectsUnusableInputs) {
  const auto& fx = fixture();
  TrainConfig big = tiny_config(1);
  big.crop_size = 64;
  EXPECT_THROW(train_dehazer(big, fx.manifest, *fx.det), std::invalid_argument);
  const auto dir = scratch("empty");
  write_manifest(dir / "m.jsonl", {});
  EXPECT_THROW(train_dehazer(tiny_config(1), dir / "m.jsonl", *fx.det), std::invalid_argument);
}

TEST(Ablation, VariantsMapToConfigs) {
  const TrainConfig base = tiny_config(1);
  EXPECT_FALSE(apply_variant(base, "no_pfeb_s2").net.enable_pfeb_stage2);
  EXPECT_FALSE(apply_variant(base, "no_gfb").net.enable_gfb);
  EXPECT_FALSE(apply_variant(base, "no_gab").net.enable_gab);
  EXPECT_EQ(apply_variant(base, "mse").restoration_loss, RestorationLossKind::kMse);
  EXPECT_FALSE(apply_variant(base, "no_ldet").detection_loss);
  EXPECT_EQ(apply_variant(base, "lambda=10").lambda, 10.0);
  EXPECT_EQ(apply_variant(base, "lambda=0.01").lambda, 0.01);
  EXPECT_THROW(apply_variant(base, "no_pdb"), std::invalid_argument);
  EXPECT_THROW(apply_variant(base, "lambda=-1"), std::invalid_argument);
  EXPECT_THROW(apply_variant(base, "lambda=abc"), std::invalid_argument);
  EXPECT_THROW(validate_variants({"full", "bogus"}), std::invalid_argument);
  EXPECT_EQ(default_ablation_variants().size(), 6u);
  EXPECT_EQ(lambda_sweep_variants().size(), 3u);

  Rng r1(1), r2(1), r3(1);
  const auto full = dehazenet::DehazeNet<float>(apply_variant(base, "full").net, r1).parameter_count();
  EXPECT_LT(dehazenet::DehazeNet<float>(apply_variant(base, "no_gfb").net, r2).parameter_count(), full);
  EXPECT_LT(dehazenet::DehazeNet<float>(apply_variant(base, "no_pfeb_s2").net, r3).parameter_count(), full);
}

TEST(Ablation, UnknownVariantFailsBeforeTraining) {
  const auto& fx = fixture();
  EXPECT_THROW(run_ablation(tiny_config(1), {"full", "nope"}, fx.manifest, *fx.det, {}), std::invalid_argument);
}

TEST(Ablation, ReportShape) {
  const auto& fx = fixture();
  const auto samples = make_eval_samples(fx.manifest, 1);
  ASSERT_FALSE(samples.empty());
  for (const auto& s : samples) {
    ASSERT_TRUE(s.beta.has_value());
    EXPECT_GE(*s.beta, hazegen::kTestBetaLow);
    EXPECT_LE(*s.beta, hazegen::kTestBetaHigh);
  }
  const AblationReport r = run_ablation(tiny_config(1), {"full", "no_gfb_gab", "lambda=10"}, fx.manifest, *fx.det,
                                        samples);
  ASSERT_EQ(r.rows.size(), 3u);
  EXPECT_EQ(r.rows[1].variant, "no_gfb_gab");
  EXPECT_LT(r.rows[1].parameters, r.rows[0].parameters);
  for (const auto& row : r.rows) {
    EXPECT_TRUE(std::isfinite(row.psnr));
    EXPECT_GT(row.final_l_res, 0.0);
  }
  const auto j = r.to_json();
  EXPECT_EQ(j["columns"].size(), 6u);
  EXPECT_EQ(j["rows"].size(), 3u);
  for (const auto& row : j["rows"]) EXPECT_EQ(row.size(), 6u);
  EXPECT_NE(r.to_table().find("lambda=10"), std::string::npos);
}

TEST(Ablation, NoGuidanceVariantIgnoresGuidance) {
  const TrainConfig c = apply_variant(tiny_config(1), "no_gfb_gab");
  Rng rng(5);
  dehazenet::DehazeNet<float> net(c.net, rng);
  Rng data(6);
  Tensor<float> x(Shape{1, 3, 16, 16});
  for (std::size_t i = 0; i < x.size(); ++i) x.data()[i] = static_cast<float>(data.uniform());
  Tensor<float> g1(Shape{1, 1, 16, 16}), g2(Shape{1, 1, 16, 16});
  for (std::size_t i = 0; i < g2.size(); ++i) g2.data()[i] = static_cast<float>(data.uniform());
  const auto a = net.forward(nn::Var<float>(x), g1).value();
  const auto b = net.forward(nn::Var<float>(x), g2).value();
  ASSERT_EQ(a.size(), b.size());
  EXPECT_EQ(0, std::memcmp(a.data(), b.data(), a.size() * sizeof(float)));
}
