// Command-line front end: dataset generation, detector pretraining, dehazer
// training, inference, guidance export, evaluation and ablations.
//
// Every subcommand takes --config <file.json> (flat keys named like the long
// flags, with '-' written as '_') and --seed. Flags given on the command line
// win over the config file. Usage errors exit with 2, runtime failures with 1.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "friendnet/evalkit/evaluate.hpp"
#include "friendnet/guidance.hpp"
#include "friendnet/hazegen.hpp"
#include "friendnet/image_io.hpp"
#include "friendnet/pipeline.hpp"
#include "friendnet/shapes.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace friendnet;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw UsageError("config " + path.string() + ": " + e.what());
  }
}

std::string key_of(const std::string& flag) {
  std::string k = flag.substr(flag.find_first_not_of('-'));
  for (char& c : k) {
    if (c == '-') c = '_';
  }
  return k;
}

// Binds options so that a config file can supply any value not given on the
// command line.
class Options {
 public:
  explicit Options(CLI::App* app) : app_(app) {
    app_->add_option("--config", config_, "JSON config file");
    bind("--seed", seed, "Random seed");
  }

  template <typename T>
  CLI::Option* bind(const std::string& flag, T& var, const std::string& help) {
    CLI::Option* o = app_->add_option(flag, var, help);
    setters_[key_of(flag)] = {o, [&var](const json& j) { assign(j, var); }};
    return o;
  }

  CLI::Option* bind_flag(const std::string& flag, bool& var, const std::string& help) {
    CLI::Option* o = app_->add_flag(flag, var, help);
    setters_[key_of(flag)] = {o, [&var](const json& j) { j.get_to(var); }};
    return o;
  }

  void require(CLI::Option* option) { required_.push_back(option); }

  /// Applies config values for options absent from the command line, then
  /// checks that every required option got a value from one or the other.
  void apply_config() {
    std::vector<std::string> from_config;
    if (!config_.empty()) from_config = load_config();
    for (const CLI::Option* o : required_) {
      const std::string key = key_of(o->get_name());
      if (o->count() == 0 && std::find(from_config.begin(), from_config.end(), key) == from_config.end()) {
        throw UsageError(o->get_name() + " is required");
      }
    }
  }

  [[nodiscard]] bool given(const std::string& flag) const { return app_->get_option(flag)->count() > 0; }

  std::uint64_t seed = 0;

 private:
  std::vector<std::string> load_config() {
    const json j = read_json_file(config_);
    if (!j.is_object()) throw UsageError("config " + config_ + ": expected a JSON object");
    std::vector<std::string> keys;
    for (const auto& [key, value] : j.items()) {
      auto it = setters_.find(key);
      if (it == setters_.end()) throw UsageError("config " + config_ + ": unknown key '" + key + "'");
      keys.push_back(key);
      if (it->second.option->count() > 0) continue;
      try {
        it->second.set(value);
      } catch (const json::exception& e) {
        throw UsageError("config " + config_ + ": bad value for '" + key + "': " + e.what());
      }
    }
    return keys;
  }

  template <typename T>
  static void assign(const json& j, T& var) {
    j.get_to(var);
  }
  template <typename T>
  static void assign(const json& j, std::optional<T>& var) {
    var = j.get<T>();
  }

  struct Setter {
    CLI::Option* option;
    std::function<void(const json&)> set;
  };
  CLI::App* app_;
  std::string config_;
  std::map<std::string, Setter> setters_;
  std::vector<CLI::Option*> required_;
};

// ---------------------------------------------------------------------------

struct ShapesCmd {
  std::string out;
  std::size_t count = 16;
  int canvas = 64;
  int min_objects = 1;
  int max_objects = 4;

  void add(CLI::App& app, std::vector<std::function<void()>>& runners) {
    auto* sub = app.add_subcommand("shapes", "Render a synthetic shapes corpus with exact boxes");
    auto opts = std::make_shared<Options>(sub);
    opts->require(opts->bind("--out", out, "Output directory"));
    opts->bind("--count", count, "Number of images");
    opts->bind("--canvas", canvas, "Square canvas size in pixels");
    opts->bind("--min-objects", min_objects, "Minimum objects per scene");
    opts->bind("--max-objects", max_objects, "Maximum objects per scene");
    sub->callback([this, opts, &runners] {
      runners.push_back([this, opts] {
        opts->apply_config();
        shapes::SceneSpec spec;
        spec.canvas = canvas;
        spec.min_objects = min_objects;
        spec.max_objects = max_objects;
        spec.max_size = std::min(spec.max_size, canvas - 2);
        spec.min_size = std::min(spec.min_size, spec.max_size);
        spec.seed = opts->seed;
        const auto records = shapes::make_shapes_dataset(spec, count, out);
        std::cout << "wrote " << records.size() << " scenes to " << out << "\n";
      });
    });
  }
};

struct SynthCmd {
  std::string manifest;
  std::string out;
  float beta_low = hazegen::kTestBetaLow;
  float beta_high = hazegen::kTestBetaHigh;
  std::optional<float> beta;
  float airlight = hazegen::kDefaultAirlight;

  void add(CLI::App& app, std::vector<std::function<void()>>& runners) {
    auto* sub = app.add_subcommand("synth", "Haze every clean image of a manifest");
    auto opts = std::make_shared<Options>(sub);
    opts->require(opts->bind("--manifest", manifest, "Clean manifest (JSONL)"));
    opts->require(opts->bind("--out", out, "Output directory"));
    opts->bind("--beta-low", beta_low, "Lower end of the beta range");
    opts->bind("--beta-high", beta_high, "Upper end of the beta range");
    opts->bind("--beta", beta, "Fixed beta (overrides the range)");
    opts->bind("--airlight", airlight, "Atmospheric light A");
    sub->callback([this, opts, &runners] {
      runners.push_back([this, opts] {
        opts->apply_config();
        hazegen::ParamsPolicy policy{opts->seed, beta ? *beta : beta_low, beta ? *beta : beta_high, airlight};
        const auto records = hazegen::build_dataset(manifest, policy, out);
        std::size_t failed = 0;
        for (const auto& r : records) failed += r.error ? 1 : 0;
        std::cout << "hazed " << records.size() - failed << " images into " << out;
        if (failed) std::cout << " (" << failed << " failed, see manifest)";
        std::cout << "\n";
      });
    });
  }
};

struct PretrainCmd {
  std::string manifest;
  std::string out;
  int steps = 500;
  int batch_size = 8;
  double lr = 3e-3;
  double haze_probability = 0.5;
  int width = 16;
  std::string config;
  std::optional<std::uint64_t> seed;

  void add(CLI::App& app, std::vector<std::function<void()>>& runners) {
    auto* sub = app.add_subcommand("pretrain-detector", "Train the grid detector that is later frozen");
    sub->add_option("--manifest", manifest, "Annotated clean manifest (JSONL)")->required();
    sub->add_option("--out", out, "Output checkpoint path")->required();
    sub->add_option("--config", config, "JSON pretrain config");
    sub->add_option("--seed", seed, "Random seed");
    sub->add_option("--steps", steps, "Optimizer steps");
    sub->add_option("--batch-size", batch_size, "Batch size");
    sub->add_option("--lr", lr, "Initial learning rate");
    sub->add_option("--haze-probability", haze_probability, "Fraction of hazed training images");
    sub->add_option("--width", width, "Channels of the first stage");
    sub->callback([this, sub, &runners] {
      runners.push_back([this, sub] {
        json j = config.empty() ? json::object() : read_json_file(config);
        auto over = [&](const char* flag, const char* key, const json& v) {
          if (sub->get_option(flag)->count() > 0) j[key] = v;
        };
        over("--steps", "steps", steps);
        over("--batch-size", "batch_size", batch_size);
        over("--lr", "lr", lr);
        over("--haze-probability", "haze_probability", haze_probability);
        over("--width", "width", width);
        if (seed) j["seed"] = *seed;
        detector::PretrainConfig cfg;
        try {
          cfg = detector::pretrain_config_from_json(j);
        } catch (const std::invalid_argument& e) {
          throw UsageError(e.what());
        }
        const auto r = detector::pretrain_detector(manifest, cfg);
        write_checkpoint(out, r.checkpoint);
        std::cout << "detector loss " << (r.losses.empty() ? 0.0 : r.losses.front()) << " -> "
                  << (r.losses.empty() ? 0.0 : r.losses.back()) << "; checksum " << checksum_hex(r.checkpoint.checksum)
                  << "; wrote " << out << "\n";
      });
    });
  }
};

// Shared by train and ablate: a TrainConfig file plus flag overrides.
struct TrainOverrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> steps;
  std::optional<int> batch_size;
  std::optional<double> lr;
  std::optional<double> lambda;
  std::optional<std::string> restoration_loss;

  void add(CLI::App* sub) {
    sub->add_option("--config", config, "JSON training config (flat keys)");
    sub->add_option("--seed", seed, "Random seed");
    sub->add_option("--steps", steps, "Total steps (sets epochs = 1, steps_per_epoch = N)");
    sub->add_option("--batch-size", batch_size, "Batch size");
    sub->add_option("--lr", lr, "Initial learning rate");
    sub->add_option("--lambda", lambda, "Weight of the detection loss");
    sub->add_option("--restoration-loss", restoration_loss, "mae or mse");
  }

  [[nodiscard]] pipeline::TrainConfig resolve() const {
    json j = config.empty() ? json::object() : read_json_file(config);
    if (seed) j["seed"] = *seed;
    if (steps) {
      j["epochs"] = 1;
      j["steps_per_epoch"] = *steps;
    }
    if (batch_size) j["batch_size"] = *batch_size;
    if (lr) j["initial_lr"] = *lr;
    if (lambda) j["lambda"] = *lambda;
    if (restoration_loss) j["restoration_loss"] = *restoration_loss;
    try {
      return pipeline::train_config_from_json(j);
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
  }
};

struct TrainCmd {
  TrainOverrides overrides;
  std::string manifest;
  std::string detector;
  std::string out;

  void add(CLI::App& app, std::vector<std::function<void()>>& runners) {
    auto* sub = app.add_subcommand("train", "Train the dehazer against a frozen detector");
    overrides.add(sub);
    sub->add_option("--manifest", manifest, "Annotated clean manifest (JSONL)")->required();
    sub->add_option("--detector", detector, "Frozen detector checkpoint")->required();
    sub->add_option("--out", out, "Run directory (log, checkpoints)")->required();
    sub->callback([this, &runners] {
      runners.push_back([this] {
        const auto cfg = overrides.resolve();
        const auto r = pipeline::train_dehazer(cfg, manifest, fs::path(detector), fs::path(out));
        if (!r.log.empty()) {
          std::cout << "l_res " << r.log.front().l_res << " -> " << r.log.back().l_res << " over " << r.log.size()
                    << " steps\n";
        }
        std::cout << "detector checksum " << checksum_hex(r.detector_checksum_after) << " (unchanged)\n";
        std::cout << "wrote " << (fs::path(out) / "dehazer.ckpt").string() << "\n";
      });
    });
  }
};

std::vector<fs::path> list_images(const fs::path& input) {
  std::vector<fs::path> files;
  if (fs::is_directory(input)) {
    for (const auto& e : fs::directory_iterator(input)) {
      if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
  } else {
    files.push_back(input);
  }
  return files;
}

struct DehazeCmd {
  std::string checkpoint;
  std::string detector;
  std::string input;
  std::string out;

  void add(CLI::App& app, std::vector<std::function<void()>>& runners) {
    auto* sub = app.add_subcommand("dehaze", "Restore a hazy PNG or a directory of PNGs");
    auto opts = std::make_shared<Options>(sub);
    opts->require(opts->bind("--checkpoint", checkpoint, "Dehazer checkpoint"));
    opts->bind("--detector", detector, "Frozen detector for guidance (blank guidance when omitted)");
    opts->require(opts->bind("--input", input, "Hazy PNG or directory"));
    opts->require(opts->bind("--out", out, "Output directory"));
    sub->callback([this, opts, &runners] {
      runners.push_back([this, opts] {
        opts->apply_config();
        auto net = pipeline::load_dehazer(fs::path(checkpoint));
        std::shared_ptr<detector::FrozenDetector> det;
        if (!detector.empty()) det = detector::FrozenDetector::load(detector);
        fs::create_directories(out);
        const auto files = list_images(input);
        for (const auto& f : files) {
          const Image hazy = read_png(f);
          const auto mask = det ? evalkit::detector_guidance(*det, hazy)
                                : guidance::GuidanceMask{Plane(hazy.height(), hazy.width()), 1, true};
          write_png(fs::path(out) / f.filename(), dehazenet::dehaze(*net, hazy, mask));
        }
        std::cout << "restored " << files.size() << " image(s) into " << out << "\n";
      });
    });
  }
};

struct GuidanceCmd {
  std::string detector;
  std::string input;
  std::string out;

  void add(CLI::App& app, std::vector<std::function<void()>>& runners) {
    auto* sub = app.add_subcommand("guidance", "Render the detector guidance mask of an image as 16-bit PNG");
    auto opts = std::make_shared<Options>(sub);
    opts->require(opts->bind("--detector", detector, "Frozen detector checkpoint"));
    opts->require(opts->bind("--input", input, "Input PNG"));
    opts->require(opts->bind("--out", out, "Output PNG (a .json sidecar is written next to it)"));
    sub->callback([this, opts, &runners] {
      runners.push_back([this, opts] {
        opts->apply_config();
        const auto det = detector::FrozenDetector::load(detector);
        const Image image = read_png(input);
        const auto dets = det->detect(image);
        guidance::export_mask(out, guidance::normalize_guidance(guidance::render_guidance(
                                       dets, image.height(), image.width(), det->num_classes())));
        std::cout << dets.size() << " detection(s); wrote " << out << "\n";
      });
    });
  }
};

struct EvalCmd {
  std::string manifest;
  std::string detector;
  std::string checkpoint;
  std::string model = "identity";
  std::string json_out;
  std::string csv_out;

  void add(CLI::App& app, std::vector<std::function<void()>>& runners) {
    auto* sub = app.add_subcommand("eval", "PSNR / SSIM / mAP@0.5 over a hazy manifest");
    auto opts = std::make_shared<Options>(sub);
    opts->require(opts->bind("--manifest", manifest, "Manifest with image_path, hazy_path and annotations"));
    opts->require(opts->bind("--detector", detector, "Frozen detector checkpoint"));
    opts->bind("--checkpoint", checkpoint, "Dehazer checkpoint (selects the network model)");
    opts->bind("--model", model, "identity or oracle when no checkpoint is given")
        ->check(CLI::IsMember({"identity", "oracle"}));
    opts->bind("--json", json_out, "Write the report as JSON");
    opts->bind("--csv", csv_out, "Write per-image rows as CSV");
    sub->callback([this, opts, &runners] {
      runners.push_back([this, opts] {
        opts->apply_config();
        const auto det = detector::FrozenDetector::load(detector);
        std::unique_ptr<dehazenet::DehazeNet<float>> net;
        std::unique_ptr<evalkit::Restorer> restorer;
        if (!checkpoint.empty()) {
          net = pipeline::load_dehazer(fs::path(checkpoint));
          restorer = std::make_unique<evalkit::NetworkRestorer>(*net);
        } else if (model == "oracle") {
          restorer = std::make_unique<evalkit::OracleRestorer>();
        } else {
          restorer = std::make_unique<evalkit::IdentityRestorer>();
        }
        const auto report = evalkit::evaluate(*restorer, *det, fs::path(manifest));
        std::cout << report.to_table();
        if (!json_out.empty()) std::ofstream(json_out) << report.to_json().dump(2) << "\n";
        if (!csv_out.empty()) report.write_csv(csv_out);
      });
    });
  }
};

struct AblateCmd {
  TrainOverrides overrides;
  std::string manifest;
  std::string detector;
  std::vector<std::string> variants;
  bool lambda_sweep = false;
  std::uint64_t eval_seed = 1;
  std::string json_out;

  void add(CLI::App& app, std::vector<std::function<void()>>& runners) {
    auto* sub = app.add_subcommand("ablate", "Train and evaluate ablation variants from one base config");
    overrides.add(sub);
    sub->add_option("--manifest", manifest, "Annotated clean manifest (JSONL)")->required();
    sub->add_option("--detector", detector, "Frozen detector checkpoint")->required();
    sub->add_option("--variants", variants,
                    "Variants: full no_pfeb_s2 no_gfb no_gab no_gfb_gab mse no_ldet lambda=<v>")
        ->delimiter(',');
    sub->add_flag("--lambda-sweep", lambda_sweep, "Run lambda in {0.01, 0.4, 10}");
    sub->add_option("--eval-seed", eval_seed, "Seed of the evaluation haze");
    sub->add_option("--json", json_out, "Write the report as JSON");
    sub->callback([this, &runners] {
      runners.push_back([this] {
        std::vector<std::string> list = variants.empty() ? pipeline::default_ablation_variants() : variants;
        if (lambda_sweep) {
          for (const auto& v : pipeline::lambda_sweep_variants()) list.push_back(v);
        }
        try {
          pipeline::validate_variants(list);
        } catch (const std::invalid_argument& e) {
          throw UsageError(e.what());
        }
        const auto cfg = overrides.resolve();
        const auto det = detector::FrozenDetector::load(detector);
        const auto samples = pipeline::make_eval_samples(manifest, eval_seed);
        const auto report = pipeline::run_ablation(cfg, list, manifest, *det, samples);
        std::cout << report.to_table();
        if (!json_out.empty()) std::ofstream(json_out) << report.to_json().dump(2) << "\n";
      });
    });
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"friendnet: detection-guided single-image dehazing"};
  app.require_subcommand(1);
  std::vector<std::function<void()>> runners;

  ShapesCmd shapes_cmd;
  SynthCmd synth_cmd;
  PretrainCmd pretrain_cmd;
  TrainCmd train_cmd;
  DehazeCmd dehaze_cmd;
  GuidanceCmd guidance_cmd;
  EvalCmd eval_cmd;
  AblateCmd ablate_cmd;
  synth_cmd.add(app, runners);
  shapes_cmd.add(app, runners);
  pretrain_cmd.add(app, runners);
  train_cmd.add(app, runners);
  dehaze_cmd.add(app, runners);
  guidance_cmd.add(app, runners);
  eval_cmd.add(app, runners);
  ablate_cmd.add(app, runners);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << " (try --help)\n";
    return 2;
  }

  try {
    for (auto& run : runners) run();
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
