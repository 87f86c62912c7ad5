#include <gtest/gtest.h>

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "friendnet/manifest.hpp"

namespace fs = std::filesystem;

namespace {

struct CliRun {
  int code;
  std::string output;
};

CliRun cli(const std::string& args) {
  const std::string cmd = std::string(FRIENDNET_CLI) + " " + args + " 2>&1";
  FILE* p = popen(cmd.c_str(), "r");
  std::string out;
  std::array<char, 512> buf{};
  while (std::fgets(buf.data(), buf.size(), p)) out += buf.data();
  const int status = pclose(p);
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, out};
}

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("friendnet_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST(Cli, UsageErrorsExitWithTwo) {
  EXPECT_EQ(cli("").code, 2);
  EXPECT_EQ(cli("frobnicate").code, 2);
  EXPECT_EQ(cli("train --manifest m.jsonl").code, 2);
  EXPECT_EQ(cli("--help").code, 0);
  const auto dir = scratch("usage");
  std::ofstream(dir / "bad.json") << R"({"bogus": 1})";
  const CliRun r = cli("shapes --out " + (dir / "s").string() + " --config " + (dir / "bad.json").string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("bogus"), std::string::npos);
}

TEST(Cli, RuntimeFailureExitsNonZeroWithOneLine) {
  const auto dir = scratch("runtime");
  const CliRun r = cli("synth --manifest " + (dir / "missing.jsonl").string() + " --out " + (dir / "o").string());
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(std::count(r.output.begin(), r.output.end(), '\n'), 1) << r.output;
}

TEST(Cli, ShapesSynthAndConfigFile) {
  const auto dir = scratch("synth");
  std::ofstream(dir / "shapes.json") << R"({"count": 3, "canvas": 32, "seed": 5})";
  ASSERT_EQ(cli("shapes --config " + (dir / "shapes.json").string() + " --out " + (dir / "shapes").string()).code, 0);
  const auto clean = friendnet::read_manifest(dir / "shapes" / "manifest.jsonl");
  ASSERT_EQ(clean.size(), 3u);

  ASSERT_EQ(cli("synth --manifest " + (dir / "shapes" / "manifest.jsonl").string() + " --out " +
                (dir / "zero").string() + " --beta 0")
                .code,
            0);
  for (const auto& r : friendnet::read_manifest(dir / "zero" / "manifest.jsonl")) {
    ASSERT_TRUE(r.beta.has_value());
    EXPECT_EQ(*r.beta, 0.0);
  }
  // Fixed seed, fixed output.
  const std::string synth = "synth --manifest " + (dir / "shapes" / "manifest.jsonl").string() + " --seed 8 --out ";
  ASSERT_EQ(cli(synth + (dir / "a").string()).code, 0);
  ASSERT_EQ(cli(synth + (dir / "b").string()).code, 0);
  EXPECT_EQ(friendnet::read_manifest(dir / "a" / "manifest.jsonl"),
            friendnet::read_manifest(dir / "b" / "manifest.jsonl"));
}

TEST(Cli, EndToEndTinyRun) {
  const auto dir = scratch("e2e");
  const std::string m = (dir / "shapes" / "manifest.jsonl").string();
  ASSERT_EQ(cli("shapes --count 2 --canvas 32 --out " + (dir / "shapes").string()).code, 0);
  ASSERT_EQ(cli("synth --manifest " + m + " --out " + (dir / "hazy").string()).code, 0);
  ASSERT_EQ(cli("pretrain-detector --manifest " + m + " --out " + (dir / "det.ckpt").string() +
                " --steps 2 --batch-size 2 --width 4")
                .code,
            0);
  std::ofstream(dir / "train.json") << R"({"batch_size": 2, "crop_size": 16, "num_levels": 2, "base_channels": 4,
                                           "blocks_per_level": 1, "channel_attention_ratio": 2})";
  ASSERT_EQ(cli("train --config " + (dir / "train.json").string() + " --steps 2 --manifest " + m + " --detector " +
                (dir / "det.ckpt").string() + " --out " + (dir / "run").string())
                .code,
            0);
  EXPECT_TRUE(fs::exists(dir / "run" / "dehazer.ckpt"));
  EXPECT_TRUE(fs::exists(dir / "run" / "train_log.jsonl"));

  ASSERT_EQ(cli("dehaze --checkpoint " + (dir / "run" / "dehazer.ckpt").string() + " --detector " +
                (dir / "det.ckpt").string() + " --input " + (dir / "hazy" / "hazy").string() + " --out " +
                (dir / "restored").string())
                .code,
            0);
  EXPECT_EQ(std::distance(fs::directory_iterator(dir / "restored"), fs::directory_iterator{}), 2);

  ASSERT_EQ(cli("guidance --detector " + (dir / "det.ckpt").string() + " --input " +
                (dir / "hazy" / "hazy" / "hazy_000000.png").string() + " --out " + (dir / "g.png").string())
                .code,
            0);
  EXPECT_TRUE(fs::exists(dir / "g.png.json"));

  const CliRun ev = cli("eval --manifest " + (dir / "hazy" / "manifest.jsonl").string() + " --detector " +
                     (dir / "det.ckpt").string() + " --checkpoint " + (dir / "run" / "dehazer.ckpt").string() +
                     " --json " + (dir / "e.json").string() + " --csv " + (dir / "e.csv").string());
  ASSERT_EQ(ev.code, 0) << ev.output;
  std::ifstream ej(dir / "e.json");
  const auto j = nlohmann::json::parse(ej);
  EXPECT_EQ(j["counts"]["images"], 2);

  friendnet::write_manifest(dir / "empty.jsonl", {});
  const CliRun empty = cli("eval --manifest " + (dir / "empty.jsonl").string() + " --detector " +
                        (dir / "det.ckpt").string() + " --model identity");
  EXPECT_EQ(empty.code, 0) << empty.output;

  EXPECT_EQ(cli("ablate --variants full,nope --manifest " + m + " --detector " + (dir / "det.ckpt").string()).code,
            2);
}
