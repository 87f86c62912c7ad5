#include <gtest/gtest.h>

#include <cmath>

#include "friendnet/dehazenet.hpp"
#include "friendnet/evalkit/metrics.hpp"
#include "friendnet/hazegen.hpp"
#include "friendnet/shapes.hpp"
#include "grad_check.hpp"

using namespace friendnet;
using namespace friendnet::dehazenet;
using friendnet::testing::grad_check;
using friendnet::testing::random_tensor;
using friendnet::testing::VarD;

namespace {

template <typename M>
std::vector<VarD*> params_of(M& m) {
  std::vector<VarD*> out;
  for (auto& p : m.parameters()) out.push_back(p.var);
  return out;
}

std::vector<VarD*> with(std::vector<VarD*> v, VarD* extra) {
  v.insert(v.begin(), extra);
  return v;
}

NetworkConfig small_config() {
  NetworkConfig c;
  c.num_levels = 3;
  c.base_channels = 4;
  c.blocks_per_level = 1;
  c.channel_attention_ratio = 2;
  return c;
}

}  // namespace

// --- gradients --------------------------------------------------------------

TEST(BlockGradients, DehazingBlock) {
  Rng rng(1), data(2);
  DehazingBlock<double> pdb(4, 2, rng);
  VarD f(random_tensor({1, 4, 8, 8}, data));
  EXPECT_LT(grad_check([&] { return pdb.forward(f); }, with(params_of(pdb), &f)).max_rel_error, 1e-3);
}

TEST(BlockGradients, ChannelAttention) {
  Rng rng(3), data(4);
  ChannelAttention<double> ca(8, 4, rng);
  VarD f(random_tensor({2, 8, 6, 6}, data));
  EXPECT_LT(grad_check([&] { return ca.forward(f); }, with(params_of(ca), &f)).max_rel_error, 1e-3);
}

TEST(BlockGradients, PfebBothStages) {
  Rng rng(5), data(6);
  Pfeb<double> block(8, 4, 2, true, rng);
  VarD f(random_tensor({2, 8, 8, 8}, data));
  EXPECT_LT(grad_check([&] { return block.forward(f); }, with(params_of(block), &f)).max_rel_error, 1e-3);
}

TEST(BlockGradients, GuidanceFusion) {
  Rng rng(7), data(8);
  GuidanceFusion<double> gfb(8, rng);
  VarD f(random_tensor({1, 8, 16, 16}, data));
  VarD g(random_tensor({1, 1, 16, 16}, data, 0, 1));
  EXPECT_LT(grad_check([&] { return gfb.forward(f, g); }, with(with(params_of(gfb), &g), &f)).max_rel_error, 1e-3);
}

// Finite differences across a ReLU kink are meaningless, so the weights are
// arranged to keep every pre-activation well clear of zero: even channels are
// firmly active, odd channels firmly dead.
TEST(BlockGradients, GuidanceAttention) {
  Rng rng(7), data(8);
  GuidanceAttention<double> gab(8, rng);
  for (auto& p : gab.parameters()) {
    for (auto& v : p.var->mutable_value().vec()) v = data.uniform(0.1, 0.5);
  }
  auto& attn_bias = gab.attention_projection().bias()->mutable_value();
  for (int c = 1; c < 8; c += 2) attn_bias[static_cast<std::size_t>(c)] = -50.0;
  VarD f(random_tensor({1, 8, 16, 16}, data, 0.2, 1.0));
  VarD g(random_tensor({1, 1, 16, 16}, data, 0.2, 1.0));
  EXPECT_LT(grad_check([&] { return gab.forward(f, g); }, with(with(params_of(gab), &g), &f)).max_rel_error, 1e-3);
}

TEST(BlockGradients, WholeNetworkInputGradient) {
  Rng rng(9), data(10);
  DehazeNet<double> net(small_config(), rng);
  net.output_projection().fill(0.01, 0.0);  // make the body visible at the output
  VarD x(random_tensor({2, 3, 8, 12}, data, 0.3, 0.7));
  const auto g = random_tensor({2, 1, 8, 12}, data, 0, 1);
  EXPECT_LT(grad_check([&] { return net.forward(x, g); }, {&x}, 1e-4, 64).max_rel_error, 1e-3);
}

// --- exact limits -----------------------------------------------------------

TEST(DehazingBlock, UnitTransmissionIsExactIdentity) {
  Rng rng(11), data(12);
  DehazingBlock<float> pdb(4, 2, rng);
  pdb.inv_t_projection().fill(0.0f, 1.0f);
  nn::Var<float> f(random_tensor({2, 4, 8, 8}, data, -3, 3).cast<float>());
  EXPECT_EQ(pdb.forward(f).value().vec(), f.value().vec());
}

TEST(DehazingBlock, ZeroTransmissionGivesBroadcastAirlight) {
  Rng rng(13), data(14);
  DehazingBlock<float> pdb(4, 2, rng);
  pdb.inv_t_projection().fill(0.0f, 0.0f);
  nn::Var<float> f(random_tensor({2, 4, 5, 7}, data).cast<float>());
  const auto out = pdb.forward(f).value();
  const auto a = pdb.parts(f).airlight.value();
  for (int n = 0; n < 2; ++n)
    for (int c = 0; c < 4; ++c)
      for (int i = 0; i < 35; ++i) ASSERT_EQ(out.plane(n, c)[i], a.at(n, c, 0, 0));
}

TEST(Pfeb, StageOneOnlyWithZeroProjectionIsIdentity) {
  Rng rng(15), data(16);
  Pfeb<float> block(8, 4, 2, false, rng);
  block.stage1_projection().fill(0.0f, 0.0f);
  nn::Var<float> f(random_tensor({2, 8, 6, 10}, data).cast<float>());
  const auto out = block.forward(f);
  EXPECT_EQ(out.value().vec(), f.value().vec());
  EXPECT_FALSE(block.has_stage2());
}

TEST(Pfeb, PreservesShape) {
  Rng rng(17), data(18);
  Pfeb<float> block(16, 4, 2, true, rng);
  for (Shape s : {Shape{2, 16, 8, 8}, Shape{3, 16, 5, 13}, Shape{2, 16, 1, 1}}) {
    EXPECT_EQ(block.forward(nn::Var<float>(random_tensor(s, data).cast<float>())).shape(), s);
  }
}

TEST(ChannelAttention, SaturatedExpandIsIdentityAndScaleIsPerChannel) {
  Rng rng(19), data(20);
  ChannelAttention<double> ca(8, 2, rng);
  VarD f(random_tensor({1, 8, 4, 4}, data));
  const auto sc = ca.scale(f).value();
  EXPECT_EQ(sc.shape(), (Shape{1, 8, 1, 1}));
  for (double v : sc.vec()) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
  ca.expand().fill(0.0, 60.0);
  const auto out = ca.forward(f).value();
  for (std::size_t i = 0; i < out.size(); ++i) EXPECT_NEAR(out[i], f.value()[i], 1e-20 + 1e-15 * std::abs(f.value()[i]));
  EXPECT_THROW(ChannelAttention<double>(6, 4, rng), std::invalid_argument);
}

TEST(GuidanceBlocks, IdentityAndAnnihilationLimits) {
  Rng rng(21), data(22);
  GuidanceFusion<float> gfb(4, rng);
  GuidanceAttention<float> gab(4, rng);
  nn::Var<float> f(random_tensor({1, 4, 6, 6}, data).cast<float>());
  nn::Var<float> g(random_tensor({1, 1, 6, 6}, data, 0, 1).cast<float>());
  nn::Var<float> zero_g(Tensor<float>(Shape{1, 1, 6, 6}));

  gfb.lift().fill(0.5f, 0.0f);
  gfb.spread().fill(0.5f, 0.0f);
  EXPECT_EQ(gfb.forward(f, zero_g).value().vec(), f.value().vec());
  gfb.lift().fill(0.0f, 0.0f);
  EXPECT_EQ(gfb.forward(f, g).value().vec(), f.value().vec());

  EXPECT_EQ(gab.forward(f, g).shape(), f.shape());
  gab.attention_projection().fill(0.0f, 0.0f);
  const auto annihilated = gab.forward(f, g).value();
  for (float v : annihilated.vec()) EXPECT_EQ(v, 0.0f);

  EXPECT_THROW(gfb.forward(f, nn::Var<float>(Tensor<float>(Shape{1, 1, 3, 3}))), std::invalid_argument);
  EXPECT_THROW(gab.forward(f, nn::Var<float>(Tensor<float>(Shape{1, 1, 3, 3}))), std::invalid_argument);
}

TEST(GuidanceBlocks, GfbOutputIsSensitiveToAGuidancePixel) {
  Rng rng(23), data(24);
  GuidanceFusion<double> gfb(4, rng);
  VarD f(random_tensor({1, 4, 6, 6}, data));
  VarD g(random_tensor({1, 1, 6, 6}, data, 0, 1));
  const auto a = gfb.forward(f, g).value();
  g.mutable_value().at(0, 0, 2, 3) += 1e-3;
  const auto b = gfb.forward(f, g).value();
  EXPECT_NE(a.vec(), b.vec());
}

// --- network ----------------------------------------------------------------

TEST(DehazeNet, ShapeContractIncludingPaddedInputs) {
  Rng rng(25), data(26);
  DehazeNet<float> net(NetworkConfig{}, rng);
  net.set_training(false);
  for (auto [h, w] : {std::pair{64, 64}, {96, 160}, {70, 90}, {1, 1}, {3, 5}}) {
    nn::Var<float> x(random_tensor({1, 3, h, w}, data, 0, 1).cast<float>());
    const auto out = net.forward(x, Tensor<float>(Shape{1, 1, h, w}));
    EXPECT_EQ(out.shape(), (Shape{1, 3, h, w}));
    for (float v : out.value().vec()) ASSERT_TRUE(v >= 0.0f && v <= 1.0f);
  }
}

TEST(DehazeNet, DeterministicForwardAndRejectsBadConfigs) {
  Rng rng(27), data(28);
  DehazeNet<float> net(small_config(), rng);
  net.output_projection().fill(0.05f, 0.0f);
  net.set_training(false);
  nn::Var<float> x(random_tensor({2, 3, 16, 16}, data, 0, 1).cast<float>());
  const auto g = random_tensor({2, 1, 16, 16}, data, 0, 1).cast<float>();
  EXPECT_EQ(net.forward(x, g).value().vec(), net.forward(x, g).value().vec());

  NetworkConfig bad;
  bad.num_levels = 0;
  EXPECT_THROW(DehazeNet<float>(bad, rng), std::invalid_argument);
  bad = NetworkConfig{};
  bad.gab_levels = {5};
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad = NetworkConfig{};
  bad.base_channels = 6;  // 6 not divisible by ratio 4
  EXPECT_THROW(bad.validate(), std::invalid_argument);
}

TEST(DehazeNet, UntrainedNetworkStaysNearIdentity) {
  Rng rng(29);
  DehazeNet<float> net(NetworkConfig{}, rng);
  net.set_training(false);
  shapes::SceneSpec spec;
  spec.seed = 3;
  const auto scene = shapes::render_scene(spec, 0);
  const auto hazy = hazegen::synthesize(scene.image, {0.5f, 0.1f}).hazy;
  guidance::GuidanceMask mask{Plane(64, 64), 3, true};
  const Image out = dehaze(net, hazy, mask);
  const double in_psnr = evalkit::psnr(hazy, scene.image);
  EXPECT_NEAR(evalkit::psnr(out, scene.image), in_psnr, 3.0);
}

TEST(DehazeNet, DisabledInjectionsIgnoreGuidanceBitForBit) {
  NetworkConfig c = small_config();
  c.enable_gfb = false;
  c.enable_gab = false;
  Rng rng(31), data(32);
  DehazeNet<float> net(c, rng);
  net.output_projection().fill(0.05f, 0.01f);
  net.set_training(false);
  nn::Var<float> x(random_tensor({1, 3, 16, 16}, data, 0, 1).cast<float>());
  const auto g1 = random_tensor({1, 1, 16, 16}, data, 0, 1).cast<float>();
  const auto g2 = random_tensor({1, 1, 16, 16}, data, 0, 1).cast<float>();
  EXPECT_EQ(net.forward(x, g1).value().vec(), net.forward(x, g2).value().vec());

  DehazeNet<float> guided(small_config(), rng);
  guided.output_projection().fill(0.05f, 0.01f);
  guided.set_training(false);
  EXPECT_NE(guided.forward(x, g1).value().vec(), guided.forward(x, g2).value().vec());
}

// --- parameter counts -------------------------------------------------------

TEST(CountParams, ProjectionsOnlyByHand) {
  NetworkConfig c;
  c.num_levels = 1;
  c.blocks_per_level = 0;
  c.base_channels = 16;
  c.enable_gfb = false;
  c.enable_gab = false;
  // in_proj 3->16 3x3 with bias, out_proj 16->3 3x3 with bias
  EXPECT_EQ(count_params(c), std::size_t(3 * 16 * 9 + 16 + 16 * 3 * 9 + 3));
}

TEST(CountParams, SingleBlockByHand) {
  NetworkConfig c;
  c.num_levels = 1;
  c.blocks_per_level = 1;
  c.base_channels = 8;
  c.channel_attention_ratio = 4;
  c.pdb_expansion = 2;
  c.enable_gfb = false;
  c.enable_gab = false;
  const std::size_t C = 8, E = 16;
  const std::size_t pw = C * C + C;
  const std::size_t stage1 = 2 * C /*bn*/ + pw + (C * 9 + C) /*dw*/ + pw /*gate*/ + pw /*proj*/;
  const std::size_t ca = (C * (C / 4) + C / 4) + ((C / 4) * C + C);
  const std::size_t pdb = pw /*A*/ + (C * E + E) + 2 * (E * E * 9 + E) + (E * C + C);
  const std::size_t stage2 = 2 * C + pw + ca + pdb + pw;
  const std::size_t io = 3 * C * 9 + C + C * 3 * 9 + 3;
  EXPECT_EQ(count_params(c), io + stage1 + stage2);
}

TEST(CountParams, MonotoneAndAblationsAreStructural) {
  NetworkConfig c;
  std::size_t prev = 0;
  for (int b : {4, 8, 16, 32}) {
    c.base_channels = b;
    const auto n = count_params(c);
    EXPECT_GT(n, prev);
    prev = n;
  }
  const NetworkConfig full{};
  NetworkConfig no_gfb = full, no_gab = full, no_s2 = full;
  no_gfb.enable_gfb = false;
  no_gab.enable_gab = false;
  no_s2.enable_pfeb_stage2 = false;
  EXPECT_LT(count_params(no_gfb), count_params(full));
  EXPECT_LT(count_params(no_gab), count_params(full));
  EXPECT_LT(count_params(no_s2), count_params(full));
}

TEST(NetworkConfigJson, RoundTripsAndRejectsUnknownKeys) {
  NetworkConfig c;
  c.base_channels = 8;
  c.gab_levels = {-1, 1};
  const auto back = network_config_from_json(to_json(c));
  EXPECT_EQ(to_json(back), to_json(c));
  auto j = to_json(c);
  j["mystery"] = 1;
  EXPECT_THROW(network_config_from_json(j), std::invalid_argument);
}
