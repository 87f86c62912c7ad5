#include <gtest/gtest.h>

#include <cmath>

#include "friendnet/nn/module.hpp"
#include "friendnet/nn/ops.hpp"
#include "friendnet/nn/optim.hpp"
#include "grad_check.hpp"

using namespace friendnet;
using friendnet::testing::grad_check;
using friendnet::testing::random_tensor;
using friendnet::testing::VarD;

namespace {

// Direct seven-loop convolution used as the forward oracle.
Tensor<double> naive_conv(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>* b, nn::ConvSpec s) {
  const int cout = w.n(), k = w.h(), cin_g = w.c();
  const int ho = (x.h() + 2 * s.padding - k) / s.stride + 1;
  const int wo = (x.w() + 2 * s.padding - k) / s.stride + 1;
  const int cout_g = cout / s.groups;
  Tensor<double> out(x.n(), cout, ho, wo);
  for (int n = 0; n < x.n(); ++n)
    for (int co = 0; co < cout; ++co)
      for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox) {
          double acc = b ? (*b)[static_cast<std::size_t>(co)] : 0.0;
          const int g = co / cout_g;
          for (int ci = 0; ci < cin_g; ++ci)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const int iy = oy * s.stride - s.padding + ky, ix = ox * s.stride - s.padding + kx;
                if (iy < 0 || ix < 0 || iy >= x.h() || ix >= x.w()) continue;
                acc += w.at(co, ci, ky, kx) * x.at(n, g * cin_g + ci, iy, ix);
              }
          out.at(n, co, oy, ox) = acc;
        }
  return out;
}

struct ConvCase {
  int cin, cout, k, stride, pad, groups;
};

}  // namespace

class ConvOracle : public ::testing::TestWithParam<ConvCase> {};

TEST_P(ConvOracle, ForwardMatchesDirectLoopAndGradientsMatchFiniteDifferences) {
  const ConvCase c = GetParam();
  Rng rng(21);
  VarD x(random_tensor({2, c.cin, 7, 9}, rng));
  VarD w(random_tensor({c.cout, c.cin / c.groups, c.k, c.k}, rng));
  VarD b(random_tensor({1, c.cout, 1, 1}, rng));
  const nn::ConvSpec spec{c.stride, c.pad, c.groups};
  const auto got = nn::conv2d(x, w, b, spec).value();
  const auto want = naive_conv(x.value(), w.value(), &b.value(), spec);
  ASSERT_EQ(got.shape(), want.shape());
  for (std::size_t i = 0; i < got.size(); ++i) ASSERT_NEAR(got[i], want[i], 1e-12);

  const auto r = grad_check([&] { return nn::conv2d(x, w, b, spec); }, {&x, &w, &b});
  EXPECT_LT(r.max_rel_error, 1e-6);
}

INSTANTIATE_TEST_SUITE_P(Shapes, ConvOracle,
                         ::testing::Values(ConvCase{3, 4, 1, 1, 0, 1}, ConvCase{3, 5, 3, 1, 1, 1},
                                           ConvCase{4, 6, 3, 2, 1, 1}, ConvCase{4, 4, 3, 1, 1, 4},
                                           ConvCase{5, 5, 3, 2, 1, 5}, ConvCase{3, 2, 1, 2, 0, 1}));

TEST(Ops, ElementwiseGradients) {
  Rng rng(2);
  VarD a(random_tensor({2, 3, 4, 5}, rng));
  VarD b(random_tensor({2, 3, 4, 5}, rng));
  VarD per_channel(random_tensor({2, 3, 1, 1}, rng));
  EXPECT_LT(grad_check([&] { return nn::mul(nn::add(a, per_channel), nn::sub(b, a)); }, {&a, &b, &per_channel})
                .max_rel_error,
            1e-7);
  EXPECT_LT(grad_check([&] { return nn::sigmoid(a); }, {&a}).max_rel_error, 1e-6);
  EXPECT_LT(grad_check([&] { return nn::gelu(a); }, {&a}).max_rel_error, 1e-6);
  EXPECT_LT(grad_check([&] { return nn::silu(a); }, {&a}).max_rel_error, 1e-6);
  EXPECT_LT(grad_check([&] { return nn::scale(a, 2.5); }, {&a}).max_rel_error, 1e-9);
  EXPECT_LT(grad_check([&] { return nn::global_avg_pool(a); }, {&a}).max_rel_error, 1e-9);
  EXPECT_LT(grad_check([&] { return nn::upsample_nearest2x(a); }, {&a}).max_rel_error, 1e-9);
  EXPECT_LT(grad_check([&] { return nn::reflect_pad(a, 3, 2); }, {&a}).max_rel_error, 1e-9);
  EXPECT_LT(grad_check([&] { return nn::crop(a, 3, 2); }, {&a}).max_rel_error, 1e-9);
  VarD inv_t(random_tensor({2, 3, 4, 5}, rng));
  EXPECT_LT(grad_check([&] { return nn::scattering_inverse(a, inv_t, per_channel); }, {&a, &inv_t, &per_channel})
                .max_rel_error,
            1e-7);
}

TEST(Ops, KinkedGradientsAwayFromTheKink) {
  Rng rng(4);
  auto t = random_tensor({1, 2, 3, 4}, rng);
  for (auto& v : t.vec()) v = (v < 0 ? -0.1 : 0.1) + v;  // keep clear of 0
  VarD a(t);
  VarD b(random_tensor({1, 2, 3, 4}, rng, -0.05, 0.05));
  EXPECT_LT(grad_check([&] { return nn::relu(a); }, {&a}).max_rel_error, 1e-9);
  EXPECT_LT(grad_check([&] { return nn::mean_abs_error(a, b); }, {&a, &b}).max_rel_error, 1e-9);
  EXPECT_LT(grad_check([&] { return nn::mean_squared_error(a, b); }, {&a, &b}).max_rel_error, 1e-8);
  EXPECT_LT(grad_check([&] { return nn::clamp(a, -0.55, 0.6); }, {&a}).max_rel_error, 1e-9);
}

TEST(Ops, BatchNormTrainingGradient) {
  Rng rng(6);
  VarD x(random_tensor({3, 4, 5, 5}, rng));
  VarD gamma(random_tensor({1, 4, 1, 1}, rng, 0.5, 1.5));
  VarD beta(random_tensor({1, 4, 1, 1}, rng));
  Tensor<double> rm(Shape{1, 4, 1, 1}), rv(Shape{1, 4, 1, 1}, 1.0);
  const auto r = grad_check([&] { return nn::batch_norm(x, gamma, beta, rm, rv, true, 0.1, 1e-5); },
                            {&x, &gamma, &beta});
  EXPECT_LT(r.max_rel_error, 1e-6);
}

TEST(Ops, BatchNormNormalizesAndTracksRunningStats) {
  Rng rng(8);
  nn::Var<double> x(random_tensor({4, 2, 3, 3}, rng, 0.0, 4.0));
  nn::Var<double> gamma(Tensor<double>(Shape{1, 2, 1, 1}, 1.0)), beta(Tensor<double>(Shape{1, 2, 1, 1}));
  Tensor<double> rm(Shape{1, 2, 1, 1}), rv(Shape{1, 2, 1, 1}, 1.0);
  const auto y = nn::batch_norm(x, gamma, beta, rm, rv, true, 1.0, 0.0).value();
  for (int c = 0; c < 2; ++c) {
    double mean = 0, sq = 0, xm = 0;
    const int count = 4 * 9;
    for (int n = 0; n < 4; ++n)
      for (int i = 0; i < 9; ++i) {
        mean += y.plane(n, c)[i];
        sq += y.plane(n, c)[i] * y.plane(n, c)[i];
        xm += x.value().plane(n, c)[i];
      }
    EXPECT_NEAR(mean / count, 0.0, 1e-12);
    EXPECT_NEAR(sq / count, 1.0, 1e-9);
    EXPECT_NEAR(rm[static_cast<std::size_t>(c)], xm / count, 1e-12);
  }
  // Inference mode uses the running estimates.
  const auto z = nn::batch_norm(x, gamma, beta, rm, rv, false, 0.1, 0.0).value();
  EXPECT_NEAR(z[0], (x.value()[0] - rm[0]) / std::sqrt(rv[0]), 1e-12);
}

TEST(Ops, ScatteringInverseLimitsAreExact) {
  Rng rng(1);
  nn::Var<float> f(random_tensor({1, 3, 4, 4}, rng).cast<float>());
  nn::Var<float> air(random_tensor({1, 3, 1, 1}, rng).cast<float>());
  const auto ident = nn::scattering_inverse(f, nn::Var<float>(Tensor<float>(Shape{1, 3, 4, 4}, 1.0f)), air).value();
  EXPECT_EQ(ident.vec(), f.value().vec());
  const auto flat = nn::scattering_inverse(f, nn::Var<float>(Tensor<float>(Shape{1, 3, 4, 4}, 0.0f)), air).value();
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < 16; ++i) EXPECT_EQ(flat.plane(0, c)[i], air.value()[static_cast<std::size_t>(c)]);
}

TEST(Autograd, NoGradGuardProducesLeaves) {
  VarD a(Tensor<double>::scalar(2.0), true);
  {
    nn::NoGradGuard g;
    auto y = nn::mul(a, a);
    EXPECT_FALSE(y.requires_grad());
  }
  auto y = nn::mul(a, a);
  EXPECT_TRUE(y.requires_grad());
  y.backward();
  EXPECT_DOUBLE_EQ(a.grad().item(), 4.0);
}

TEST(Autograd, DetachStopsGradient) {
  VarD a(Tensor<double>::scalar(3.0), true);
  auto y = nn::add(nn::mul(a, a), nn::mul(a, a).detach());
  y.backward();
  EXPECT_DOUBLE_EQ(a.grad().item(), 6.0);
}

TEST(Optim, CosineScheduleEndpoints) {
  EXPECT_DOUBLE_EQ(nn::cosine_lr(0, 200, 4e-4, 1e-6), 4e-4);
  EXPECT_NEAR(nn::cosine_lr(199, 200, 4e-4, 1e-6), 1e-6, 1e-18);
  EXPECT_LE(nn::cosine_lr(199, 200, 4e-4, 1e-6), 0.01 * 4e-4);
  EXPECT_LT(nn::cosine_lr(100, 200, 4e-4, 1e-6), nn::cosine_lr(50, 200, 4e-4, 1e-6));
}

TEST(Optim, AdamWMinimizesAQuadratic) {
  VarD x(Tensor<double>(Shape{1, 1, 1, 3}, 5.0), true);
  nn::AdamW<double> opt({&x}, {0.9, 0.999, 1e-8, 0.0});
  VarD target(Tensor<double>(Shape{1, 1, 1, 3}, -1.0));
  for (int i = 0; i < 2000; ++i) {
    x.zero_grad();
    nn::mean_squared_error(x, target).backward();
    opt.step(0.05);
  }
  for (double v : x.value().vec()) EXPECT_NEAR(v, -1.0, 1e-3);
}

TEST(Optim, ParametersWithoutGradientAreUntouched) {
  VarD used(Tensor<double>::scalar(1.0), true), unused(Tensor<double>::scalar(1.0), true);
  nn::AdamW<double> opt({&used, &unused});
  nn::mul(used, used).backward();
  opt.step(0.1);
  EXPECT_NE(used.value().item(), 1.0);
  EXPECT_EQ(unused.value().item(), 1.0);
}
