#include <gtest/gtest.h>

#include <filesystem>

#include "friendnet/guidance.hpp"
#include "friendnet/rng.hpp"

using namespace friendnet;
using namespace friendnet::guidance;

namespace {

// Straight per-pixel evaluation: for every pixel, scan all detections whose
// box contains the pixel centre and keep the one with the highest score
// (larger class_id on ties).
Plane brute_force(const std::vector<Detection>& dets, int h, int w) {
  Plane p(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double cx = x + 0.5, cy = y + 0.5;
      const Detection* best = nullptr;
      for (const auto& d : dets) {
        const bool inside = cx >= d.box.xmin && cx < d.box.xmax && cy >= d.box.ymin && cy < d.box.ymax;
        if (!inside) continue;
        if (!best || d.score > best->score || (d.score == best->score && d.class_id > best->class_id)) best = &d;
      }
      if (best) p.at(y, x) = static_cast<float>(best->class_id + 1) * best->score;
    }
  }
  return p;
}

std::vector<Detection> random_dets(Rng& rng, int k, int grid) {
  std::vector<Detection> dets;
  const int n = rng.uniform_int(0, 5);
  for (int i = 0; i < n; ++i) {
    Detection d;
    d.class_id = rng.uniform_int(0, k - 1);
    // Coarse score grid so exact ties occur.
    d.score = static_cast<float>(rng.uniform_int(1, 8)) / 8.0f;
    float x0 = static_cast<float>(rng.uniform(-4.0, grid));
    float y0 = static_cast<float>(rng.uniform(-4.0, grid));
    d.box = {x0, y0, x0 + static_cast<float>(rng.uniform(0.5, 16.0)), y0 + static_cast<float>(rng.uniform(0.5, 16.0))};
    dets.push_back(d);
  }
  return dets;
}

}  // namespace

TEST(Guidance, MatchesBruteForceOnRandomBoxSets) {
  Rng rng(99);
  for (int trial = 0; trial < 50; ++trial) {
    const auto dets = random_dets(rng, 5, 32);
    const GuidanceMask m = render_guidance(dets, 32, 32, 5);
    EXPECT_EQ(m.plane.values, brute_force(dets, 32, 32).values) << "trial " << trial;
  }
}

TEST(Guidance, HandExamples) {
  for (float v : render_guidance({}, 4, 4, 3).plane.values) EXPECT_EQ(v, 0.0f);

  const Detection one{2, 0.8f, {1, 1, 3, 3}};
  const auto m = render_guidance({one}, 4, 4, 3);
  EXPECT_FLOAT_EQ(m.plane.at(1, 1), 2.4f);
  EXPECT_FLOAT_EQ(m.plane.at(2, 2), 2.4f);
  EXPECT_EQ(m.plane.at(0, 0), 0.0f);
  EXPECT_EQ(m.plane.at(3, 3), 0.0f);
  EXPECT_FLOAT_EQ(normalize_guidance(m).plane.at(1, 1), 0.8f);

  const Detection a{0, 0.9f, {0, 0, 3, 3}};
  const Detection b{4, 0.3f, {1, 1, 4, 4}};
  const auto o = render_guidance({b, a}, 4, 4, 5);
  EXPECT_FLOAT_EQ(o.plane.at(1, 1), 0.9f);
  EXPECT_FLOAT_EQ(o.plane.at(3, 3), 1.5f);

  const Detection lo{1, 0.5f, {0, 0, 2, 2}};
  const Detection hi{2, 0.5f, {0, 0, 2, 2}};
  EXPECT_FLOAT_EQ(render_guidance({hi, lo}, 2, 2, 3).plane.at(0, 0), 1.5f);
  EXPECT_FLOAT_EQ(render_guidance({lo, hi}, 2, 2, 3).plane.at(0, 0), 1.5f);
}

TEST(Guidance, SupportIsUnionOfBoxes) {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const auto dets = random_dets(rng, 3, 16);
    const auto m = render_guidance(dets, 16, 16, 3);
    for (int y = 0; y < 16; ++y) {
      for (int x = 0; x < 16; ++x) {
        bool covered = false;
        for (const auto& d : dets) {
          covered |= x + 0.5 >= d.box.xmin && x + 0.5 < d.box.xmax && y + 0.5 >= d.box.ymin && y + 0.5 < d.box.ymax;
        }
        EXPECT_EQ(m.plane.at(y, x) != 0.0f, covered);
      }
    }
  }
}

TEST(Guidance, RejectsOutOfRangeClass) {
  EXPECT_THROW(render_guidance({{3, 0.5f, {0, 0, 1, 1}}}, 4, 4, 3), std::invalid_argument);
  EXPECT_THROW(render_guidance({{-1, 0.5f, {0, 0, 1, 1}}}, 4, 4, 3), std::invalid_argument);
}

TEST(Guidance, NormalizationCeilingAndIdempotenceForOneClass) {
  const auto m = render_guidance({{2, 1.0f, {0, 0, 4, 4}}}, 4, 4, 3);
  for (float v : normalize_guidance(m).plane.values) EXPECT_EQ(v, 1.0f);
  const auto k1 = render_guidance({{0, 0.7f, {0, 0, 2, 2}}}, 4, 4, 1);
  EXPECT_EQ(normalize_guidance(normalize_guidance(k1)).plane.values, normalize_guidance(k1).plane.values);
}

TEST(Guidance, ResampleHandCases) {
  GuidanceMask q{Plane(4, 4), 1, true};
  for (int y = 0; y < 2; ++y) {
    for (int x = 2; x < 4; ++x) q.plane.at(y, x) = 1.0f;
  }
  const auto d = resample_guidance(q, 2, 2);
  EXPECT_EQ(d.plane.values, (std::vector<float>{0, 1, 0, 0}));
  EXPECT_EQ(resample_guidance(q, 4, 4).plane.values, q.plane.values);

  GuidanceMask c{Plane(5, 7, 0.375f), 2, true};
  for (auto [h, w] : {std::pair{1, 1}, {3, 2}, {10, 14}, {13, 4}}) {
    for (float v : resample_guidance(c, h, w).plane.values) EXPECT_FLOAT_EQ(v, 0.375f);
  }
}

TEST(Guidance, ResamplePreservesMeanAndRange) {
  Rng rng(12);
  GuidanceMask m{Plane(12, 20), 1, true};
  for (auto& v : m.plane.values) v = static_cast<float>(rng.uniform());
  double mean_in = 0;
  for (float v : m.plane.values) mean_in += v;
  mean_in /= static_cast<double>(m.plane.values.size());
  for (auto [h, w] : {std::pair{3, 5}, {6, 10}, {24, 40}, {7, 9}}) {
    const auto r = resample_guidance(m, h, w);
    double mean_out = 0;
    for (float v : r.plane.values) {
      EXPECT_GE(v, 0.0f);
      EXPECT_LE(v, 1.0f);
      mean_out += v;
    }
    EXPECT_NEAR(mean_out / (h * w), mean_in, 1e-5);
  }
}

TEST(Guidance, ExportRoundTripWithin16BitStep) {
  Rng rng(4);
  const auto raw = render_guidance(random_dets(rng, 4, 24), 24, 24, 4);
  auto m = normalize_guidance(raw);
  m.plane.at(0, 0) = 0.123456f;
  const auto path = std::filesystem::temp_directory_path() / "friendnet_mask_roundtrip.png";
  export_mask(path, m);
  const auto back = import_mask(path);
  EXPECT_EQ(back.num_classes, 4);
  EXPECT_TRUE(back.normalized);
  ASSERT_EQ(back.plane.values.size(), m.plane.values.size());
  for (std::size_t i = 0; i < m.plane.values.size(); ++i) {
    EXPECT_NEAR(back.plane.values[i], m.plane.values[i], 0.5 / 65535.0 + 1e-7);
  }
  EXPECT_THROW(export_mask(path, raw), std::invalid_argument);
}
