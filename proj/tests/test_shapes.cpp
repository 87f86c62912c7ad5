#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "friendnet/image_io.hpp"
#include "friendnet/shapes.hpp"

using namespace friendnet;
using namespace friendnet::shapes;

namespace {

std::filesystem::path scratch(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("friendnet_shapes_" + name);
  std::filesystem::remove_all(p);
  return p;
}

}  // namespace

TEST(Shapes, CircleBoxMatchesAnalyticBounds) {
  const float rgb[3] = {1.0f, 0.0f, 0.0f};
  for (auto [cx, cy, r] : {std::tuple{20.3f, 17.8f, 7.2f}, {16.0f, 16.0f, 5.0f}, {9.5f, 30.1f, 8.9f}}) {
    Image im(48, 48);
    const BBox box = rasterize_circle(im, cx, cy, r, rgb);
    EXPECT_NEAR(box.xmin, cx - r, 1.0);
    EXPECT_NEAR(box.ymin, cy - r, 1.0);
    EXPECT_NEAR(box.xmax, cx + r, 1.0);
    EXPECT_NEAR(box.ymax, cy + r, 1.0);
    // Tight: painted pixels reach every edge of the box and never leave it.
    int min_x = 1000, min_y = 1000, max_x = -1, max_y = -1;
    for (int y = 0; y < 48; ++y) {
      for (int x = 0; x < 48; ++x) {
        if (im.at(y, x, 0) != 1.0f) continue;
        min_x = std::min(min_x, x);
        min_y = std::min(min_y, y);
        max_x = std::max(max_x, x);
        max_y = std::max(max_y, y);
      }
    }
    EXPECT_EQ(box, (BBox{float(min_x), float(min_y), float(max_x + 1), float(max_y + 1)}));
  }
}

TEST(Shapes, ScenesRespectSpec) {
  SceneSpec spec;
  spec.seed = 21;
  for (std::size_t i = 0; i < 30; ++i) {
    const Scene s = render_scene(spec, i);
    EXPECT_EQ(s.image.height(), spec.canvas);
    EXPECT_TRUE(s.image.in_unit_range());
    EXPECT_GE(static_cast<int>(s.objects.size()), spec.min_objects);
    EXPECT_LE(static_cast<int>(s.objects.size()), spec.max_objects);
    for (const auto& o : s.objects) {
      EXPECT_GE(o.class_id, 0);
      EXPECT_LT(o.class_id, kNumClasses);
      EXPECT_TRUE(o.box.valid());
      EXPECT_GE(o.box.xmin, 0.0f);
      EXPECT_LE(o.box.xmax, static_cast<float>(spec.canvas));
    }
  }
  spec.min_objects = 5;
  spec.max_objects = 2;
  EXPECT_THROW(render_scene(spec, 0), std::invalid_argument);
}

TEST(Shapes, DeterministicPerSeed) {
  SceneSpec spec;
  spec.seed = 4;
  const Scene a = render_scene(spec, 3), b = render_scene(spec, 3);
  EXPECT_EQ(a.image.values(), b.image.values());
  EXPECT_EQ(a.objects, b.objects);
  spec.seed = 5;
  EXPECT_NE(render_scene(spec, 3).image.values(), a.image.values());

  const auto d1 = scratch("d1"), d2 = scratch("d2");
  spec.seed = 4;
  const auto m1 = make_shapes_dataset(spec, 5, d1);
  const auto m2 = make_shapes_dataset(spec, 5, d2);
  ASSERT_EQ(m1.size(), 5u);
  EXPECT_EQ(m1, m2);
  EXPECT_EQ(read_manifest(d1 / "manifest.jsonl"), m1);
  for (const auto& r : m1) {
    EXPECT_EQ(read_png(resolve_path(d1 / "manifest.jsonl", r.image_path)).values(),
              read_png(resolve_path(d2 / "manifest.jsonl", r.image_path)).values());
  }
  EXPECT_EQ(m1[3].annotations, a.objects);
}

TEST(Shapes, EmptyDataset) {
  const auto d = scratch("empty");
  EXPECT_TRUE(make_shapes_dataset({}, 0, d).empty());
  EXPECT_TRUE(read_manifest(d / "manifest.jsonl").empty());
}
