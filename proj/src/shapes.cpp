#include "friendnet/shapes.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "friendnet/image_io.hpp"
#include "friendnet/rng.hpp"

namespace friendnet::shapes {
namespace {

// Paints every pixel whose centre satisfies `inside` and returns the tight box
// of the painted pixels (empty box when nothing was painted).
template <typename Pred>
BBox paint(Image& image, int x0, int y0, int x1, int y1, const float rgb[3], Pred inside) {
  x0 = std::max(x0, 0);
  y0 = std::max(y0, 0);
  x1 = std::min(x1, image.width());
  y1 = std::min(y1, image.height());
  int bx0 = image.width(), by0 = image.height(), bx1 = -1, by1 = -1;
  for (int y = y0; y < y1; ++y) {
    for (int x = x0; x < x1; ++x) {
      if (!inside(x + 0.5f, y + 0.5f)) continue;
      for (int c = 0; c < 3; ++c) image.at(y, x, c) = rgb[c];
      bx0 = std::min(bx0, x);
      by0 = std::min(by0, y);
      bx1 = std::max(bx1, x);
      by1 = std::max(by1, y);
    }
  }
  if (bx1 < 0) return {};
  return BBox{static_cast<float>(bx0), static_cast<float>(by0), static_cast<float>(bx1 + 1), static_cast<float>(by1 + 1)};
}

float edge(float ax, float ay, float bx, float by, float px, float py) {
  return (bx - ax) * (py - ay) - (by - ay) * (px - ax);
}

bool overlaps(const BBox& a, const BBox& b, float margin) {
  return a.xmin < b.xmax + margin && b.xmin < a.xmax + margin && a.ymin < b.ymax + margin && b.ymin < a.ymax + margin;
}

}  // namespace

void SceneSpec::validate() const {
  if (canvas < 8) throw std::invalid_argument("shapes: canvas must be at least 8 pixels");
  if (min_objects < 1 || max_objects < min_objects) throw std::invalid_argument("shapes: need 1 <= min_objects <= max_objects");
  if (min_size < 3 || max_size < min_size || max_size > canvas) {
    throw std::invalid_argument("shapes: need 3 <= min_size <= max_size <= canvas");
  }
}

BBox rasterize_circle(Image& image, float cx, float cy, float radius, const float rgb[3]) {
  const float r2 = radius * radius;
  return paint(image, static_cast<int>(std::floor(cx - radius)), static_cast<int>(std::floor(cy - radius)),
               static_cast<int>(std::ceil(cx + radius)) + 1, static_cast<int>(std::ceil(cy + radius)) + 1, rgb,
               [&](float px, float py) { return (px - cx) * (px - cx) + (py - cy) * (py - cy) <= r2; });
}

Scene render_scene(const SceneSpec& spec, std::size_t index) {
  spec.validate();
  Rng rng = Rng::stream(spec.seed, index);
  const int n = spec.canvas;
  Scene scene{Image(n, n), {}};

  // Background: a soft linear gradient with faint per-pixel grain.
  float base[3], slope_x[3], slope_y[3];
  for (int c = 0; c < 3; ++c) {
    base[c] = static_cast<float>(rng.uniform(0.3, 0.6));
    slope_x[c] = static_cast<float>(rng.uniform(-0.15, 0.15)) / n;
    slope_y[c] = static_cast<float>(rng.uniform(-0.15, 0.15)) / n;
  }
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      for (int c = 0; c < 3; ++c) {
        const float grain = static_cast<float>(rng.uniform(-0.02, 0.02));
        scene.image.at(y, x, c) = std::clamp(base[c] + slope_x[c] * x + slope_y[c] * y + grain, 0.0f, 1.0f);
      }
    }
  }

  const int wanted = rng.uniform_int(spec.min_objects, spec.max_objects);
  for (int attempt = 0; attempt < 200 && static_cast<int>(scene.objects.size()) < wanted; ++attempt) {
    const auto kind = static_cast<ShapeClass>(rng.uniform_int(0, kNumClasses - 1));
    const int size = rng.uniform_int(spec.min_size, spec.max_size);
    const int x0 = rng.uniform_int(1, n - size - 1);
    const int y0 = rng.uniform_int(1, n - size - 1);
    float rgb[3];
    float contrast = 0.0f;
    for (int c = 0; c < 3; ++c) {
      rgb[c] = static_cast<float>(rng.uniform(0.05, 0.95));
      contrast += std::abs(rgb[c] - base[c]);
    }
    const BBox footprint{static_cast<float>(x0), static_cast<float>(y0), static_cast<float>(x0 + size),
                         static_cast<float>(y0 + size)};
    if (contrast < 0.6f) continue;
    bool clash = false;
    for (const auto& o : scene.objects) clash = clash || overlaps(o.box, footprint, 2.0f);
    if (clash) continue;

    BBox box;
    const float s = static_cast<float>(size);
    switch (kind) {
      case ShapeClass::kCircle:
        box = rasterize_circle(scene.image, x0 + 0.5f * s, y0 + 0.5f * s, 0.5f * s, rgb);
        break;
      case ShapeClass::kSquare:
        box = paint(scene.image, x0, y0, x0 + size, y0 + size, rgb, [](float, float) { return true; });
        break;
      case ShapeClass::kTriangle: {
        const float ax = x0, ay = y0 + s, bx = x0 + s, by = y0 + s, tx = x0 + 0.5f * s, ty = y0;
        box = paint(scene.image, x0, y0, x0 + size, y0 + size, rgb, [&](float px, float py) {
          const float e0 = edge(ax, ay, bx, by, px, py);
          const float e1 = edge(bx, by, tx, ty, px, py);
          const float e2 = edge(tx, ty, ax, ay, px, py);
          return (e0 <= 0 && e1 <= 0 && e2 <= 0) || (e0 >= 0 && e1 >= 0 && e2 >= 0);
        });
        break;
      }
    }
    if (box.valid()) scene.objects.push_back({static_cast<int>(kind), box});
  }
  return scene;
}

std::vector<ManifestRecord> make_shapes_dataset(const SceneSpec& spec, std::size_t count,
                                                const std::filesystem::path& out_dir) {
  spec.validate();
  std::filesystem::create_directories(out_dir / "images");
  std::vector<ManifestRecord> records;
  records.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const Scene scene = render_scene(spec, i);
    char name[40];
    std::snprintf(name, sizeof(name), "images/scene_%06zu.png", i);
    write_png(out_dir / name, scene.image);
    ManifestRecord r;
    r.image_path = name;
    r.annotations = scene.objects;
    records.push_back(std::move(r));
  }
  write_manifest(out_dir / "manifest.jsonl", records);
  return records;
}

}  // namespace friendnet::shapes
