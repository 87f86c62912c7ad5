#pragma once

// Synthetic detection corpus: flat-coloured circles, squares and triangles on
// a textured background, with pixel-tight boxes.

#include <cstdint>
#include <filesystem>
#include <vector>

#include "friendnet/boxes.hpp"
#include "friendnet/image.hpp"
#include "friendnet/manifest.hpp"

namespace friendnet::shapes {

enum class ShapeClass { kCircle = 0, kSquare = 1, kTriangle = 2 };
inline constexpr int kNumClasses = 3;

struct SceneSpec {
  int canvas = 64;
  int min_objects = 1;
  int max_objects = 4;
  /// Object extents in pixels (circle diameter, square side, triangle base).
  int min_size = 12;
  int max_size = 28;
  std::uint64_t seed = 0;
  void validate() const;
};

struct Scene {
  Image image;
  std::vector<DetectionTarget> objects;
};

/// Scene `index` of the corpus defined by `spec`; independent of other indices.
Scene render_scene(const SceneSpec& spec, std::size_t index);

/// Pixels whose centre lies inside a disc, and their tight box.
BBox rasterize_circle(Image& image, float cx, float cy, float radius, const float rgb[3]);

/// Writes images/scene_%06d.png and manifest.jsonl under out_dir.
std::vector<ManifestRecord> make_shapes_dataset(const SceneSpec& spec, std::size_t count,
                                                const std::filesystem::path& out_dir);

}  // namespace friendnet::shapes
