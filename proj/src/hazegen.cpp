#include "friendnet/hazegen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <string>

#include "friendnet/image_io.hpp"
#include "friendnet/rng.hpp"

namespace friendnet::hazegen {

void HazeParams::validate() const {
  if (!(airlight >= 0.0f && airlight <= 1.0f)) throw std::invalid_argument("airlight must lie in [0, 1]");
  if (!(beta >= 0.0f) || !std::isfinite(beta)) throw std::invalid_argument("beta must be finite and >= 0");
}

DepthMap depth_map(int height, int width) {
  if (height < 1 || width < 1) {
    throw std::invalid_argument("depth_map: dimensions must be positive, got " + std::to_string(height) + "x" +
                                std::to_string(width));
  }
  const int ch = height / 2;
  const int cw = width / 2;
  const float peak = std::sqrt(static_cast<float>(std::max(height, width)));
  DepthMap d{Plane(height, width)};
  for (int i = 0; i < height; ++i) {
    const int di = i - ch;
    for (int j = 0; j < width; ++j) {
      const int dj = j - cw;
      const float rho = std::sqrt(static_cast<float>(di * di + dj * dj));
      d.plane.at(i, j) = std::max(0.0f, -kDepthSlope * rho + peak);
    }
  }
  return d;
}

TransmissionMap transmission_map(const DepthMap& depth, float beta) {
  if (!(beta >= 0.0f) || !std::isfinite(beta)) throw std::invalid_argument("transmission_map: beta must be >= 0");
  TransmissionMap t{Plane(depth.plane.height, depth.plane.width)};
  for (std::size_t i = 0; i < depth.plane.values.size(); ++i) {
    t.plane.values[i] = std::clamp(std::exp(-beta * depth.plane.values[i]), kMinTransmission, 1.0f);
  }
  return t;
}

Image apply_haze(const Image& clean, const TransmissionMap& t, float airlight) {
  if (t.plane.height != clean.height() || t.plane.width != clean.width()) {
    throw std::invalid_argument("apply_haze: transmission map does not match image size");
  }
  Image hazy(clean.height(), clean.width(), clean.channels());
  const int c = clean.channels();
  const std::size_t pixels = t.plane.values.size();
  const float* src = clean.data();
  float* dst = hazy.data();
  for (std::size_t p = 0; p < pixels; ++p) {
    const float tv = t.plane.values[p];
    const float air = airlight * (1.0f - tv);
    for (int k = 0; k < c; ++k) {
      const std::size_t i = p * c + k;
      dst[i] = std::clamp(src[i] * tv + air, 0.0f, 1.0f);
    }
  }
  return hazy;
}

HazyPair synthesize(const Image& clean, const HazeParams& params) {
  params.validate();
  if (clean.empty()) throw std::invalid_argument("synthesize: empty image");
  TransmissionMap t = transmission_map(depth_map(clean.height(), clean.width()), params.beta);
  Image hazy = apply_haze(clean, t, params.airlight);
  return HazyPair{std::move(hazy), std::move(t)};
}

Image dehaze_oracle(const Image& hazy, const HazeParams& params, const TransmissionMap& t) {
  params.validate();
  if (t.plane.height != hazy.height() || t.plane.width != hazy.width()) {
    throw std::invalid_argument("dehaze_oracle: transmission map does not match image size");
  }
  for (float v : t.plane.values) {
    if (!(v >= kMinTransmission)) throw std::invalid_argument("dehaze_oracle: transmission below the clamp floor");
  }
  Image clean(hazy.height(), hazy.width(), hazy.channels());
  const int c = hazy.channels();
  const std::size_t pixels = t.plane.values.size();
  for (std::size_t p = 0; p < pixels; ++p) {
    const float inv_t = 1.0f / t.plane.values[p];
    const float air = params.airlight * (1.0f - inv_t);
    for (int k = 0; k < c; ++k) {
      const std::size_t i = p * c + k;
      clean.data()[i] = std::clamp(hazy.data()[i] * inv_t + air, 0.0f, 1.0f);
    }
  }
  return clean;
}

HazeParams sample_params(std::uint64_t seed, float beta_low, float beta_high, float airlight) {
  if (!(beta_low >= 0.0f) || !(beta_high >= beta_low)) {
    throw std::invalid_argument("sample_params: need 0 <= beta_low <= beta_high");
  }
  HazeParams p;
  p.airlight = airlight;
  if (beta_low == beta_high) {
    p.beta = beta_low;
  } else {
    Rng rng(seed);
    p.beta = static_cast<float>(rng.uniform(beta_low, beta_high));
    p.beta = std::clamp(p.beta, beta_low, beta_high);
  }
  p.validate();
  return p;
}

std::uint64_t item_seed(const ParamsPolicy& policy, std::size_t index) {
  return Rng::stream(policy.seed, static_cast<std::uint64_t>(index)).next();
}

std::vector<ManifestRecord> build_dataset(const std::filesystem::path& clean_manifest, const ParamsPolicy& policy,
                                          const std::filesystem::path& output_dir) {
  namespace fs = std::filesystem;
  const std::vector<ManifestRecord> inputs = read_manifest(clean_manifest);
  fs::create_directories(output_dir / "hazy");
  const fs::path out_abs = fs::absolute(output_dir);
  std::vector<ManifestRecord> out;
  out.reserve(inputs.size());
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const ManifestRecord& in = inputs[i];
    ManifestRecord rec;
    rec.annotations = in.annotations;
    const fs::path clean_path = fs::absolute(resolve_path(clean_manifest, in.image_path));
    rec.image_path = fs::relative(clean_path, out_abs).generic_string();
    const HazeParams params = sample_params(item_seed(policy, i), policy.beta_low, policy.beta_high, policy.airlight);
    rec.beta = params.beta;
    try {
      const Image clean = read_png(clean_path);
      const HazyPair pair = synthesize(clean, params);
      char name[32];
      std::snprintf(name, sizeof(name), "hazy_%06zu.png", i);
      const std::string rel = std::string("hazy/") + name;
      write_png(out_abs / rel, pair.hazy);
      rec.hazy_path = rel;
    } catch (const std::exception& e) {
      rec.error = e.what();
    }
    out.push_back(std::move(rec));
  }
  write_manifest(output_dir / "manifest.jsonl", out);
  return out;
}

}  // namespace friendnet::hazegen
