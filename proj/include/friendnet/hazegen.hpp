#pragma once

// Paired clean/hazy image synthesis through the atmospheric scattering model
//   I(x) = J(x) t(x) + A (1 - t(x)),   t(x) = exp(-beta d(x)),
// with a radial depth surrogate centred on the image, plus the closed-form
// inversion used as a test oracle.

#include <cstdint>
#include <filesystem>
#include <vector>

#include "friendnet/image.hpp"
#include "friendnet/manifest.hpp"

namespace friendnet::hazegen {

inline constexpr float kMinTransmission = 1e-3f;
inline constexpr float kDefaultAirlight = 0.5f;
inline constexpr float kTrainBetaLow = 0.07f;
inline constexpr float kTrainBetaHigh = 0.12f;
inline constexpr float kTestBetaLow = 0.05f;
inline constexpr float kTestBetaHigh = 0.14f;
/// Slope of the depth surrogate per pixel of distance from the centre.
inline constexpr float kDepthSlope = 0.04f;

struct HazeParams {
  float airlight = kDefaultAirlight;
  float beta = 0.1f;

  /// Throws std::invalid_argument unless airlight is in [0, 1] and beta >= 0.
  void validate() const;
};

struct DepthMap {
  Plane plane;
};

struct TransmissionMap {
  Plane plane;
};

/// d(i, j) = -0.04 * dist((i, j), (h/2, w/2)) + sqrt(max(h, w)), clamped at 0.
/// The centre uses integer division.
DepthMap depth_map(int height, int width);

/// t = exp(-beta * d), clamped into [kMinTransmission, 1].
TransmissionMap transmission_map(const DepthMap& depth, float beta);

struct HazyPair {
  Image hazy;
  TransmissionMap transmission;
};

/// Applies the scattering model per channel with a shared t; output clamped to [0, 1].
HazyPair synthesize(const Image& clean, const HazeParams& params);

/// Applies a given transmission map (same dims as the image).
Image apply_haze(const Image& clean, const TransmissionMap& t, float airlight);

/// J = I / t + A (1 - 1/t), clamped to [0, 1]. Rejects t below kMinTransmission.
Image dehaze_oracle(const Image& hazy, const HazeParams& params, const TransmissionMap& t);

/// beta ~ U[beta_low, beta_high], deterministic in the seed.
HazeParams sample_params(std::uint64_t seed, float beta_low, float beta_high, float airlight = kDefaultAirlight);

struct ParamsPolicy {
  std::uint64_t seed = 0;
  float beta_low = kTrainBetaLow;
  float beta_high = kTrainBetaHigh;
  float airlight = kDefaultAirlight;
};

/// Seed used for record `index` under `policy`; independent of processing order.
std::uint64_t item_seed(const ParamsPolicy& policy, std::size_t index);

/// Hazes every clean image listed in `clean_manifest` into `output_dir` and
/// writes `output_dir/manifest.jsonl`. Unreadable items are kept with an
/// error field; the run continues.
std::vector<ManifestRecord> build_dataset(const std::filesystem::path& clean_manifest, const ParamsPolicy& policy,
                                          const std::filesystem::path& output_dir);

}  // namespace friendnet::hazegen
