#pragma once

// U-shaped dehazing network built from physics-aware feature enhancement
// blocks, with detector guidance injected through additive (GFB) and
// attention (GAB) fusion blocks.

#include <cstdint>
#include <vector>

#include "friendnet/guidance.hpp"
#include "friendnet/image.hpp"
#include "friendnet/nn/module.hpp"
#include "json.hpp"

namespace friendnet::dehazenet {

struct NetworkConfig {
  int num_levels = 3;
  int base_channels = 16;
  int blocks_per_level = 2;
  int channel_attention_ratio = 4;
  /// Width multiplier of the 1/t branch inside the dehazing block.
  int pdb_expansion = 2;
  bool enable_pfeb_stage2 = true;
  bool enable_gfb = true;
  bool enable_gab = true;
  /// Encoder levels receiving each injection; negative values count back from
  /// the bottleneck (-1 is the deepest level).
  std::vector<int> gfb_levels{0};
  std::vector<int> gab_levels{-1};

  /// Throws std::invalid_argument on any inconsistent field.
  void validate() const;
  [[nodiscard]] int channels(int level) const { return base_channels << level; }
  [[nodiscard]] bool gfb_at(int level) const;
  [[nodiscard]] bool gab_at(int level) const;
  /// Spatial dims must be multiples of this (after padding).
  [[nodiscard]] int divisor() const { return 1 << (num_levels - 1); }
};

nlohmann::json to_json(const NetworkConfig& config);
/// Strict: unknown keys are rejected.
NetworkConfig network_config_from_json(const nlohmann::json& j);

/// GAP -> 1x1 reduce -> ReLU -> 1x1 expand -> sigmoid, used as a per-channel scale.
template <typename T>
class ChannelAttention : public nn::Module<T> {
 public:
  ChannelAttention(int channels, int ratio, Rng& rng);
  nn::Var<T> scale(const nn::Var<T>& x) const;
  nn::Var<T> forward(const nn::Var<T>& x) const { return nn::mul(x, scale(x)); }
  nn::Conv2d<T>& expand() noexcept { return *expand_; }
  nn::Conv2d<T>& reduce() noexcept { return *reduce_; }

 private:
  nn::Conv2d<T>* reduce_;
  nn::Conv2d<T>* expand_;
};

/// Feature-space inversion f * inv_t + A * (1 - inv_t). A comes from a pooled
/// branch, inv_t from an expand / 3x3 / 3x3 / project branch with GELU.
template <typename T>
class DehazingBlock : public nn::Module<T> {
 public:
  DehazingBlock(int channels, int expansion, Rng& rng);

  struct Parts {
    nn::Var<T> airlight;  // (N, C, 1, 1)
    nn::Var<T> inv_t;     // (N, C, H, W)
  };
  Parts parts(const nn::Var<T>& f) const;
  nn::Var<T> forward(const nn::Var<T>& f) const;

  nn::Conv2d<T>& inv_t_projection() noexcept { return *t_out_; }
  nn::Conv2d<T>& airlight_projection() noexcept { return *a_proj_; }

 private:
  nn::Conv2d<T>* a_proj_;
  nn::Conv2d<T>* t_in_;
  nn::Conv2d<T>* t_conv1_;
  nn::Conv2d<T>* t_conv2_;
  nn::Conv2d<T>* t_out_;
};

/// Stage 1: BN -> 1x1 -> depthwise 3x3 = x; x * sigmoid(1x1(x)); 1x1; residual.
/// Stage 2: BN -> 1x1 -> channel attention -> dehazing block -> 1x1; residual.
template <typename T>
class Pfeb : public nn::Module<T> {
 public:
  Pfeb(int channels, int ca_ratio, int pdb_expansion, bool stage2, Rng& rng);
  nn::Var<T> forward(const nn::Var<T>& f);

  nn::Conv2d<T>& stage1_projection() noexcept { return *s1_proj_; }
  [[nodiscard]] bool has_stage2() const noexcept { return s2_proj_ != nullptr; }

 private:
  nn::BatchNorm2d<T>* s1_norm_;
  nn::Conv2d<T>* s1_pw_;
  nn::Conv2d<T>* s1_dw_;
  nn::Conv2d<T>* s1_gate_;
  nn::Conv2d<T>* s1_proj_;
  nn::BatchNorm2d<T>* s2_norm_ = nullptr;
  nn::Conv2d<T>* s2_pw_ = nullptr;
  ChannelAttention<T>* s2_ca_ = nullptr;
  DehazingBlock<T>* s2_pdb_ = nullptr;
  nn::Conv2d<T>* s2_proj_ = nullptr;
};

/// f + depthwise3x3(1x1(g)); g is single-channel at the feature resolution.
template <typename T>
class GuidanceFusion : public nn::Module<T> {
 public:
  GuidanceFusion(int channels, Rng& rng);
  nn::Var<T> forward(const nn::Var<T>& f, const nn::Var<T>& g) const;
  nn::Conv2d<T>& lift() noexcept { return *lift_; }
  nn::Conv2d<T>& spread() noexcept { return *spread_; }

 private:
  nn::Conv2d<T>* lift_;
  nn::Conv2d<T>* spread_;
};

/// f * ReLU(1x1(ReLU(1x1(f) + 1x1(g)))).
template <typename T>
class GuidanceAttention : public nn::Module<T> {
 public:
  GuidanceAttention(int channels, Rng& rng);
  nn::Var<T> forward(const nn::Var<T>& f, const nn::Var<T>& g) const;
  nn::Conv2d<T>& attention_projection() noexcept { return *attn_; }

 private:
  nn::Conv2d<T>* from_f_;
  nn::Conv2d<T>* from_g_;
  nn::Conv2d<T>* attn_;
};

template <typename T>
class DehazeNet : public nn::Module<T> {
 public:
  /// Validates the config before allocating anything.
  DehazeNet(const NetworkConfig& config, Rng& rng);

  /// hazy: (N, 3, H, W) in [0, 1]; guidance: (N, 1, H, W) normalized mask
  /// (ignored when both injections are disabled). Any H, W >= 1.
  nn::Var<T> forward(const nn::Var<T>& hazy, const Tensor<T>& guidance);

  [[nodiscard]] const NetworkConfig& config() const noexcept { return config_; }
  nn::Conv2d<T>& output_projection() noexcept { return *out_proj_; }

 private:
  struct Level {
    std::vector<Pfeb<T>*> encoder;
    std::vector<Pfeb<T>*> decoder;
    GuidanceFusion<T>* gfb = nullptr;
    GuidanceAttention<T>* gab = nullptr;
    nn::Conv2d<T>* down = nullptr;  // to the next level
    nn::Conv2d<T>* up = nullptr;    // from the next level
  };

  NetworkConfig config_;
  nn::Conv2d<T>* in_proj_;
  nn::Conv2d<T>* out_proj_;
  std::vector<Level> levels_;
};

/// Exact trainable parameter count of a network built from `config`.
std::size_t count_params(const NetworkConfig& config);

/// Inference on one image with its guidance mask (resampled if needed).
Image dehaze(DehazeNet<float>& net, const Image& hazy, const guidance::GuidanceMask& mask);

}  // namespace friendnet::dehazenet
