#include "friendnet/dehazenet.hpp"

#include <algorithm>
#include <set>
#include <stdexcept>
#include <string>

namespace friendnet::dehazenet {
namespace {

using nn::Conv2d;
using nn::ConvSpec;

constexpr ConvSpec kSame3x3{1, 1, 1};

bool level_listed(const std::vector<int>& levels, int level, int num_levels) {
  for (int l : levels) {
    if ((l < 0 ? num_levels + l : l) == level) return true;
  }
  return false;
}

template <typename T>
Tensor<T> level_guidance(const Tensor<T>& g, int h, int w) {
  Tensor<T> out(Shape{g.n(), 1, h, w});
  std::vector<float> src(g.shape().plane()), dst(static_cast<std::size_t>(h) * w);
  for (int n = 0; n < g.n(); ++n) {
    std::transform(g.plane(n, 0), g.plane(n, 0) + src.size(), src.begin(), [](T v) { return static_cast<float>(v); });
    guidance::resample_area(src.data(), g.h(), g.w(), dst.data(), h, w);
    std::transform(dst.begin(), dst.end(), out.plane(n, 0), [](float v) { return static_cast<T>(v); });
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

void NetworkConfig::validate() const {
  if (num_levels < 1 || num_levels > 8) throw std::invalid_argument("network: num_levels must be in [1, 8]");
  if (base_channels < 1) throw std::invalid_argument("network: base_channels must be >= 1");
  if (blocks_per_level < 0) throw std::invalid_argument("network: blocks_per_level must be >= 0");
  if (channel_attention_ratio < 1) throw std::invalid_argument("network: channel_attention_ratio must be >= 1");
  if (pdb_expansion < 1) throw std::invalid_argument("network: pdb_expansion must be >= 1");
  if (blocks_per_level > 0 && enable_pfeb_stage2) {
    for (int l = 0; l < num_levels; ++l) {
      if (channels(l) % channel_attention_ratio != 0) {
        throw std::invalid_argument("network: " + std::to_string(channels(l)) +
                                    " channels not divisible by channel_attention_ratio " +
                                    std::to_string(channel_attention_ratio));
      }
    }
  }
  for (const auto* list : {&gfb_levels, &gab_levels}) {
    for (int l : *list) {
      if (l >= num_levels || l < -num_levels) {
        throw std::invalid_argument("network: injection level " + std::to_string(l) + " outside " +
                                    std::to_string(num_levels) + " levels");
      }
    }
  }
}

bool NetworkConfig::gfb_at(int level) const { return enable_gfb && level_listed(gfb_levels, level, num_levels); }
bool NetworkConfig::gab_at(int level) const { return enable_gab && level_listed(gab_levels, level, num_levels); }

nlohmann::json to_json(const NetworkConfig& c) {
  return {{"num_levels", c.num_levels},
          {"base_channels", c.base_channels},
          {"blocks_per_level", c.blocks_per_level},
          {"channel_attention_ratio", c.channel_attention_ratio},
          {"pdb_expansion", c.pdb_expansion},
          {"enable_pfeb_stage2", c.enable_pfeb_stage2},
          {"enable_gfb", c.enable_gfb},
          {"enable_gab", c.enable_gab},
          {"gfb_levels", c.gfb_levels},
          {"gab_levels", c.gab_levels}};
}

NetworkConfig network_config_from_json(const nlohmann::json& j) {
  static const std::set<std::string> known{"num_levels",         "base_channels",   "blocks_per_level",
                                           "channel_attention_ratio", "pdb_expansion", "enable_pfeb_stage2",
                                           "enable_gfb",         "enable_gab",      "gfb_levels",
                                           "gab_levels"};
  NetworkConfig c;
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw std::invalid_argument("network config: unknown key '" + key + "'");
  }
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("num_levels", c.num_levels);
  get("base_channels", c.base_channels);
  get("blocks_per_level", c.blocks_per_level);
  get("channel_attention_ratio", c.channel_attention_ratio);
  get("pdb_expansion", c.pdb_expansion);
  get("enable_pfeb_stage2", c.enable_pfeb_stage2);
  get("enable_gfb", c.enable_gfb);
  get("enable_gab", c.enable_gab);
  get("gfb_levels", c.gfb_levels);
  get("gab_levels", c.gab_levels);
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Blocks

template <typename T>
ChannelAttention<T>::ChannelAttention(int channels, int ratio, Rng& rng) {
  if (ratio < 1 || channels % ratio != 0) {
    throw std::invalid_argument("channel attention: " + std::to_string(channels) + " channels not divisible by ratio " +
                                std::to_string(ratio));
  }
  reduce_ = &this->template register_module<Conv2d<T>>("reduce", channels, channels / ratio, 1, rng);
  expand_ = &this->template register_module<Conv2d<T>>("expand", channels / ratio, channels, 1, rng);
}

template <typename T>
nn::Var<T> ChannelAttention<T>::scale(const nn::Var<T>& x) const {
  return nn::sigmoid(expand_->forward(nn::relu(reduce_->forward(nn::global_avg_pool(x)))));
}

template <typename T>
DehazingBlock<T>::DehazingBlock(int channels, int expansion, Rng& rng) {
  const int wide = channels * expansion;
  a_proj_ = &this->template register_module<Conv2d<T>>("airlight", channels, channels, 1, rng);
  t_in_ = &this->template register_module<Conv2d<T>>("t_in", channels, wide, 1, rng);
  t_conv1_ = &this->template register_module<Conv2d<T>>("t_conv1", wide, wide, 3, rng, kSame3x3);
  t_conv2_ = &this->template register_module<Conv2d<T>>("t_conv2", wide, wide, 3, rng, kSame3x3);
  t_out_ = &this->template register_module<Conv2d<T>>("t_out", wide, channels, 1, rng);
  // Start near t = 1 so the block begins close to the identity.
  t_out_->bias()->mutable_value().fill(T(1));
}

template <typename T>
typename DehazingBlock<T>::Parts DehazingBlock<T>::parts(const nn::Var<T>& f) const {
  Parts p;
  p.airlight = a_proj_->forward(nn::global_avg_pool(f));
  nn::Var<T> t = t_in_->forward(f);
  t = nn::gelu(t_conv1_->forward(t));
  t = nn::gelu(t_conv2_->forward(t));
  p.inv_t = t_out_->forward(t);
  return p;
}

template <typename T>
nn::Var<T> DehazingBlock<T>::forward(const nn::Var<T>& f) const {
  const Parts p = parts(f);
  return nn::scattering_inverse(f, p.inv_t, p.airlight);
}

template <typename T>
Pfeb<T>::Pfeb(int channels, int ca_ratio, int pdb_expansion, bool stage2, Rng& rng) {
  const int c = channels;
  s1_norm_ = &this->template register_module<nn::BatchNorm2d<T>>("s1_norm", c);
  s1_pw_ = &this->template register_module<Conv2d<T>>("s1_pw", c, c, 1, rng);
  s1_dw_ = &this->template register_module<Conv2d<T>>("s1_dw", c, c, 3, rng, ConvSpec{1, 1, c});
  s1_gate_ = &this->template register_module<Conv2d<T>>("s1_gate", c, c, 1, rng);
  s1_proj_ = &this->template register_module<Conv2d<T>>("s1_proj", c, c, 1, rng);
  if (stage2) {
    s2_norm_ = &this->template register_module<nn::BatchNorm2d<T>>("s2_norm", c);
    s2_pw_ = &this->template register_module<Conv2d<T>>("s2_pw", c, c, 1, rng);
    s2_ca_ = &this->template register_module<ChannelAttention<T>>("s2_ca", c, ca_ratio, rng);
    s2_pdb_ = &this->template register_module<DehazingBlock<T>>("s2_pdb", c, pdb_expansion, rng);
    s2_proj_ = &this->template register_module<Conv2d<T>>("s2_proj", c, c, 1, rng);
  }
}

template <typename T>
nn::Var<T> Pfeb<T>::forward(const nn::Var<T>& f) {
  nn::Var<T> x = s1_dw_->forward(s1_pw_->forward(s1_norm_->forward(f)));
  x = nn::mul(x, nn::sigmoid(s1_gate_->forward(x)));
  nn::Var<T> out = nn::add(f, s1_proj_->forward(x));
  if (!s2_proj_) return out;
  nn::Var<T> y = s2_pw_->forward(s2_norm_->forward(out));
  y = s2_pdb_->forward(s2_ca_->forward(y));
  return nn::add(out, s2_proj_->forward(y));
}

template <typename T>
GuidanceFusion<T>::GuidanceFusion(int channels, Rng& rng) {
  lift_ = &this->template register_module<Conv2d<T>>("lift", 1, channels, 1, rng);
  spread_ = &this->template register_module<Conv2d<T>>("spread", channels, channels, 3, rng, ConvSpec{1, 1, channels});
}

template <typename T>
nn::Var<T> GuidanceFusion<T>::forward(const nn::Var<T>& f, const nn::Var<T>& g) const {
  if (g.shape().c != 1 || g.shape().h != f.shape().h || g.shape().w != f.shape().w || g.shape().n != f.shape().n) {
    throw std::invalid_argument("GFB: guidance " + g.shape().str() + " does not match feature " + f.shape().str());
  }
  return nn::add(f, spread_->forward(lift_->forward(g)));
}

template <typename T>
GuidanceAttention<T>::GuidanceAttention(int channels, Rng& rng) {
  from_f_ = &this->template register_module<Conv2d<T>>("from_f", channels, channels, 1, rng);
  from_g_ = &this->template register_module<Conv2d<T>>("from_g", 1, channels, 1, rng);
  attn_ = &this->template register_module<Conv2d<T>>("attn", channels, channels, 1, rng);
}

template <typename T>
nn::Var<T> GuidanceAttention<T>::forward(const nn::Var<T>& f, const nn::Var<T>& g) const {
  if (g.shape().c != 1 || g.shape().h != f.shape().h || g.shape().w != f.shape().w || g.shape().n != f.shape().n) {
    throw std::invalid_argument("GAB: guidance " + g.shape().str() + " does not match feature " + f.shape().str());
  }
  const nn::Var<T> mixed = nn::relu(nn::add(from_f_->forward(f), from_g_->forward(g)));
  return nn::mul(f, nn::relu(attn_->forward(mixed)));
}

// ---------------------------------------------------------------------------
// Network

template <typename T>
DehazeNet<T>::DehazeNet(const NetworkConfig& config, Rng& rng) : config_(config) {
  config_.validate();
  const int L = config_.num_levels;
  in_proj_ = &this->template register_module<Conv2d<T>>("in_proj", 3, config_.channels(0), 3, rng, kSame3x3);
  levels_.resize(static_cast<std::size_t>(L));
  for (int l = 0; l < L; ++l) {
    Level& lv = levels_[static_cast<std::size_t>(l)];
    const int c = config_.channels(l);
    const std::string p = "level" + std::to_string(l) + ".";
    for (int b = 0; b < config_.blocks_per_level; ++b) {
      lv.encoder.push_back(&this->template register_module<Pfeb<T>>(p + "enc" + std::to_string(b), c,
                                                                    config_.channel_attention_ratio,
                                                                    config_.pdb_expansion, config_.enable_pfeb_stage2, rng));
    }
    if (config_.gfb_at(l)) lv.gfb = &this->template register_module<GuidanceFusion<T>>(p + "gfb", c, rng);
    if (config_.gab_at(l)) lv.gab = &this->template register_module<GuidanceAttention<T>>(p + "gab", c, rng);
    if (l + 1 < L) {
      lv.down = &this->template register_module<Conv2d<T>>(p + "down", c, config_.channels(l + 1), 3, rng,
                                                           ConvSpec{2, 1, 1});
      lv.up = &this->template register_module<Conv2d<T>>(p + "up", config_.channels(l + 1), c, 3, rng, kSame3x3);
      for (int b = 0; b < config_.blocks_per_level; ++b) {
        lv.decoder.push_back(&this->template register_module<Pfeb<T>>(
            p + "dec" + std::to_string(b), c, config_.channel_attention_ratio, config_.pdb_expansion,
            config_.enable_pfeb_stage2, rng));
      }
    }
  }
  out_proj_ = &this->template register_module<Conv2d<T>>("out_proj", config_.channels(0), 3, 3, rng, kSame3x3);
  out_proj_->fill(T(0), T(0));
}

template <typename T>
nn::Var<T> DehazeNet<T>::forward(const nn::Var<T>& hazy, const Tensor<T>& guidance) {
  const Shape s = hazy.shape();
  if (s.c != 3 || s.h < 1 || s.w < 1) throw std::invalid_argument("dehazenet: expected (N, 3, H, W) input, got " + s.str());
  const bool uses_guidance = config_.enable_gfb || config_.enable_gab;
  if (uses_guidance && !(guidance.shape() == Shape{s.n, 1, s.h, s.w})) {
    throw std::invalid_argument("dehazenet: guidance " + guidance.shape().str() + " does not match input " + s.str());
  }
  const int d = config_.divisor();
  const int pad_h = (d - s.h % d) % d, pad_w = (d - s.w % d) % d;
  const nn::Var<T> x = nn::reflect_pad(hazy, pad_h, pad_w);
  Tensor<T> g_full;
  if (uses_guidance) {
    nn::NoGradGuard no_grad;
    g_full = nn::reflect_pad(nn::Var<T>(guidance), pad_h, pad_w).value();
  }
  const int H = s.h + pad_h, W = s.w + pad_w;

  nn::Var<T> f = in_proj_->forward(x);
  std::vector<nn::Var<T>> skips;
  const int L = config_.num_levels;
  for (int l = 0; l < L; ++l) {
    Level& lv = levels_[static_cast<std::size_t>(l)];
    for (auto* blk : lv.encoder) f = blk->forward(f);
    if (lv.gfb || lv.gab) {
      const nn::Var<T> g(level_guidance(g_full, H >> l, W >> l));
      if (lv.gfb) f = lv.gfb->forward(f, g);
      if (lv.gab) f = lv.gab->forward(f, g);
    }
    if (l + 1 < L) {
      skips.push_back(f);
      f = lv.down->forward(f);
    }
  }
  for (int l = L - 2; l >= 0; --l) {
    Level& lv = levels_[static_cast<std::size_t>(l)];
    f = nn::add(lv.up->forward(nn::upsample_nearest2x(f)), skips[static_cast<std::size_t>(l)]);
    for (auto* blk : lv.decoder) f = blk->forward(f);
  }
  const nn::Var<T> restored = nn::clamp(nn::add(x, out_proj_->forward(f)), T(0), T(1));
  return nn::crop(restored, s.h, s.w);
}

std::size_t count_params(const NetworkConfig& config) {
  Rng rng(0);
  return DehazeNet<float>(config, rng).parameter_count();
}

Image dehaze(DehazeNet<float>& net, const Image& hazy, const guidance::GuidanceMask& mask) {
  nn::NoGradGuard no_grad;
  const bool was_training = net.training();
  net.set_training(false);
  const guidance::GuidanceMask g = guidance::resample_guidance(mask, hazy.height(), hazy.width());
  Tensor<float> gt(Shape{1, 1, hazy.height(), hazy.width()});
  std::copy(g.plane.values.begin(), g.plane.values.end(), gt.data());
  const auto out = net.forward(nn::Var<float>(images_to_tensor<float>({hazy})), gt);
  net.set_training(was_training);
  return tensor_to_image(out.value(), 0);
}

template class ChannelAttention<float>;
template class ChannelAttention<double>;
template class DehazingBlock<float>;
template class DehazingBlock<double>;
template class Pfeb<float>;
template class Pfeb<double>;
template class GuidanceFusion<float>;
template class GuidanceFusion<double>;
template class GuidanceAttention<float>;
template class GuidanceAttention<double>;
template class DehazeNet<float>;
template class DehazeNet<double>;

}  // namespace friendnet::dehazenet
