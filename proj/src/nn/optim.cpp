#include "friendnet/nn/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace friendnet::nn {

template <typename T>
AdamW<T>::AdamW(std::vector<Var<T>*> params, AdamWOptions options) : params_(std::move(params)), opt_(options) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (auto* p : params_) {
    m_.emplace_back(p->value().size(), 0.0);
    v_.emplace_back(p->value().size(), 0.0);
  }
}

template <typename T>
void AdamW<T>::step(double lr) {
  ++steps_;
  const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(steps_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Var<T>& p = *params_[k];
    if (!p.has_grad()) continue;
    T* w = p.mutable_value().data();
    const T* g = p.grad().data();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < m.size(); ++i) {
      const double gi = g[i];
      m[i] = opt_.beta1 * m[i] + (1.0 - opt_.beta1) * gi;
      v[i] = opt_.beta2 * v[i] + (1.0 - opt_.beta2) * gi * gi;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      double wi = w[i];
      wi -= lr * opt_.weight_decay * wi;
      wi -= lr * mhat / (std::sqrt(vhat) + opt_.eps);
      w[i] = static_cast<T>(wi);
    }
  }
}

double cosine_lr(long step, long total_steps, double initial, double floor) {
  if (total_steps <= 1) return initial;
  const double progress = std::clamp(static_cast<double>(step) / static_cast<double>(total_steps - 1), 0.0, 1.0);
  return floor + (initial - floor) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

template class AdamW<float>;
template class AdamW<double>;

}  // namespace friendnet::nn
