#include "friendnet/nn/module.hpp"

#include <cmath>

namespace friendnet::nn {
namespace {

template <typename T>
Tensor<T> uniform_tensor(Shape s, double bound, Rng& rng) {
  Tensor<T> t(s);
  for (auto& v : t.span()) v = static_cast<T>(rng.uniform(-bound, bound));
  return t;
}

}  // namespace

template <typename T>
Conv2d<T>::Conv2d(int in_channels, int out_channels, int kernel, Rng& rng, ConvSpec spec, bool with_bias)
    : in_(in_channels),
      out_(out_channels),
      spec_(spec),
      weight_(this->register_parameter(
          "weight", uniform_tensor<T>(Shape{out_channels, in_channels / spec.groups, kernel, kernel},
                                      1.0 / std::sqrt(static_cast<double>(in_channels / spec.groups * kernel * kernel)),
                                      rng))) {
  if (with_bias) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in_channels / spec.groups * kernel * kernel));
    bias_ = &this->register_parameter("bias", uniform_tensor<T>(Shape{1, out_channels, 1, 1}, bound, rng));
  }
}

template <typename T>
void Conv2d<T>::fill(T weight_value, T bias_value) {
  weight_.mutable_value().fill(weight_value);
  if (bias_) bias_->mutable_value().fill(bias_value);
}

template <typename T>
BatchNorm2d<T>::BatchNorm2d(int channels, T momentum, T eps)
    : momentum_(momentum),
      eps_(eps),
      gamma_(this->register_parameter("gamma", Tensor<T>(1, channels, 1, 1, T(1)))),
      beta_(this->register_parameter("beta", Tensor<T>(1, channels, 1, 1, T(0)))),
      running_mean_(this->register_buffer("running_mean", Tensor<T>(1, channels, 1, 1, T(0)))),
      running_var_(this->register_buffer("running_var", Tensor<T>(1, channels, 1, 1, T(1)))) {}

template class Conv2d<float>;
template class Conv2d<double>;
template class BatchNorm2d<float>;
template class BatchNorm2d<double>;

}  // namespace friendnet::nn
