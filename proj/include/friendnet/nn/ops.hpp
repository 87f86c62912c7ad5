#pragma once

// Differentiable tensor operations. All tensors are NCHW. Binary elementwise
// ops broadcast any dimension of size 1 against the other operand.

#include "friendnet/nn/autograd.hpp"

namespace friendnet::nn {

struct ConvSpec {
  int stride = 1;
  int padding = 0;
  int groups = 1;
};

/// weight: (Cout, Cin/groups, k, k); bias: (1, Cout, 1, 1) or undefined.
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, ConvSpec spec);

/// Per-channel batch normalization. In training mode the batch statistics are
/// used and the running estimates are updated in place.
template <typename T>
Var<T> batch_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, Tensor<T>& running_mean,
                  Tensor<T>& running_var, bool training, T momentum, T eps);

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b);

template <typename T>
Var<T> scale(const Var<T>& a, T s);

template <typename T>
Var<T> sigmoid(const Var<T>& a);
template <typename T>
Var<T> relu(const Var<T>& a);
/// Exact (erf) GELU.
template <typename T>
Var<T> gelu(const Var<T>& a);
template <typename T>
Var<T> silu(const Var<T>& a);

/// Clamps into [lo, hi]; the gradient is zero where the clamp is active.
template <typename T>
Var<T> clamp(const Var<T>& a, T lo, T hi);

/// (N,C,H,W) -> (N,C,1,1)
template <typename T>
Var<T> global_avg_pool(const Var<T>& a);

template <typename T>
Var<T> upsample_nearest2x(const Var<T>& a);

/// Mirror padding on the bottom and right edges (edge pixel not repeated).
template <typename T>
Var<T> reflect_pad(const Var<T>& a, int pad_bottom, int pad_right);

/// Keeps the top-left h x w window.
template <typename T>
Var<T> crop(const Var<T>& a, int h, int w);

/// feature * inv_t + airlight * (1 - inv_t), airlight broadcast per channel.
/// Exactly the identity when inv_t is 1 and exactly airlight when inv_t is 0.
template <typename T>
Var<T> scattering_inverse(const Var<T>& feature, const Var<T>& inv_t, const Var<T>& airlight);

/// Scalar mean(|a - b|).
template <typename T>
Var<T> mean_abs_error(const Var<T>& a, const Var<T>& b);
/// Scalar mean((a - b)^2).
template <typename T>
Var<T> mean_squared_error(const Var<T>& a, const Var<T>& b);

/// Sum of all elements.
template <typename T>
Var<T> sum(const Var<T>& a);

}  // namespace friendnet::nn
