#include "friendnet/nn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "friendnet/simd/kernels.hpp"

namespace friendnet::nn {
namespace {

template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;

int conv_out(int in, int k, int stride, int pad) { return (in + 2 * pad - k) / stride + 1; }

// Per-thread unfold buffers reused across calls; contents are always fully
// overwritten before use.
template <typename T, int Slot>
std::vector<T>& scratch(std::size_t size) {
  thread_local std::vector<T> buffer;
  if (buffer.size() < size) buffer.resize(size);
  return buffer;
}

// Output columns [lo, hi) whose tap kx lands inside a row of width w.
inline void valid_columns(int kx, int stride, int pad, int w, int wo, int& lo, int& hi) {
  lo = std::max(0, (pad - kx + stride - 1) / stride);
  hi = std::min(wo, (w - 1 + pad - kx) / stride + 1);
  if (w - 1 + pad - kx < 0) hi = 0;
  if (hi < lo) hi = lo;
}

// Unfolds one image into (Cin*k*k) x (Ho*Wo).
template <typename T>
void im2col(const T* x, int cin, int h, int w, int k, int stride, int pad, int ho, int wo, T* col) {
  const long plane_out = static_cast<long>(ho) * wo;
  for (int ci = 0; ci < cin; ++ci) {
    const T* xp = x + static_cast<long>(ci) * h * w;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        T* row = col + ((static_cast<long>(ci) * k + ky) * k + kx) * plane_out;
        int lo, hi;
        valid_columns(kx, stride, pad, w, wo, lo, hi);
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          T* dst = row + static_cast<long>(oy) * wo;
          if (iy < 0 || iy >= h) {
            std::fill(dst, dst + wo, T(0));
            continue;
          }
          std::fill(dst, dst + lo, T(0));
          std::fill(dst + hi, dst + wo, T(0));
          const T* src = xp + static_cast<long>(iy) * w - pad + kx;
          if (stride == 1) {
            std::copy(src + lo, src + hi, dst + lo);
          } else {
            for (int ox = lo; ox < hi; ++ox) dst[ox] = src[ox * stride];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* col, int cin, int h, int w, int k, int stride, int pad, int ho, int wo, T* x) {
  const long plane_out = static_cast<long>(ho) * wo;
  for (int ci = 0; ci < cin; ++ci) {
    T* xp = x + static_cast<long>(ci) * h * w;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const T* row = col + ((static_cast<long>(ci) * k + ky) * k + kx) * plane_out;
        int lo, hi;
        valid_columns(kx, stride, pad, w, wo, lo, hi);
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          const T* src = row + static_cast<long>(oy) * wo;
          T* dst = xp + static_cast<long>(iy) * w - pad + kx;
          if (stride == 1) {
            for (int ox = lo; ox < hi; ++ox) dst[ox] += src[ox];
          } else {
            for (int ox = lo; ox < hi; ++ox) dst[ox * stride] += src[ox];
          }
        }
      }
    }
  }
}

// Valid output column range [x0, x1) for a kernel tap at stride 1.
inline void tap_range(int kx, int pad, int w_in, int w_out, int& x0, int& x1) {
  x0 = std::max(0, pad - kx);
  x1 = std::min(w_out, w_in + pad - kx);
}

template <typename T>
void depthwise_forward(const Tensor<T>& x, const Tensor<T>& wt, int k, int stride, int pad, Tensor<T>& out) {
  const auto& kt = simd::kernels<T>();
  const int n = x.n(), c = x.c(), h = x.h(), w = x.w(), ho = out.h(), wo = out.w();
  for (int b = 0; b < n; ++b) {
    for (int ch = 0; ch < c; ++ch) {
      const T* xp = x.plane(b, ch);
      T* op = out.plane(b, ch);
      const T* wk = wt.data() + static_cast<long>(ch) * k * k;
      for (int ky = 0; ky < k; ++ky) {
        for (int kx = 0; kx < k; ++kx) {
          const T wv = wk[ky * k + kx];
          if (stride == 1) {
            int x0, x1;
            tap_range(kx, pad, w, wo, x0, x1);
            if (x1 <= x0) continue;
            for (int oy = 0; oy < ho; ++oy) {
              const int iy = oy - pad + ky;
              if (iy < 0 || iy >= h) continue;
              kt.axpy(x1 - x0, wv, xp + static_cast<long>(iy) * w + x0 + kx - pad, op + static_cast<long>(oy) * wo + x0);
            }
          } else {
            for (int oy = 0; oy < ho; ++oy) {
              const int iy = oy * stride - pad + ky;
              if (iy < 0 || iy >= h) continue;
              for (int ox = 0; ox < wo; ++ox) {
                const int ix = ox * stride - pad + kx;
                if (ix >= 0 && ix < w) op[static_cast<long>(oy) * wo + ox] += wv * xp[static_cast<long>(iy) * w + ix];
              }
            }
          }
        }
      }
    }
  }
}

template <typename T>
void depthwise_backward(const Tensor<T>& x, const Tensor<T>& wt, const Tensor<T>& gout, int k, int stride, int pad,
                        Tensor<T>* gx, Tensor<T>* gw) {
  const auto& kt = simd::kernels<T>();
  const int n = x.n(), c = x.c(), h = x.h(), w = x.w(), ho = gout.h(), wo = gout.w();
  for (int b = 0; b < n; ++b) {
    for (int ch = 0; ch < c; ++ch) {
      const T* xp = x.plane(b, ch);
      const T* gp = gout.plane(b, ch);
      T* gxp = gx ? gx->plane(b, ch) : nullptr;
      const T* wk = wt.data() + static_cast<long>(ch) * k * k;
      T* gwk = gw ? gw->data() + static_cast<long>(ch) * k * k : nullptr;
      for (int ky = 0; ky < k; ++ky) {
        for (int kx = 0; kx < k; ++kx) {
          const T wv = wk[ky * k + kx];
          T acc = 0;
          if (stride == 1) {
            int x0, x1;
            tap_range(kx, pad, w, wo, x0, x1);
            if (x1 <= x0) continue;
            for (int oy = 0; oy < ho; ++oy) {
              const int iy = oy - pad + ky;
              if (iy < 0 || iy >= h) continue;
              const T* grow = gp + static_cast<long>(oy) * wo + x0;
              const long in_off = static_cast<long>(iy) * w + x0 + kx - pad;
              if (gxp) kt.axpy(x1 - x0, wv, grow, gxp + in_off);
              if (gwk) acc += kt.dot(x1 - x0, grow, xp + in_off);
            }
          } else {
            for (int oy = 0; oy < ho; ++oy) {
              const int iy = oy * stride - pad + ky;
              if (iy < 0 || iy >= h) continue;
              for (int ox = 0; ox < wo; ++ox) {
                const int ix = ox * stride - pad + kx;
                if (ix < 0 || ix >= w) continue;
                const T g = gp[static_cast<long>(oy) * wo + ox];
                if (gxp) gxp[static_cast<long>(iy) * w + ix] += wv * g;
                acc += g * xp[static_cast<long>(iy) * w + ix];
              }
            }
          }
          if (gwk) gwk[ky * k + kx] += acc;
        }
      }
    }
  }
}

template <typename T>
void add_bias(Tensor<T>& out, const Tensor<T>& bias) {
  const long plane = static_cast<long>(out.h()) * out.w();
  for (int b = 0; b < out.n(); ++b) {
    for (int ch = 0; ch < out.c(); ++ch) {
      T* p = out.plane(b, ch);
      const T v = bias[ch];
      for (long i = 0; i < plane; ++i) p[i] += v;
    }
  }
}

template <typename T>
Tensor<T> bias_grad(const Tensor<T>& g) {
  Tensor<T> gb(1, g.c(), 1, 1);
  const long plane = static_cast<long>(g.h()) * g.w();
  for (int b = 0; b < g.n(); ++b) {
    for (int ch = 0; ch < g.c(); ++ch) {
      const T* p = g.plane(b, ch);
      T s = 0;
      for (long i = 0; i < plane; ++i) s += p[i];
      gb[ch] += s;
    }
  }
  return gb;
}

template <typename T>
Tensor<T> transpose2d(const T* src, int rows, int cols) {
  Tensor<T> t(1, 1, cols, rows);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) t[static_cast<long>(c) * rows + r] = src[static_cast<long>(r) * cols + c];
  }
  return t;
}

// Broadcasting geometry for a binary op.
struct Broadcast {
  Shape out;
  std::array<long, 4> sa{};
  std::array<long, 4> sb{};
  bool same = false;
};

Broadcast broadcast_of(const Shape& a, const Shape& b) {
  auto dim = [&](int da, int db) {
    if (da == db) return da;
    if (da == 1) return db;
    if (db == 1) return da;
    throw std::invalid_argument("broadcast: incompatible shapes " + a.str() + " and " + b.str());
  };
  Broadcast r;
  r.out = Shape{dim(a.n, b.n), dim(a.c, b.c), dim(a.h, b.h), dim(a.w, b.w)};
  r.same = (a == b);
  auto strides = [](const Shape& s) {
    std::array<long, 4> st{static_cast<long>(s.c) * s.h * s.w, static_cast<long>(s.h) * s.w, s.w, 1};
    const int dims[4] = {s.n, s.c, s.h, s.w};
    for (int i = 0; i < 4; ++i) {
      if (dims[i] == 1) st[i] = 0;
    }
    return st;
  };
  r.sa = strides(a);
  r.sb = strides(b);
  return r;
}

// Calls f(out_index, a_index, b_index) over the broadcast output.
template <typename F>
void for_each_broadcast(const Broadcast& bc, F&& f) {
  const Shape& o = bc.out;
  if (bc.same) {
    const long total = static_cast<long>(o.numel());
    for (long i = 0; i < total; ++i) f(i, i, i);
    return;
  }
  long oi = 0;
  for (int n = 0; n < o.n; ++n) {
    for (int c = 0; c < o.c; ++c) {
      for (int y = 0; y < o.h; ++y) {
        const long ab = n * bc.sa[0] + c * bc.sa[1] + y * bc.sa[2];
        const long bb = n * bc.sb[0] + c * bc.sb[1] + y * bc.sb[2];
        for (int x = 0; x < o.w; ++x, ++oi) f(oi, ab + x * bc.sa[3], bb + x * bc.sb[3]);
      }
    }
  }
}

enum class BinaryKind { kAdd, kSub, kMul };

template <typename T>
Var<T> binary(const Var<T>& a, const Var<T>& b, BinaryKind kind) {
  const Broadcast bc = broadcast_of(a.shape(), b.shape());
  Tensor<T> out(bc.out);
  const T* pa = a.value().data();
  const T* pb = b.value().data();
  T* po = out.data();
  switch (kind) {
    case BinaryKind::kAdd:
      for_each_broadcast(bc, [&](long o, long i, long j) { po[o] = pa[i] + pb[j]; });
      break;
    case BinaryKind::kSub:
      for_each_broadcast(bc, [&](long o, long i, long j) { po[o] = pa[i] - pb[j]; });
      break;
    case BinaryKind::kMul:
      for_each_broadcast(bc, [&](long o, long i, long j) { po[o] = pa[i] * pb[j]; });
      break;
  }
  NodePtr<T> na = a.shared(), nb = b.shared();
  return make_result<T>(std::move(out), {a, b}, [na, nb, bc, kind](Node<T>& self) {
    const T* g = self.grad.data();
    if (na->requires_grad) {
      Tensor<T>& ga = grad_slot(na);
      T* pga = ga.data();
      if (kind == BinaryKind::kMul) {
        const T* pb2 = nb->value.data();
        for_each_broadcast(bc, [&](long o, long i, long j) { pga[i] += g[o] * pb2[j]; });
      } else {
        for_each_broadcast(bc, [&](long o, long i, long) { pga[i] += g[o]; });
      }
    }
    if (nb->requires_grad) {
      Tensor<T>& gb = grad_slot(nb);
      T* pgb = gb.data();
      if (kind == BinaryKind::kMul) {
        const T* pa2 = na->value.data();
        for_each_broadcast(bc, [&](long o, long i, long j) { pgb[j] += g[o] * pa2[i]; });
      } else if (kind == BinaryKind::kSub) {
        for_each_broadcast(bc, [&](long o, long, long j) { pgb[j] -= g[o]; });
      } else {
        for_each_broadcast(bc, [&](long o, long, long j) { pgb[j] += g[o]; });
      }
    }
  });
}

// Elementwise unary op; dfdx(x, y) gives the local derivative.
template <typename T, typename F, typename D>
Var<T> unary(const Var<T>& a, F f, D dfdx) {
  Tensor<T> out(a.shape());
  const T* pa = a.value().data();
  T* po = out.data();
  for (std::size_t i = 0; i < out.size(); ++i) po[i] = f(pa[i]);
  NodePtr<T> na = a.shared();
  return make_result<T>(std::move(out), {a}, [na, dfdx](Node<T>& self) {
    Tensor<T>& ga = grad_slot(na);
    const T* x = na->value.data();
    const T* y = self.value.data();
    const T* g = self.grad.data();
    T* pg = ga.data();
    for (std::size_t i = 0; i < ga.size(); ++i) pg[i] += g[i] * dfdx(x[i], y[i]);
  });
}

}  // namespace

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, ConvSpec spec) {
  const Shape xs = x.shape();
  const Shape ws = weight.shape();
  const int cout = ws.n;
  const int k = ws.h;
  if (ws.h != ws.w) throw std::invalid_argument("conv2d: square kernels only");
  if (spec.groups < 1 || xs.c % spec.groups != 0 || cout % spec.groups != 0) {
    throw std::invalid_argument("conv2d: channels not divisible by groups");
  }
  if (ws.c != xs.c / spec.groups) {
    throw std::invalid_argument("conv2d: weight " + ws.str() + " does not match input " + xs.str());
  }
  const bool depthwise = spec.groups > 1;
  if (depthwise && !(spec.groups == xs.c && cout == xs.c)) {
    throw std::invalid_argument("conv2d: only depthwise grouping (groups == Cin == Cout) is supported");
  }
  const int ho = conv_out(xs.h, k, spec.stride, spec.padding);
  const int wo = conv_out(xs.w, k, spec.stride, spec.padding);
  if (ho < 1 || wo < 1) throw std::invalid_argument("conv2d: input " + xs.str() + " too small for kernel");

  Tensor<T> out(xs.n, cout, ho, wo);
  const bool pointwise = !depthwise && k == 1 && spec.stride == 1 && spec.padding == 0;
  const int kc = xs.c * k * k;
  const long p_out = static_cast<long>(ho) * wo;
  const auto& kt = simd::kernels<T>();

  if (depthwise) {
    depthwise_forward(x.value(), weight.value(), k, spec.stride, spec.padding, out);
  } else {
    std::vector<T>& col = scratch<T, 0>(pointwise ? 0 : static_cast<std::size_t>(kc) * p_out);
    for (int b = 0; b < xs.n; ++b) {
      const T* src = x.value().plane(b, 0);
      if (!pointwise) {
        im2col(src, xs.c, xs.h, xs.w, k, spec.stride, spec.padding, ho, wo, col.data());
        src = col.data();
      }
      kt.gemm_nn(cout, static_cast<int>(p_out), kc, weight.value().data(), kc, src, static_cast<int>(p_out),
                 out.plane(b, 0), static_cast<int>(p_out), false);
    }
  }
  if (bias.defined()) add_bias(out, bias.value());

  NodePtr<T> nx = x.shared(), nw = weight.shared();
  NodePtr<T> nb = bias.defined() ? bias.shared() : nullptr;
  std::vector<Var<T>> parents{x, weight};
  if (bias.defined()) parents.push_back(bias);
  return make_result<T>(std::move(out), std::move(parents),
                        [nx, nw, nb, spec, k, ho, wo, kc, p_out, depthwise, pointwise](Node<T>& self) {
    const Tensor<T>& g = self.grad;
    const Tensor<T>& xv = nx->value;
    const Shape xs2 = xv.shape();
    const int cout2 = g.c();
    if (nb && nb->requires_grad) accumulate_grad(nb, bias_grad(g));
    const bool want_x = nx->requires_grad;
    const bool want_w = nw->requires_grad;
    if (!want_x && !want_w) return;
    if (depthwise) {
      depthwise_backward(xv, nw->value, g, k, spec.stride, spec.padding, want_x ? &grad_slot(nx) : nullptr,
                         want_w ? &grad_slot(nw) : nullptr);
      return;
    }
    const auto& kt2 = simd::kernels<T>();
    const Tensor<T> wt = transpose2d(nw->value.data(), cout2, kc);  // kc x cout
    std::vector<T>& col = scratch<T, 0>(pointwise ? 0 : static_cast<std::size_t>(kc) * p_out);
    std::vector<T>& dcol = scratch<T, 1>(pointwise ? 0 : static_cast<std::size_t>(kc) * p_out);
    Tensor<T>* gx = want_x ? &grad_slot(nx) : nullptr;
    Tensor<T>* gw = want_w ? &grad_slot(nw) : nullptr;
    for (int b = 0; b < xs2.n; ++b) {
      const T* gb = g.plane(b, 0);
      if (want_w) {
        const T* src = xv.plane(b, 0);
        if (!pointwise) {
          im2col(src, xs2.c, xs2.h, xs2.w, k, spec.stride, spec.padding, ho, wo, col.data());
          src = col.data();
        }
        kt2.gemm_nt(cout2, kc, static_cast<int>(p_out), gb, static_cast<int>(p_out), src, static_cast<int>(p_out),
                    gw->data(), kc, true);
      }
      if (want_x) {
        if (pointwise) {
          kt2.gemm_nn(kc, static_cast<int>(p_out), cout2, wt.data(), cout2, gb, static_cast<int>(p_out),
                      gx->plane(b, 0), static_cast<int>(p_out), true);
        } else {
          kt2.gemm_nn(kc, static_cast<int>(p_out), cout2, wt.data(), cout2, gb, static_cast<int>(p_out), dcol.data(),
                      static_cast<int>(p_out), false);
          col2im(dcol.data(), xs2.c, xs2.h, xs2.w, k, spec.stride, spec.padding, ho, wo, gx->plane(b, 0));
        }
      }
    }
  });
}

template <typename T>
Var<T> batch_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, Tensor<T>& running_mean,
                  Tensor<T>& running_var, bool training, T momentum, T eps) {
  const Shape s = x.shape();
  const long plane = static_cast<long>(s.h) * s.w;
  const long count = plane * s.n;
  Tensor<T> mean(1, s.c, 1, 1);
  Tensor<T> inv_std(1, s.c, 1, 1);
  if (training) {
    if (count < 2) throw std::invalid_argument("batch_norm: training needs more than one value per channel");
    for (int c = 0; c < s.c; ++c) {
      double sum = 0;
      for (int b = 0; b < s.n; ++b) {
        const T* p = x.value().plane(b, c);
        for (long i = 0; i < plane; ++i) sum += p[i];
      }
      const double m = sum / static_cast<double>(count);
      double sq = 0;
      for (int b = 0; b < s.n; ++b) {
        const T* p = x.value().plane(b, c);
        for (long i = 0; i < plane; ++i) {
          const double d = p[i] - m;
          sq += d * d;
        }
      }
      const double var = sq / static_cast<double>(count);
      mean[c] = static_cast<T>(m);
      inv_std[c] = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps)));
      const double unbiased = sq / static_cast<double>(count - 1);
      running_mean[c] = static_cast<T>((1 - momentum) * running_mean[c] + momentum * m);
      running_var[c] = static_cast<T>((1 - momentum) * running_var[c] + momentum * unbiased);
    }
  } else {
    for (int c = 0; c < s.c; ++c) {
      mean[c] = running_mean[c];
      inv_std[c] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(running_var[c]) + static_cast<double>(eps)));
    }
  }
  Tensor<T> xhat(s);
  Tensor<T> out(s);
  for (int b = 0; b < s.n; ++b) {
    for (int c = 0; c < s.c; ++c) {
      const T* p = x.value().plane(b, c);
      T* ph = xhat.plane(b, c);
      T* po = out.plane(b, c);
      const T m = mean[c], is = inv_std[c], ga = gamma.value()[c], be = beta.value()[c];
      for (long i = 0; i < plane; ++i) {
        ph[i] = (p[i] - m) * is;
        po[i] = ga * ph[i] + be;
      }
    }
  }
  NodePtr<T> nx = x.shared(), ng = gamma.shared(), nbeta = beta.shared();
  return make_result<T>(std::move(out), {x, gamma, beta},
                        [nx, ng, nbeta, xhat = std::move(xhat), inv_std, training, plane, count](Node<T>& self) {
    const Tensor<T>& g = self.grad;
    const Shape s2 = g.shape();
    std::vector<double> sum_g(s2.c, 0.0), sum_gx(s2.c, 0.0);
    for (int b = 0; b < s2.n; ++b) {
      for (int c = 0; c < s2.c; ++c) {
        const T* pg = g.plane(b, c);
        const T* ph = xhat.plane(b, c);
        double sg = 0, sgx = 0;
        for (long i = 0; i < plane; ++i) {
          sg += pg[i];
          sgx += static_cast<double>(pg[i]) * ph[i];
        }
        sum_g[c] += sg;
        sum_gx[c] += sgx;
      }
    }
    if (ng->requires_grad) {
      Tensor<T>& gg = grad_slot(ng);
      for (int c = 0; c < s2.c; ++c) gg[c] += static_cast<T>(sum_gx[c]);
    }
    if (nbeta->requires_grad) {
      Tensor<T>& gb = grad_slot(nbeta);
      for (int c = 0; c < s2.c; ++c) gb[c] += static_cast<T>(sum_g[c]);
    }
    if (!nx->requires_grad) return;
    Tensor<T>& gx = grad_slot(nx);
    const double inv_count = 1.0 / static_cast<double>(count);
    for (int b = 0; b < s2.n; ++b) {
      for (int c = 0; c < s2.c; ++c) {
        const T* pg = g.plane(b, c);
        const T* ph = xhat.plane(b, c);
        T* px = gx.plane(b, c);
        const T gam = ng->value[c];
        const T is = inv_std[c];
        if (training) {
          const T mg = static_cast<T>(sum_g[c] * inv_count);
          const T mgx = static_cast<T>(sum_gx[c] * inv_count);
          for (long i = 0; i < plane; ++i) px[i] += gam * is * (pg[i] - mg - ph[i] * mgx);
        } else {
          for (long i = 0; i < plane; ++i) px[i] += gam * is * pg[i];
        }
      }
    }
  });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  return binary(a, b, BinaryKind::kAdd);
}
template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  return binary(a, b, BinaryKind::kSub);
}
template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  return binary(a, b, BinaryKind::kMul);
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
  return unary(a, [s](T v) { return v * s; }, [s](T, T) { return s; });
}

template <typename T>
Var<T> sigmoid(const Var<T>& a) {
  return unary(a, [](T v) { return T(1) / (T(1) + std::exp(-v)); }, [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Var<T> relu(const Var<T>& a) {
  return unary(a, [](T v) { return v > T(0) ? v : T(0); }, [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
Var<T> gelu(const Var<T>& a) {
  constexpr T kInvSqrt2 = static_cast<T>(0.70710678118654752440);
  constexpr T kInvSqrt2Pi = static_cast<T>(0.39894228040143267794);
  return unary(
      a, [](T v) { return T(0.5) * v * (T(1) + std::erf(v * kInvSqrt2)); },
      [](T x, T) { return T(0.5) * (T(1) + std::erf(x * kInvSqrt2)) + x * kInvSqrt2Pi * std::exp(T(-0.5) * x * x); });
}

template <typename T>
Var<T> silu(const Var<T>& a) {
  return unary(
      a, [](T v) { return v / (T(1) + std::exp(-v)); },
      [](T x, T) {
        const T s = T(1) / (T(1) + std::exp(-x));
        return s * (T(1) + x * (T(1) - s));
      });
}

template <typename T>
Var<T> clamp(const Var<T>& a, T lo, T hi) {
  return unary(
      a, [lo, hi](T v) { return std::min(hi, std::max(lo, v)); },
      [lo, hi](T x, T) { return (x >= lo && x <= hi) ? T(1) : T(0); });
}

template <typename T>
Var<T> global_avg_pool(const Var<T>& a) {
  const Shape s = a.shape();
  const long plane = static_cast<long>(s.h) * s.w;
  Tensor<T> out(s.n, s.c, 1, 1);
  for (int b = 0; b < s.n; ++b) {
    for (int c = 0; c < s.c; ++c) {
      const T* p = a.value().plane(b, c);
      T acc = 0;
      for (long i = 0; i < plane; ++i) acc += p[i];
      out.at(b, c, 0, 0) = acc / static_cast<T>(plane);
    }
  }
  NodePtr<T> na = a.shared();
  return make_result<T>(std::move(out), {a}, [na, plane](Node<T>& self) {
    Tensor<T>& ga = grad_slot(na);
    const T inv = T(1) / static_cast<T>(plane);
    for (int b = 0; b < ga.n(); ++b) {
      for (int c = 0; c < ga.c(); ++c) {
        const T g = self.grad.at(b, c, 0, 0) * inv;
        T* p = ga.plane(b, c);
        for (long i = 0; i < plane; ++i) p[i] += g;
      }
    }
  });
}

template <typename T>
Var<T> upsample_nearest2x(const Var<T>& a) {
  const Shape s = a.shape();
  Tensor<T> out(s.n, s.c, s.h * 2, s.w * 2);
  for (int b = 0; b < s.n; ++b) {
    for (int c = 0; c < s.c; ++c) {
      const T* p = a.value().plane(b, c);
      T* po = out.plane(b, c);
      for (int y = 0; y < 2 * s.h; ++y) {
        for (int x = 0; x < 2 * s.w; ++x) po[static_cast<long>(y) * 2 * s.w + x] = p[(y / 2) * s.w + x / 2];
      }
    }
  }
  NodePtr<T> na = a.shared();
  return make_result<T>(std::move(out), {a}, [na](Node<T>& self) {
    Tensor<T>& ga = grad_slot(na);
    const Shape s2 = ga.shape();
    for (int b = 0; b < s2.n; ++b) {
      for (int c = 0; c < s2.c; ++c) {
        const T* pg = self.grad.plane(b, c);
        T* p = ga.plane(b, c);
        for (int y = 0; y < 2 * s2.h; ++y) {
          for (int x = 0; x < 2 * s2.w; ++x) p[(y / 2) * s2.w + x / 2] += pg[static_cast<long>(y) * 2 * s2.w + x];
        }
      }
    }
  });
}

namespace {
inline int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}
}  // namespace

template <typename T>
Var<T> reflect_pad(const Var<T>& a, int pad_bottom, int pad_right) {
  if (pad_bottom < 0 || pad_right < 0) throw std::invalid_argument("reflect_pad: negative padding");
  if (pad_bottom == 0 && pad_right == 0) return a;
  const Shape s = a.shape();
  const int ho = s.h + pad_bottom, wo = s.w + pad_right;
  Tensor<T> out(s.n, s.c, ho, wo);
  for (int b = 0; b < s.n; ++b) {
    for (int c = 0; c < s.c; ++c) {
      const T* p = a.value().plane(b, c);
      T* po = out.plane(b, c);
      for (int y = 0; y < ho; ++y) {
        const int sy = reflect_index(y, s.h);
        for (int x = 0; x < wo; ++x) po[static_cast<long>(y) * wo + x] = p[static_cast<long>(sy) * s.w + reflect_index(x, s.w)];
      }
    }
  }
  NodePtr<T> na = a.shared();
  return make_result<T>(std::move(out), {a}, [na, ho, wo](Node<T>& self) {
    Tensor<T>& ga = grad_slot(na);
    const Shape s2 = ga.shape();
    for (int b = 0; b < s2.n; ++b) {
      for (int c = 0; c < s2.c; ++c) {
        const T* pg = self.grad.plane(b, c);
        T* p = ga.plane(b, c);
        for (int y = 0; y < ho; ++y) {
          const int sy = reflect_index(y, s2.h);
          for (int x = 0; x < wo; ++x) p[static_cast<long>(sy) * s2.w + reflect_index(x, s2.w)] += pg[static_cast<long>(y) * wo + x];
        }
      }
    }
  });
}

template <typename T>
Var<T> crop(const Var<T>& a, int h, int w) {
  const Shape s = a.shape();
  if (h > s.h || w > s.w || h < 1 || w < 1) throw std::invalid_argument("crop: window larger than input");
  if (h == s.h && w == s.w) return a;
  Tensor<T> out(s.n, s.c, h, w);
  for (int b = 0; b < s.n; ++b) {
    for (int c = 0; c < s.c; ++c) {
      for (int y = 0; y < h; ++y) {
        std::copy_n(a.value().plane(b, c) + static_cast<long>(y) * s.w, w, out.plane(b, c) + static_cast<long>(y) * w);
      }
    }
  }
  NodePtr<T> na = a.shared();
  return make_result<T>(std::move(out), {a}, [na, h, w](Node<T>& self) {
    Tensor<T>& ga = grad_slot(na);
    for (int b = 0; b < ga.n(); ++b) {
      for (int c = 0; c < ga.c(); ++c) {
        for (int y = 0; y < h; ++y) {
          const T* src = self.grad.plane(b, c) + static_cast<long>(y) * w;
          T* dst = ga.plane(b, c) + static_cast<long>(y) * ga.w();
          for (int x = 0; x < w; ++x) dst[x] += src[x];
        }
      }
    }
  });
}

template <typename T>
Var<T> scattering_inverse(const Var<T>& feature, const Var<T>& inv_t, const Var<T>& airlight) {
  const Shape s = feature.shape();
  if (inv_t.shape() != s) throw std::invalid_argument("scattering_inverse: inv_t shape mismatch");
  if (airlight.shape() != Shape{s.n, s.c, 1, 1}) throw std::invalid_argument("scattering_inverse: airlight must be (N,C,1,1)");
  const long plane = static_cast<long>(s.h) * s.w;
  Tensor<T> out(s);
  for (int b = 0; b < s.n; ++b) {
    for (int c = 0; c < s.c; ++c) {
      const T* f = feature.value().plane(b, c);
      const T* it = inv_t.value().plane(b, c);
      const T av = airlight.value().at(b, c, 0, 0);
      T* po = out.plane(b, c);
      for (long i = 0; i < plane; ++i) po[i] = f[i] * it[i] + av * (T(1) - it[i]);
    }
  }
  NodePtr<T> nf = feature.shared(), nt = inv_t.shared(), na = airlight.shared();
  return make_result<T>(std::move(out), {feature, inv_t, airlight}, [nf, nt, na, plane](Node<T>& self) {
    const Shape s2 = self.grad.shape();
    Tensor<T>* gf = nf->requires_grad ? &grad_slot(nf) : nullptr;
    Tensor<T>* gt = nt->requires_grad ? &grad_slot(nt) : nullptr;
    Tensor<T>* ga = na->requires_grad ? &grad_slot(na) : nullptr;
    for (int b = 0; b < s2.n; ++b) {
      for (int c = 0; c < s2.c; ++c) {
        const T* g = self.grad.plane(b, c);
        const T* f = nf->value.plane(b, c);
        const T* it = nt->value.plane(b, c);
        const T av = na->value.at(b, c, 0, 0);
        T acc = 0;
        for (long i = 0; i < plane; ++i) {
          if (gf) gf->plane(b, c)[i] += g[i] * it[i];
          if (gt) gt->plane(b, c)[i] += g[i] * (f[i] - av);
          acc += g[i] * (T(1) - it[i]);
        }
        if (ga) ga->at(b, c, 0, 0) += acc;
      }
    }
  });
}

template <typename T>
Var<T> mean_abs_error(const Var<T>& a, const Var<T>& b) {
  if (a.shape() != b.shape()) throw std::invalid_argument("mean_abs_error: shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  const std::size_t n = a.value().size();
  double acc = 0;
  for (std::size_t i = 0; i < n; ++i) acc += std::abs(static_cast<double>(a.value()[i]) - b.value()[i]);
  NodePtr<T> na = a.shared(), nb = b.shared();
  return make_result<T>(Tensor<T>::scalar(static_cast<T>(acc / static_cast<double>(n))), {a, b}, [na, nb, n](Node<T>& self) {
    const T g = self.grad[0] / static_cast<T>(n);
    Tensor<T>* ga = na->requires_grad ? &grad_slot(na) : nullptr;
    Tensor<T>* gb = nb->requires_grad ? &grad_slot(nb) : nullptr;
    for (std::size_t i = 0; i < n; ++i) {
      const T d = na->value[i] - nb->value[i];
      const T sgn = d > T(0) ? T(1) : (d < T(0) ? T(-1) : T(0));
      if (ga) (*ga)[i] += g * sgn;
      if (gb) (*gb)[i] -= g * sgn;
    }
  });
}

template <typename T>
Var<T> mean_squared_error(const Var<T>& a, const Var<T>& b) {
  if (a.shape() != b.shape()) throw std::invalid_argument("mean_squared_error: shape mismatch");
  const std::size_t n = a.value().size();
  double acc = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(a.value()[i]) - b.value()[i];
    acc += d * d;
  }
  NodePtr<T> na = a.shared(), nb = b.shared();
  return make_result<T>(Tensor<T>::scalar(static_cast<T>(acc / static_cast<double>(n))), {a, b}, [na, nb, n](Node<T>& self) {
    const T g = T(2) * self.grad[0] / static_cast<T>(n);
    Tensor<T>* ga = na->requires_grad ? &grad_slot(na) : nullptr;
    Tensor<T>* gb = nb->requires_grad ? &grad_slot(nb) : nullptr;
    for (std::size_t i = 0; i < n; ++i) {
      const T d = na->value[i] - nb->value[i];
      if (ga) (*ga)[i] += g * d;
      if (gb) (*gb)[i] -= g * d;
    }
  });
}

template <typename T>
Var<T> sum(const Var<T>& a) {
  double acc = 0;
  for (T v : a.value().span()) acc += v;
  NodePtr<T> na = a.shared();
  return make_result<T>(Tensor<T>::scalar(static_cast<T>(acc)), {a}, [na](Node<T>& self) {
    Tensor<T>& ga = grad_slot(na);
    const T g = self.grad[0];
    for (auto& v : ga.span()) v += g;
  });
}

#define FRIENDNET_INSTANTIATE_OPS(T)                                                                      \
  template Var<T> conv2d(const Var<T>&, const Var<T>&, const Var<T>&, ConvSpec);                          \
  template Var<T> batch_norm(const Var<T>&, const Var<T>&, const Var<T>&, Tensor<T>&, Tensor<T>&, bool, T, \
                             T);                                                                          \
  template Var<T> add(const Var<T>&, const Var<T>&);                                                      \
  template Var<T> sub(const Var<T>&, const Var<T>&);                                                      \
  template Var<T> mul(const Var<T>&, const Var<T>&);                                                      \
  template Var<T> scale(const Var<T>&, T);                                                                \
  template Var<T> sigmoid(const Var<T>&);                                                                 \
  template Var<T> relu(const Var<T>&);                                                                    \
  template Var<T> gelu(const Var<T>&);                                                                    \
  template Var<T> silu(const Var<T>&);                                                                    \
  template Var<T> clamp(const Var<T>&, T, T);                                                             \
  template Var<T> global_avg_pool(const Var<T>&);                                                         \
  template Var<T> upsample_nearest2x(const Var<T>&);                                                      \
  template Var<T> reflect_pad(const Var<T>&, int, int);                                                   \
  template Var<T> crop(const Var<T>&, int, int);                                                          \
  template Var<T> scattering_inverse(const Var<T>&, const Var<T>&, const Var<T>&);                        \
  template Var<T> mean_abs_error(const Var<T>&, const Var<T>&);                                           \
  template Var<T> mean_squared_error(const Var<T>&, const Var<T>&);                                       \
  template Var<T> sum(const Var<T>&);

FRIENDNET_INSTANTIATE_OPS(float)
FRIENDNET_INSTANTIATE_OPS(double)

#undef FRIENDNET_INSTANTIATE_OPS

}  // namespace friendnet::nn
