// AVX2 + FMA kernel variants. This translation unit is compiled with
// -mavx2 -mfma and must only be entered after a runtime CPU check.

#include "friendnet/simd/kernels.hpp"

#include <immintrin.h>

#include <algorithm>
#include <vector>

namespace friendnet::simd::avx2 {
namespace {

template <typename T>
struct Vec;

template <>
struct Vec<float> {
  using Reg = __m256;
  static constexpr int kWidth = 8;
  static Reg zero() { return _mm256_setzero_ps(); }
  static Reg set1(float v) { return _mm256_set1_ps(v); }
  static Reg load(const float* p) { return _mm256_loadu_ps(p); }
  static void store(float* p, Reg v) { _mm256_storeu_ps(p, v); }
  static Reg fmadd(Reg a, Reg b, Reg c) { return _mm256_fmadd_ps(a, b, c); }
  static Reg add(Reg a, Reg b) { return _mm256_add_ps(a, b); }
  static float hsum(Reg v) {
    __m128 lo = _mm256_castps256_ps128(v);
    __m128 hi = _mm256_extractf128_ps(v, 1);
    lo = _mm_add_ps(lo, hi);
    __m128 sh = _mm_movehdup_ps(lo);
    __m128 s = _mm_add_ps(lo, sh);
    sh = _mm_movehl_ps(sh, s);
    s = _mm_add_ss(s, sh);
    return _mm_cvtss_f32(s);
  }
};

template <>
struct Vec<double> {
  using Reg = __m256d;
  static constexpr int kWidth = 4;
  static Reg zero() { return _mm256_setzero_pd(); }
  static Reg set1(double v) { return _mm256_set1_pd(v); }
  static Reg load(const double* p) { return _mm256_loadu_pd(p); }
  static void store(double* p, Reg v) { _mm256_storeu_pd(p, v); }
  static Reg fmadd(Reg a, Reg b, Reg c) { return _mm256_fmadd_pd(a, b, c); }
  static Reg add(Reg a, Reg b) { return _mm256_add_pd(a, b); }
  static double hsum(Reg v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    __m128d hi64 = _mm_unpackhi_pd(lo, lo);
    return _mm_cvtsd_f64(_mm_add_sd(lo, hi64));
  }
};

// Blocked GEMM: B is packed into kKc x kNc panels of NR-wide column strips,
// A into kMc x kKc blocks of kMr-row strips, and a kMr x NR register tile does
// the arithmetic. Operands are addressed through (row, column) strides so the
// same path serves both B layouts.
constexpr int kMr = 4;
// Register tile width in vectors.
constexpr int kNv = 3;
constexpr int kKc = 256;
constexpr int kMc = 96;
constexpr int kNc = 1024;

template <typename T>
struct Strided {
  const T* p;
  long rs;
  long cs;
  T operator()(long r, long c) const { return p[r * rs + c * cs]; }
};

template <typename T>
void pack_a(const Strided<T>& a, int i0, int mc, int p0, int kc, T* out) {
  for (int i = 0; i < mc; i += kMr) {
    const int rows = std::min(kMr, mc - i);
    for (int p = 0; p < kc; ++p) {
      for (int r = 0; r < rows; ++r) out[r] = a(i0 + i + r, p0 + p);
      for (int r = rows; r < kMr; ++r) out[r] = T(0);
      out += kMr;
    }
  }
}

template <typename T, int NR>
void pack_b(const Strided<T>& b, int p0, int kc, int j0, int nc, T* out) {
  for (int j = 0; j < nc; j += NR) {
    const int cols = std::min(NR, nc - j);
    if (b.cs == 1 && cols == NR) {
      for (int p = 0; p < kc; ++p) {
        const T* src = b.p + (p0 + p) * b.rs + j0 + j;
        std::copy(src, src + NR, out);
        out += NR;
      }
      continue;
    }
    for (int p = 0; p < kc; ++p) {
      for (int c = 0; c < cols; ++c) out[c] = b(p0 + p, j0 + j + c);
      for (int c = cols; c < NR; ++c) out[c] = T(0);
      out += NR;
    }
  }
}

// C[kMr x NR] += Apanel * Bpanel; rows/cols trim the store for edge tiles.
template <typename T>
void micro_kernel(int kc, const T* ap, const T* bp, T* c, int ldc, int rows, int cols) {
  using V = Vec<T>;
  constexpr int W = V::kWidth;
  constexpr int NR = kNv * W;
  typename V::Reg acc[kMr][kNv];
  for (int r = 0; r < kMr; ++r) {
    for (int v = 0; v < kNv; ++v) acc[r][v] = V::zero();
  }
  for (int p = 0; p < kc; ++p, ap += kMr, bp += NR) {
    typename V::Reg bv[kNv];
    for (int v = 0; v < kNv; ++v) bv[v] = V::load(bp + v * W);
    for (int r = 0; r < kMr; ++r) {
      const auto av = V::set1(ap[r]);
      for (int v = 0; v < kNv; ++v) acc[r][v] = V::fmadd(av, bv[v], acc[r][v]);
    }
  }
  if (rows == kMr && cols == NR) {
    for (int r = 0; r < kMr; ++r) {
      T* cr = c + static_cast<long>(r) * ldc;
      for (int v = 0; v < kNv; ++v) V::store(cr + v * W, V::add(acc[r][v], V::load(cr + v * W)));
    }
    return;
  }
  alignas(32) T tile[kMr * NR];
  for (int r = 0; r < kMr; ++r) {
    for (int v = 0; v < kNv; ++v) V::store(tile + r * NR + v * W, acc[r][v]);
  }
  for (int r = 0; r < rows; ++r) {
    for (int j = 0; j < cols; ++j) c[static_cast<long>(r) * ldc + j] += tile[r * NR + j];
  }
}

template <typename T>
void gemm_blocked(int m, int n, int k, const Strided<T>& a, const Strided<T>& b, T* c, int ldc, bool accumulate) {
  constexpr int NR = kNv * Vec<T>::kWidth;
  if (!accumulate) {
    for (int i = 0; i < m; ++i) std::fill(c + static_cast<long>(i) * ldc, c + static_cast<long>(i) * ldc + n, T(0));
  }
  if (m == 0 || n == 0 || k == 0) return;
  thread_local std::vector<T> apack, bpack;
  apack.resize(static_cast<std::size_t>(kMc + kMr) * kKc);
  bpack.resize(static_cast<std::size_t>(kNc + NR) * kKc);
  for (int j0 = 0; j0 < n; j0 += kNc) {
    const int nc = std::min(kNc, n - j0);
    for (int p0 = 0; p0 < k; p0 += kKc) {
      const int kc = std::min(kKc, k - p0);
      pack_b<T, NR>(b, p0, kc, j0, nc, bpack.data());
      for (int i0 = 0; i0 < m; i0 += kMc) {
        const int mc = std::min(kMc, m - i0);
        pack_a(a, i0, mc, p0, kc, apack.data());
        for (int j = 0; j < nc; j += NR) {
          const T* bp = bpack.data() + static_cast<long>(j) * kc;
          for (int i = 0; i < mc; i += kMr) {
            micro_kernel(kc, apack.data() + static_cast<long>(i) * kc, bp,
                         c + static_cast<long>(i0 + i) * ldc + j0 + j, ldc, std::min(kMr, mc - i),
                         std::min(NR, nc - j));
          }
        }
      }
    }
  }
}

template <typename T>
void gemm_nn(int m, int n, int k, const T* a, int lda, const T* b, int ldb, T* c, int ldc,
             bool accumulate) {
  gemm_blocked<T>(m, n, k, {a, lda, 1}, {b, ldb, 1}, c, ldc, accumulate);
}

template <typename T>
T dot(int n, const T* x, const T* y) {
  using V = Vec<T>;
  constexpr int W = V::kWidth;
  auto acc0 = V::zero();
  auto acc1 = V::zero();
  int i = 0;
  for (; i + 2 * W <= n; i += 2 * W) {
    acc0 = V::fmadd(V::load(x + i), V::load(y + i), acc0);
    acc1 = V::fmadd(V::load(x + i + W), V::load(y + i + W), acc1);
  }
  for (; i + W <= n; i += W) acc0 = V::fmadd(V::load(x + i), V::load(y + i), acc0);
  T s = V::hsum(V::add(acc0, acc1));
  for (; i < n; ++i) s += x[i] * y[i];
  return s;
}

template <typename T>
void gemm_nt(int m, int n, int k, const T* a, int lda, const T* b, int ldb, T* c, int ldc,
             bool accumulate) {
  gemm_blocked<T>(m, n, k, {a, lda, 1}, {b, 1, ldb}, c, ldc, accumulate);
}

template <typename T>
void axpy(int n, T alpha, const T* x, T* y) {
  using V = Vec<T>;
  constexpr int W = V::kWidth;
  const auto av = V::set1(alpha);
  int i = 0;
  for (; i + W <= n; i += W) V::store(y + i, V::fmadd(av, V::load(x + i), V::load(y + i)));
  for (; i < n; ++i) y[i] += alpha * x[i];
}

template <typename T>
void fma_elementwise(int n, const T* x, const T* z, T* y) {
  using V = Vec<T>;
  constexpr int W = V::kWidth;
  int i = 0;
  for (; i + W <= n; i += W) V::store(y + i, V::fmadd(V::load(x + i), V::load(z + i), V::load(y + i)));
  for (; i < n; ++i) y[i] += x[i] * z[i];
}

template <typename T>
constexpr KernelTable<T> kTable{&gemm_nn<T>, &gemm_nt<T>, &axpy<T>, &dot<T>, &fma_elementwise<T>};

}  // namespace

template <typename T>
const KernelTable<T>& table() noexcept {
  return kTable<T>;
}

template const KernelTable<float>& table<float>() noexcept;
template const KernelTable<double>& table<double>() noexcept;

}  // namespace friendnet::simd::avx2
