#pragma once

// Dense inner-loop kernels used by the convolution and elementwise paths.
//
// Each kernel has a portable scalar reference and, when the build enables it,
// an AVX2/FMA variant. The active variant is picked once at startup from the
// CPU feature bits and can be pinned with FRIENDNET_SIMD=scalar|avx2 or
// set_active_level(). Variants agree to rounding error, not bitwise: the FMA
// path rounds once per multiply-add and the reductions use lane-parallel sums.

#include <string_view>

namespace friendnet::simd {

enum class Level { kScalar = 0, kAvx2 = 1 };

/// Highest level both compiled in and supported by the running CPU.
Level detected_level() noexcept;
Level active_level() noexcept;
/// Requests a level; anything above detected_level() is clamped. Returns the level in effect.
Level set_active_level(Level requested) noexcept;
std::string_view level_name(Level level) noexcept;

template <typename T>
struct KernelTable {
  /// C[m x n] (+)= A[m x k] * B[k x n], row-major with leading dimensions.
  void (*gemm_nn)(int m, int n, int k, const T* a, int lda, const T* b, int ldb, T* c, int ldc,
                  bool accumulate);
  /// C[m x n] (+)= A[m x k] * B[n x k]^T. Every output is a dot product of two rows.
  void (*gemm_nt)(int m, int n, int k, const T* a, int lda, const T* b, int ldb, T* c, int ldc,
                  bool accumulate);
  /// y += alpha * x
  void (*axpy)(int n, T alpha, const T* x, T* y);
  T (*dot)(int n, const T* x, const T* y);
  /// y[i] += x[i] * z[i]
  void (*fma_elementwise)(int n, const T* x, const T* z, T* y);
};

template <typename T>
const KernelTable<T>& kernels() noexcept;
template <typename T>
const KernelTable<T>& kernels(Level level) noexcept;

namespace scalar {
template <typename T>
const KernelTable<T>& table() noexcept;
}  // namespace scalar

namespace avx2 {
/// Only valid when detected_level() >= Level::kAvx2.
template <typename T>
const KernelTable<T>& table() noexcept;
}  // namespace avx2

}  // namespace friendnet::simd
