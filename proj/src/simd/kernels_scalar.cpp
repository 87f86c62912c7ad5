#include "friendnet/simd/kernels.hpp"

#include <algorithm>

namespace friendnet::simd::scalar {
namespace {

template <typename T>
void gemm_nn(int m, int n, int k, const T* a, int lda, const T* b, int ldb, T* c, int ldc,
             bool accumulate) {
  for (int i = 0; i < m; ++i) {
    T* crow = c + static_cast<long>(i) * ldc;
    if (!accumulate) std::fill(crow, crow + n, T(0));
    for (int p = 0; p < k; ++p) {
      const T av = a[static_cast<long>(i) * lda + p];
      const T* brow = b + static_cast<long>(p) * ldb;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename T>
void gemm_nt(int m, int n, int k, const T* a, int lda, const T* b, int ldb, T* c, int ldc,
             bool accumulate) {
  for (int i = 0; i < m; ++i) {
    const T* arow = a + static_cast<long>(i) * lda;
    for (int j = 0; j < n; ++j) {
      const T* brow = b + static_cast<long>(j) * ldb;
      T s = 0;
      for (int p = 0; p < k; ++p) s += arow[p] * brow[p];
      T& out = c[static_cast<long>(i) * ldc + j];
      out = accumulate ? out + s : s;
    }
  }
}

template <typename T>
void axpy(int n, T alpha, const T* x, T* y) {
  for (int i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template <typename T>
T dot(int n, const T* x, const T* y) {
  T s = 0;
  for (int i = 0; i < n; ++i) s += x[i] * y[i];
  return s;
}

template <typename T>
void fma_elementwise(int n, const T* x, const T* z, T* y) {
  for (int i = 0; i < n; ++i) y[i] += x[i] * z[i];
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

}  // namespace friendnet::simd::scalar
