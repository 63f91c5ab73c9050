#include "kfdiff/simd/kernels.hpp"

namespace kfdiff::simd {
namespace {

template <class T>
void gemm_nn(int m, int n, int k, const T* a, int lda, const T* b, int ldb, T* c, int ldc,
             bool accumulate) {
  for (int i = 0; i < m; ++i) {
    T* ci = c + static_cast<long>(i) * ldc;
    if (!accumulate)
      for (int j = 0; j < n; ++j) ci[j] = T(0);
    const T* ai = a + static_cast<long>(i) * lda;
    for (int p = 0; p < k; ++p) {
      const T av = ai[p];
      const T* bp = b + static_cast<long>(p) * ldb;
      for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

template <class T>
void gemm_nt(int m, int n, int k, const T* a, int lda, const T* b, int ldb, T* c, int ldc,
             bool accumulate) {
  for (int i = 0; i < m; ++i) {
    const T* ai = a + static_cast<long>(i) * lda;
    T* ci = c + static_cast<long>(i) * ldc;
    for (int j = 0; j < n; ++j) {
      const T* bj = b + static_cast<long>(j) * ldb;
      T s = T(0);
      for (int p = 0; p < k; ++p) s += ai[p] * bj[p];
      ci[j] = accumulate ? ci[j] + s : s;
    }
  }
}

template <class T>
void gemm_tn(int m, int n, int k, const T* a, int lda, const T* b, int ldb, T* c, int ldc,
             bool accumulate) {
  if (!accumulate)
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) c[static_cast<long>(i) * ldc + j] = T(0);
  for (int p = 0; p < k; ++p) {
    const T* ap = a + static_cast<long>(p) * lda;
    const T* bp = b + static_cast<long>(p) * ldb;
    for (int i = 0; i < m; ++i) {
      const T av = ap[i];
      T* ci = c + static_cast<long>(i) * ldc;
      for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

template <class T>
void axpy(int n, T alpha, const T* x, T* y) {
  for (int i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template <class T>
T dot(int n, const T* x, const T* y) {
  T s = T(0);
  for (int i = 0; i < n; ++i) s += x[i] * y[i];
  return s;
}

}  // namespace

const KernelTable<float>& scalar_kernels_f32() {
  static const KernelTable<float> table{&gemm_nn<float>, &gemm_nt<float>, &gemm_tn<float>,
                                        &axpy<float>, &dot<float>};
  return table;
}

const KernelTable<double>& scalar_kernels_f64() {
  static const KernelTable<double> table{&gemm_nn<double>, &gemm_nt<double>, &gemm_tn<double>,
                                         &axpy<double>, &dot<double>};
  return table;
}

}  // namespace kfdiff::simd
