#include <immintrin.h>

#include <vector>

#include "kfdiff/simd/kernels.hpp"

#define KFDIFF_AVX2 __attribute__((target("avx2,fma")))

namespace kfdiff::simd {
namespace {

KFDIFF_AVX2 inline float hsum(__m256 v) {
  __m128 lo = _mm256_castps256_ps128(v);
  __m128 hi = _mm256_extractf128_ps(v, 1);
  lo = _mm_add_ps(lo, hi);
  __m128 sh = _mm_movehdup_ps(lo);
  lo = _mm_add_ps(lo, sh);
  sh = _mm_movehl_ps(sh, lo);
  lo = _mm_add_ss(lo, sh);
  return _mm_cvtss_f32(lo);
}

KFDIFF_AVX2 inline void store(float* dst, __m256 v, bool accumulate) {
  if (accumulate) v = _mm256_add_ps(v, _mm256_loadu_ps(dst));
  _mm256_storeu_ps(dst, v);
}

// 4 rows x 16 columns register tile.
KFDIFF_AVX2 inline void tile_4x16(int k, const float* a, int lda, const float* b, int ldb, float* c,
                                  int ldc, bool accumulate) {
  __m256 c00 = _mm256_setzero_ps(), c01 = _mm256_setzero_ps();
  __m256 c10 = _mm256_setzero_ps(), c11 = _mm256_setzero_ps();
  __m256 c20 = _mm256_setzero_ps(), c21 = _mm256_setzero_ps();
  __m256 c30 = _mm256_setzero_ps(), c31 = _mm256_setzero_ps();
  const float* a0 = a;
  const float* a1 = a + lda;
  const float* a2 = a + 2 * lda;
  const float* a3 = a + 3 * lda;
  for (int p = 0; p < k; ++p) {
    const float* bp = b + static_cast<long>(p) * ldb;
    const __m256 b0 = _mm256_loadu_ps(bp);
    const __m256 b1 = _mm256_loadu_ps(bp + 8);
    __m256 av = _mm256_broadcast_ss(a0 + p);
    c00 = _mm256_fmadd_ps(av, b0, c00);
    c01 = _mm256_fmadd_ps(av, b1, c01);
    av = _mm256_broadcast_ss(a1 + p);
    c10 = _mm256_fmadd_ps(av, b0, c10);
    c11 = _mm256_fmadd_ps(av, b1, c11);
    av = _mm256_broadcast_ss(a2 + p);
    c20 = _mm256_fmadd_ps(av, b0, c20);
    c21 = _mm256_fmadd_ps(av, b1, c21);
    av = _mm256_broadcast_ss(a3 + p);
    c30 = _mm256_fmadd_ps(av, b0, c30);
    c31 = _mm256_fmadd_ps(av, b1, c31);
  }
  store(c, c00, accumulate);
  store(c + 8, c01, accumulate);
  store(c + ldc, c10, accumulate);
  store(c + ldc + 8, c11, accumulate);
  store(c + 2 * ldc, c20, accumulate);
  store(c + 2 * ldc + 8, c21, accumulate);
  store(c + 3 * ldc, c30, accumulate);
  store(c + 3 * ldc + 8, c31, accumulate);
}

// One row, 8-wide column chunks plus a scalar tail.
KFDIFF_AVX2 inline void row_kernel(int n, int k, const float* a, const float* b, int ldb, float* c,
                                   bool accumulate) {
  int j = 0;
  for (; j + 8 <= n; j += 8) {
    __m256 acc = _mm256_setzero_ps();
    for (int p = 0; p < k; ++p)
      acc = _mm256_fmadd_ps(_mm256_broadcast_ss(a + p), _mm256_loadu_ps(b + static_cast<long>(p) * ldb + j), acc);
    if (accumulate) acc = _mm256_add_ps(acc, _mm256_loadu_ps(c + j));
    _mm256_storeu_ps(c + j, acc);
  }
  for (; j < n; ++j) {
    float s = 0.0f;
    for (int p = 0; p < k; ++p) s += a[p] * b[static_cast<long>(p) * ldb + j];
    c[j] = accumulate ? c[j] + s : s;
  }
}

KFDIFF_AVX2 void gemm_nn(int m, int n, int k, const float* a, int lda, const float* b, int ldb,
                         float* c, int ldc, bool accumulate) {
  const int n16 = n - n % 16;
  int i = 0;
  for (; i + 4 <= m; i += 4) {
    const float* ai = a + static_cast<long>(i) * lda;
    float* ci = c + static_cast<long>(i) * ldc;
    for (int j = 0; j < n16; j += 16) tile_4x16(k, ai, lda, b + j, ldb, ci + j, ldc, accumulate);
    if (n16 < n) {
      for (int r = 0; r < 4; ++r)
        row_kernel(n - n16, k, ai + static_cast<long>(r) * lda, b + n16, ldb,
                   ci + static_cast<long>(r) * ldc + n16, accumulate);
    }
  }
  for (; i < m; ++i)
    row_kernel(n, k, a + static_cast<long>(i) * lda, b, ldb, c + static_cast<long>(i) * ldc,
               accumulate);
}

thread_local std::vector<float> g_scratch;

float* scratch(std::size_t n) {
  if (g_scratch.size() < n) g_scratch.resize(n);
  return g_scratch.data();
}

KFDIFF_AVX2 void gemm_nt(int m, int n, int k, const float* a, int lda, const float* b, int ldb,
                         float* c, int ldc, bool accumulate) {
  // Transpose B (n x k) into k x n and reuse the NN tile.
  float* bt = scratch(static_cast<std::size_t>(n) * k);
  for (int j = 0; j < n; ++j) {
    const float* bj = b + static_cast<long>(j) * ldb;
    for (int p = 0; p < k; ++p) bt[static_cast<long>(p) * n + j] = bj[p];
  }
  gemm_nn(m, n, k, a, lda, bt, n, c, ldc, accumulate);
}

KFDIFF_AVX2 void gemm_tn(int m, int n, int k, const float* a, int lda, const float* b, int ldb,
                         float* c, int ldc, bool accumulate) {
  float* at = scratch(static_cast<std::size_t>(m) * k);
  for (int p = 0; p < k; ++p) {
    const float* ap = a + static_cast<long>(p) * lda;
    for (int i = 0; i < m; ++i) at[static_cast<long>(i) * k + p] = ap[i];
  }
  gemm_nn(m, n, k, at, k, b, ldb, c, ldc, accumulate);
}

KFDIFF_AVX2 void axpy(int n, float alpha, const float* x, float* y) {
  const __m256 av = _mm256_set1_ps(alpha);
  int i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(y + i, _mm256_fmadd_ps(av, _mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
  for (; i < n; ++i) y[i] += alpha * x[i];
}

KFDIFF_AVX2 float dot(int n, const float* x, const float* y) {
  __m256 acc = _mm256_setzero_ps();
  int i = 0;
  for (; i + 8 <= n; i += 8)
    acc = _mm256_fmadd_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i), acc);
  float s = hsum(acc);
  for (; i < n; ++i) s += x[i] * y[i];
  return s;
}

}  // namespace

const KernelTable<float>& avx2_kernels_f32() {
  static const KernelTable<float> table{&gemm_nn, &gemm_nt, &gemm_tn, &axpy, &dot};
  return table;
}

}  // namespace kfdiff::simd
