#pragma once

// Dense inner-loop kernels behind the autograd ops. Every routine exists as a
// portable scalar reference; float additionally has an AVX2+FMA variant that
// is selected at runtime when the CPU supports it. Double always runs the
// scalar reference (it is only used for gradient checks).
//
// All matrices are row-major with explicit leading dimensions so that column
// slices (attention heads) can be addressed without copies.

#include <string_view>

namespace kfdiff::simd {

enum class Isa { Scalar, Avx2 };

template <class T>
struct KernelTable {
  // C[m x n] = A[m x k] * B[k x n]  (C += ... when accumulate)
  void (*gemm_nn)(int m, int n, int k, const T* a, int lda, const T* b, int ldb, T* c, int ldc,
                  bool accumulate);
  // C[m x n] = A[m x k] * B[n x k]^T
  void (*gemm_nt)(int m, int n, int k, const T* a, int lda, const T* b, int ldb, T* c, int ldc,
                  bool accumulate);
  // C[m x n] = A[k x m]^T * B[k x n]
  void (*gemm_tn)(int m, int n, int k, const T* a, int lda, const T* b, int ldb, T* c, int ldc,
                  bool accumulate);
  // y += alpha * x
  void (*axpy)(int n, T alpha, const T* x, T* y);
  T (*dot)(int n, const T* x, const T* y);
};

const KernelTable<float>& scalar_kernels_f32();
const KernelTable<double>& scalar_kernels_f64();
// Only valid to call when avx2_supported() is true.
const KernelTable<float>& avx2_kernels_f32();

bool avx2_supported();

// Runtime selection: AVX2 when supported, unless KFDIFF_ISA=scalar is set in
// the environment or force_isa() overrides it.
Isa active_isa();
void force_isa(Isa isa);
std::string_view isa_name(Isa isa);

template <class T>
const KernelTable<T>& kernels();

template <>
inline const KernelTable<double>& kernels<double>() {
  return scalar_kernels_f64();
}

template <>
const KernelTable<float>& kernels<float>();

}  // namespace kfdiff::simd
