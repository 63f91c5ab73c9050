#include "kfdiff/attention.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "kfdiff/simd/kernels.hpp"

namespace kfdiff {

template <class T>
AttentionResult<T> masked_attention(const Matrix<T>& q, const Matrix<T>& k, const Matrix<T>& v,
                                    int heads, std::span<const char> key_valid,
                                    std::span<const char> query_active) {
  const int lq = static_cast<int>(q.rows());
  const int lk = static_cast<int>(k.rows());
  const int d = static_cast<int>(q.cols());
  if (heads <= 0 || d % heads != 0) throw ShapeError("attention: width not divisible by heads");
  if (static_cast<int>(k.cols()) != d || static_cast<int>(v.cols()) != d ||
      static_cast<int>(v.rows()) != lk)
    throw ShapeError("attention: q/k/v shape mismatch");
  if (!key_valid.empty() && static_cast<int>(key_valid.size()) != lk)
    throw ShapeError("attention: key mask length");
  if (!query_active.empty() && static_cast<int>(query_active.size()) != lq)
    throw ShapeError("attention: query mask length");
  const bool any_valid =
      key_valid.empty() ? lk > 0 : std::any_of(key_valid.begin(), key_valid.end(), [](char c) { return c != 0; });
  if (!any_valid) throw PreconditionError("attention: no valid key token");

  const int dh = d / heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  const auto& kern = simd::kernels<T>();

  AttentionResult<T> r{Matrix<T>(lq, d), Matrix<T>(static_cast<std::size_t>(heads) * lq, lk)};
  for (int h = 0; h < heads; ++h) {
    T* p = r.probs.data() + static_cast<long>(h) * lq * lk;
    kern.gemm_nt(lq, lk, dh, q.data() + h * dh, d, k.data() + h * dh, d, p, lk, false);
    for (int i = 0; i < lq; ++i) {
      T* row = p + static_cast<long>(i) * lk;
      if (!query_active.empty() && !query_active[i]) {
        std::fill(row, row + lk, T(0));
        continue;
      }
      T mx = -std::numeric_limits<T>::infinity();
      for (int j = 0; j < lk; ++j) {
        row[j] = row[j] * scale;
        if (!key_valid.empty() && !key_valid[j]) row[j] += static_cast<T>(kMaskedLogit);
        mx = std::max(mx, row[j]);
      }
      T sum = T(0);
      for (int j = 0; j < lk; ++j) {
        row[j] = std::exp(row[j] - mx);
        sum += row[j];
      }
      const T inv = T(1) / sum;
      for (int j = 0; j < lk; ++j) row[j] *= inv;
    }
    kern.gemm_nn(lq, dh, lk, p, lk, v.data() + h * dh, d, r.out.data() + h * dh, d, false);
  }
  return r;
}

template AttentionResult<float> masked_attention(const Matrix<float>&, const Matrix<float>&,
                                                 const Matrix<float>&, int, std::span<const char>,
                                                 std::span<const char>);
template AttentionResult<double> masked_attention(const Matrix<double>&, const Matrix<double>&,
                                                  const Matrix<double>&, int, std::span<const char>,
                                                  std::span<const char>);

}  // namespace kfdiff
