#pragma once

#include <span>

#include "kfdiff/matrix.hpp"

namespace kfdiff {

// Additive logit assigned to invalid keys; exp() of it underflows to exactly 0.
inline constexpr double kMaskedLogit = -1e9;

template <class T>
struct AttentionResult {
  Matrix<T> out;    // Lq x d
  Matrix<T> probs;  // (heads * Lq) x Lk, head-major
};

// softmax(q_h k_h^T / sqrt(d_h) + M') v_h per head h, heads concatenated along
// columns. key_valid / query_active may be empty (all valid / all active).
// Throws PreconditionError when no key is valid.
template <class T>
AttentionResult<T> masked_attention(const Matrix<T>& q, const Matrix<T>& k, const Matrix<T>& v,
                                    int heads, std::span<const char> key_valid,
                                    std::span<const char> query_active = {});

}  // namespace kfdiff
