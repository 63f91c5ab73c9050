#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "kfdiff/autograd.hpp"
#include "kfdiff/matrix.hpp"

namespace kfdiff {

// Token validity for the keyframe encoder. Padding tokens never become valid.
struct TokenValidity {
  std::vector<char> valid;
  std::vector<char> padding;

  std::size_t size() const { return valid.size(); }
  std::size_t count() const;
};

// A non-padding invalid token becomes valid iff a valid token lies within
// temporal distance <= step (on either side). Valid tokens stay valid.
TokenValidity dilate_validity(const TokenValidity& v, int step);

struct DenoiserConfig {
  int dim = 19;        // pose channels D
  int width = 64;      // latent width d
  int layers = 4;      // decoder layers
  int heads = 4;
  int ff_width = 128;
  int vocab = 17;
  // Per-block dilation step sizes; 0 stands for the token count N.
  std::vector<int> dilation{2, 2, 4, 4, 6, 6, 8, 0};
  bool keyframe_encoder = true;
  std::uint64_t seed = 0;

  static DenoiserConfig desk(int dim, int vocab);
  static DenoiserConfig paper(int dim, int vocab);
  void validate() const;
};

// Resolved dilation steps for an N-token sequence.
std::vector<int> dilation_steps(const DenoiserConfig& cfg, int n);

// Sinusoidal table: rows are positions [offset, offset + n), d columns.
template <class T>
Matrix<T> sinusoidal_table(std::size_t n, std::size_t d, double offset = 0.0);

// Keyframe-conditioned x0-predictor: prompt/timestep embedders, a stack of
// dilated-mask-attention blocks over the keyframe rows, and a pre-norm
// transformer decoder whose cross-attention reads the encoder memory.
template <class T>
class Denoiser {
 public:
  explicit Denoiser(const DenoiserConfig& cfg);

  const DenoiserConfig& config() const { return cfg_; }
  ag::ParameterSet<T>& parameters() { return params_; }
  const ag::ParameterSet<T>& parameters() const { return params_; }

  template <class U>
  Denoiser<U> cast() const;

  // 1 x d prompt embedding (mean-pooled token table, then linear).
  ag::Var prompt_embedding(ag::Tape<T>& tape, std::span<const int> tokens);

  // Encoder memory (N x d). keyframes: N x D with keyframe rows filled;
  // padding rows are those at index >= frame_count. When `drop` is set the
  // learned null embedding is broadcast instead and the keyframes are unused.
  // `trace` (optional) receives the validity after every block.
  ag::Var encode(ag::Tape<T>& tape, ag::Var keyframes, std::span<const char> keyframe_rows,
                 ag::Var prompt, bool drop, std::size_t frame_count,
                 std::vector<TokenValidity>* trace = nullptr);

  // X0 estimate (N x D) from the noised frames and an encoder memory.
  ag::Var decode(ag::Tape<T>& tape, ag::Var x_t, int t, ag::Var prompt, ag::Var memory,
                 std::size_t frame_count);

  ag::Var forward(ag::Tape<T>& tape, ag::Var x_t, int t, std::span<const int> tokens,
                  ag::Var keyframes, std::span<const char> keyframe_rows, bool drop,
                  std::size_t frame_count = 0);

  // Non-recording conveniences used by the samplers.
  Matrix<T> encode_memory(const Matrix<T>& keyframes, std::span<const char> keyframe_rows,
                          std::span<const int> tokens, bool drop);
  Matrix<T> predict(const Matrix<T>& x_t, int t, std::span<const int> tokens,
                    const Matrix<T>& memory);
  Matrix<T> predict(const Matrix<T>& x_t, int t, std::span<const int> tokens,
                    const Matrix<T>& keyframes, std::span<const char> keyframe_rows, bool drop);

 private:
  ag::Var p(ag::Tape<T>& tape, const std::string& name) { return tape.param(params_.at(name)); }
  void add_linear(const std::string& name, int in, int out, bool bias, std::uint64_t& stream);
  ag::Var lin(ag::Tape<T>& tape, ag::Var x, const std::string& name, bool bias = true);

  DenoiserConfig cfg_;
  ag::ParameterSet<T> params_;
};

extern template class Denoiser<float>;
extern template class Denoiser<double>;

}  // namespace kfdiff
