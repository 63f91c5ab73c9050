#include "kfdiff/denoiser.hpp"

#include <array>
#include <cmath>
#include <random>

#include "kfdiff/motion_data.hpp"

namespace kfdiff {

using ag::Tape;
using ag::Var;

std::size_t TokenValidity::count() const {
  std::size_t n = 0;
  for (char c : valid) n += c ? 1 : 0;
  return n;
}

TokenValidity dilate_validity(const TokenValidity& v, int step) {
  if (v.padding.size() != v.valid.size()) throw ShapeError("dilate_validity: padding length");
  const int n = static_cast<int>(v.valid.size());
  TokenValidity out = v;
  if (step <= 0) return out;
  // distance to the nearest valid token from the left and from the right
  int last = -1;
  for (int i = 0; i < n; ++i) {
    if (v.valid[i]) last = i;
    if (!v.padding[i] && last >= 0 && i - last <= step) out.valid[i] = 1;
  }
  last = -1;
  for (int i = n - 1; i >= 0; --i) {
    if (v.valid[i]) last = i;
    if (!v.padding[i] && last >= 0 && last - i <= step) out.valid[i] = 1;
  }
  return out;
}

DenoiserConfig DenoiserConfig::desk(int dim, int vocab) {
  DenoiserConfig c;
  c.dim = dim;
  c.vocab = vocab;
  return c;
}

DenoiserConfig DenoiserConfig::paper(int dim, int vocab) {
  DenoiserConfig c;
  c.dim = dim;
  c.vocab = vocab;
  c.width = 512;
  c.layers = 8;
  c.heads = 8;
  c.ff_width = 1024;
  return c;
}

void DenoiserConfig::validate() const {
  if (dim < 1 || width < 2 || layers < 1 || heads < 1 || ff_width < 1 || vocab < 2)
    throw ConfigError("denoiser dimensions must be positive");
  if (width % heads != 0) throw ConfigError("latent width must be divisible by heads");
  if (keyframe_encoder && dilation.empty()) throw ConfigError("keyframe encoder needs >= 1 block");
  for (int s : dilation)
    if (s < 0) throw ConfigError("dilation steps must be >= 0 (0 = N)");
}

std::vector<int> dilation_steps(const DenoiserConfig& cfg, int n) {
  std::vector<int> steps = cfg.dilation;
  for (int& s : steps)
    if (s == 0) s = n;
  return steps;
}

template <class T>
Matrix<T> sinusoidal_table(std::size_t n, std::size_t d, double offset) {
  Matrix<T> m(n, d);
  for (std::size_t pos = 0; pos < n; ++pos)
    for (std::size_t i = 0; i < d; i += 2) {
      const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(d));
      const double a = (offset + static_cast<double>(pos)) * freq;
      m(pos, i) = static_cast<T>(std::sin(a));
      if (i + 1 < d) m(pos, i + 1) = static_cast<T>(std::cos(a));
    }
  return m;
}

template Matrix<float> sinusoidal_table<float>(std::size_t, std::size_t, double);
template Matrix<double> sinusoidal_table<double>(std::size_t, std::size_t, double);

// ---- construction ----------------------------------------------------------

template <class T>
void Denoiser<T>::add_linear(const std::string& name, int in, int out, bool bias, std::uint64_t& stream) {
  std::mt19937_64 rng(stream_seed(cfg_.seed, stream++));
  const double bound = std::sqrt(6.0 / (in + out));
  std::uniform_real_distribution<double> u(-bound, bound);
  Matrix<T> w(in, out);
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = static_cast<T>(u(rng));
  params_.add(name + "/w", std::move(w));
  if (bias) params_.add(name + "/b", Matrix<T>(1, out));
}

template <class T>
Denoiser<T>::Denoiser(const DenoiserConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  const int d = cfg_.width, D = cfg_.dim;
  std::uint64_t stream = 0;
  auto random_table = [&](const std::string& name, int rows, double scale) {
    std::mt19937_64 rng(stream_seed(cfg_.seed, stream++));
    std::normal_distribution<double> nd(0.0, scale);
    Matrix<T> m(rows, d);
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = static_cast<T>(nd(rng));
    params_.add(name, std::move(m));
  };
  auto norm = [&](const std::string& name) {
    params_.add(name + "/g", Matrix<T>(1, d, T(1)));
    params_.add(name + "/b", Matrix<T>(1, d));
  };

  random_table("denoiser/prompt/table", cfg_.vocab, 1.0);
  add_linear("denoiser/prompt/proj", d, d, true, stream);
  add_linear("denoiser/time/fc1", d, d, true, stream);
  add_linear("denoiser/time/fc2", d, d, true, stream);
  add_linear("denoiser/input", D, d, true, stream);
  random_table("denoiser/null_keyframe", 1, 0.02);
  if (cfg_.keyframe_encoder) {
    add_linear("denoiser/encoder/input", D, d, true, stream);
    random_table("denoiser/encoder/placeholder", 1, 0.02);
    for (std::size_t b = 0; b < cfg_.dilation.size(); ++b) {
      const std::string pre = "denoiser/encoder/" + std::to_string(b);
      add_linear(pre + "/q", d, d, false, stream);
      add_linear(pre + "/k", d, d, false, stream);
      add_linear(pre + "/v", d, d, false, stream);
      add_linear(pre + "/fuse", 2 * d, d, true, stream);
      add_linear(pre + "/mlp1", d, cfg_.ff_width, true, stream);
      add_linear(pre + "/mlp2", cfg_.ff_width, d, true, stream);
    }
  }
  for (int l = 0; l < cfg_.layers; ++l) {
    const std::string pre = "denoiser/decoder/" + std::to_string(l);
    norm(pre + "/ln1");
    add_linear(pre + "/sa_q", d, d, true, stream);
    add_linear(pre + "/sa_k", d, d, true, stream);
    add_linear(pre + "/sa_v", d, d, true, stream);
    add_linear(pre + "/sa_o", d, d, true, stream);
    norm(pre + "/ln2");
    add_linear(pre + "/ca_q", d, d, true, stream);
    add_linear(pre + "/ca_k", d, d, true, stream);
    add_linear(pre + "/ca_v", d, d, true, stream);
    add_linear(pre + "/ca_o", d, d, true, stream);
    norm(pre + "/ln3");
    add_linear(pre + "/ff1", d, cfg_.ff_width, true, stream);
    add_linear(pre + "/ff2", cfg_.ff_width, d, true, stream);
  }
  norm("denoiser/final_ln");
  add_linear("denoiser/output", d, D, true, stream);
}

template <class T>
template <class U>
Denoiser<U> Denoiser<T>::cast() const {
  Denoiser<U> out(cfg_);
  for (std::size_t i = 0; i < params_.size(); ++i) out.parameters()[i].value = params_[i].value.template cast<U>();
  return out;
}

// ---- forward -----------------------------------------------------------------

template <class T>
Var Denoiser<T>::lin(Tape<T>& tape, Var x, const std::string& name, bool bias) {
  return ag::linear(tape, x, p(tape, name + "/w"), bias ? p(tape, name + "/b") : Var{});
}

template <class T>
Var Denoiser<T>::prompt_embedding(Tape<T>& tape, std::span<const int> tokens) {
  Var pooled = ag::embedding_mean(tape, p(tape, "denoiser/prompt/table"), tokens);
  return lin(tape, pooled, "denoiser/prompt/proj");
}

template <class T>
Var Denoiser<T>::encode(Tape<T>& tape, Var keyframes, std::span<const char> keyframe_rows, Var prompt,
                        bool drop, std::size_t frame_count, std::vector<TokenValidity>* trace) {
  const std::size_t n = drop && !keyframes.valid() ? keyframe_rows.size() : tape.value(keyframes).rows();
  if (frame_count == 0) frame_count = n;
  if (frame_count > n) throw ShapeError("encode: frame_count exceeds rows");
  if (drop) return ag::broadcast_rows(tape, p(tape, "denoiser/null_keyframe"), n);

  if (!cfg_.keyframe_encoder) throw PreconditionError("model was built without a keyframe encoder");
  const Matrix<T>& kv = tape.value(keyframes);
  if (static_cast<int>(kv.cols()) != cfg_.dim) throw ShapeError("encode: keyframe width != D");
  if (keyframe_rows.size() != n) throw ShapeError("encode: keyframe row mask length");

  TokenValidity validity;
  validity.valid.assign(n, 0);
  validity.padding.assign(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    validity.padding[i] = i >= frame_count ? 1 : 0;
    validity.valid[i] = (keyframe_rows[i] && !validity.padding[i]) ? 1 : 0;
  }
  if (validity.count() == 0) throw PreconditionError("encode: no keyframe row (use drop for the null condition)");

  const int d = cfg_.width;
  Var projected = lin(tape, keyframes, "denoiser/encoder/input");
  Var frames = ag::select_rows(tape, projected, p(tape, "denoiser/encoder/placeholder"),
                               std::span<const char>(validity.valid));
  frames = ag::add_const(tape, frames, sinusoidal_table<T>(n, d));
  const std::array<Var, 2> parts{prompt, frames};
  const Var z0 = ag::concat_rows(tape, std::span<const Var>(parts));
  Var z = z0;

  const std::vector<int> steps = dilation_steps(cfg_, static_cast<int>(n));
  std::vector<char> keys(n + 1), queries(n + 1);
  for (std::size_t b = 0; b < steps.size(); ++b) {
    const TokenValidity scope = dilate_validity(validity, steps[b]);
    keys[0] = queries[0] = 1;  // prompt token: always valid, outside the temporal axis
    for (std::size_t i = 0; i < n; ++i) {
      keys[i + 1] = validity.valid[i];
      queries[i + 1] = scope.valid[i];
    }
    const std::string pre = "denoiser/encoder/" + std::to_string(b);
    Var q = lin(tape, z, pre + "/q", false);
    Var k = lin(tape, z, pre + "/k", false);
    Var v = lin(tape, z, pre + "/v", false);
    Var att = ag::attention(tape, q, k, v, 1, keys, queries);
    Var fused = lin(tape, ag::concat_cols(tape, att, z), pre + "/fuse");
    z = lin(tape, ag::gelu(tape, lin(tape, fused, pre + "/mlp1")), pre + "/mlp2");
    validity = scope;
    if (trace) trace->push_back(validity);
  }
  z = ag::add(tape, z, z0);
  return ag::slice_rows(tape, z, 1, n);
}

template <class T>
Var Denoiser<T>::decode(Tape<T>& tape, Var x_t, int t, Var prompt, Var memory, std::size_t frame_count) {
  const Matrix<T>& xv = tape.value(x_t);
  const std::size_t n = xv.rows();
  if (static_cast<int>(xv.cols()) != cfg_.dim) throw ShapeError("decode: frame width != D");
  if (tape.value(memory).rows() != n) throw ShapeError("decode: memory length != N");
  if (t < 0) throw RangeError("decode: negative diffusion step");
  if (frame_count == 0) frame_count = n;
  const int d = cfg_.width;

  Var yt = lin(tape, ag::silu(tape, lin(tape, tape.constant(sinusoidal_table<T>(1, d, t)), "denoiser/time/fc1")),
               "denoiser/time/fc2");
  Var frames = ag::add_const(tape, lin(tape, x_t, "denoiser/input"), sinusoidal_table<T>(n, d));
  const std::array<Var, 3> parts{yt, prompt, frames};
  Var h = ag::concat_rows(tape, std::span<const Var>(parts));

  std::vector<char> self_keys(n + 2, 1), mem_keys(n, 1);
  for (std::size_t i = frame_count; i < n; ++i) self_keys[i + 2] = mem_keys[i] = 0;

  auto norm = [&](Var x, const std::string& name) {
    return ag::layer_norm(tape, x, p(tape, name + "/g"), p(tape, name + "/b"));
  };
  for (int l = 0; l < cfg_.layers; ++l) {
    const std::string pre = "denoiser/decoder/" + std::to_string(l);
    Var a = norm(h, pre + "/ln1");
    Var sa = ag::attention(tape, lin(tape, a, pre + "/sa_q"), lin(tape, a, pre + "/sa_k"),
                           lin(tape, a, pre + "/sa_v"), cfg_.heads, self_keys);
    h = ag::add(tape, h, lin(tape, sa, pre + "/sa_o"));
    Var c = norm(h, pre + "/ln2");
    Var ca = ag::attention(tape, lin(tape, c, pre + "/ca_q"), lin(tape, memory, pre + "/ca_k"),
                           lin(tape, memory, pre + "/ca_v"), cfg_.heads, mem_keys);
    h = ag::add(tape, h, lin(tape, ca, pre + "/ca_o"));
    Var f = norm(h, pre + "/ln3");
    h = ag::add(tape, h, lin(tape, ag::gelu(tape, lin(tape, f, pre + "/ff1")), pre + "/ff2"));
  }
  h = norm(h, "denoiser/final_ln");
  return lin(tape, ag::slice_rows(tape, h, 2, n), "denoiser/output");
}

template <class T>
Var Denoiser<T>::forward(Tape<T>& tape, Var x_t, int t, std::span<const int> tokens, Var keyframes,
                         std::span<const char> keyframe_rows, bool drop, std::size_t frame_count) {
  Var prompt = prompt_embedding(tape, tokens);
  Var memory;
  if (drop) {
    memory = ag::broadcast_rows(tape, p(tape, "denoiser/null_keyframe"), tape.value(x_t).rows());
  } else {
    memory = encode(tape, keyframes, keyframe_rows, prompt, false, frame_count);
  }
  return decode(tape, x_t, t, prompt, memory, frame_count);
}

template <class T>
Matrix<T> Denoiser<T>::encode_memory(const Matrix<T>& keyframes, std::span<const char> keyframe_rows,
                                     std::span<const int> tokens, bool drop) {
  Tape<T> tape(false);
  if (drop) return tape.value(ag::broadcast_rows(tape, p(tape, "denoiser/null_keyframe"), keyframes.rows()));
  Var prompt = prompt_embedding(tape, tokens);
  return tape.value(encode(tape, tape.constant(keyframes), keyframe_rows, prompt, false, 0));
}

template <class T>
Matrix<T> Denoiser<T>::predict(const Matrix<T>& x_t, int t, std::span<const int> tokens, const Matrix<T>& memory) {
  Tape<T> tape(false);
  Var prompt = prompt_embedding(tape, tokens);
  return tape.value(decode(tape, tape.constant(x_t), t, prompt, tape.constant(memory), 0));
}

template <class T>
Matrix<T> Denoiser<T>::predict(const Matrix<T>& x_t, int t, std::span<const int> tokens, const Matrix<T>& keyframes,
                               std::span<const char> keyframe_rows, bool drop) {
  Tape<T> tape(false);
  return tape.value(forward(tape, tape.constant(x_t), t, tokens, tape.constant(keyframes), keyframe_rows, drop));
}

template class Denoiser<float>;
template class Denoiser<double>;
template Denoiser<double> Denoiser<float>::cast<double>() const;
template Denoiser<float> Denoiser<double>::cast<float>() const;
template Denoiser<float> Denoiser<float>::cast<float>() const;

}  // namespace kfdiff
