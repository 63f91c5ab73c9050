#include "kfdiff/guidance.hpp"

#include <cmath>
#include <map>
#include <numbers>
#include <random>

#include "kfdiff/errors.hpp"

namespace kfdiff {

DctBasis dct_basis(int length, int m) {
  if (length < 1) throw ConfigError("DCT window length must be >= 1");
  if (m < 1 || m > length)
    throw ConfigError("DCT basis count m=" + std::to_string(m) + " outside [1, " + std::to_string(length) + "]");
  DctBasis out{MatrixD(length, m), MatrixD(length, length)};
  const double c0 = std::sqrt(1.0 / length), ck = std::sqrt(2.0 / length);
  for (int n = 0; n < length; ++n)
    for (int k = 0; k < m; ++k)
      out.basis(n, k) = (k == 0 ? c0 : ck) * std::cos(std::numbers::pi * (n + 0.5) * k / length);
  for (int i = 0; i < length; ++i)
    for (int j = 0; j < length; ++j) {
      double acc = 0.0;
      for (int k = 0; k < m; ++k) acc += out.basis(i, k) * out.basis(j, k);
      out.projector(i, j) = acc;
    }
  return out;
}

void TransitionWindow::validate() const {
  if (l < 0) throw ConfigError("transition window l must be >= 0");
  if (m < 1 || m > 2 * l + 1) throw ConfigError("transition window needs 1 <= m <= 2l+1");
}

namespace {

struct WindowSpan {
  int lo, len;
};

WindowSpan clip_window(int center, int l, int n) {
  const int lo = std::max(0, center - l);
  const int hi = std::min(n - 1, center + l);
  return {lo, hi - lo + 1};
}

// Residual R = (I - P) G for the (clipped) window rows of x.
MatrixD window_residual(const MatrixD& x, WindowSpan w, const MatrixD& projector) {
  const std::size_t d = x.cols();
  MatrixD r(w.len, d);
  for (int i = 0; i < w.len; ++i)
    for (std::size_t c = 0; c < d; ++c) {
      double acc = x(w.lo + i, c);
      for (int j = 0; j < w.len; ++j) acc -= projector(i, j) * x(w.lo + j, c);
      r(i, c) = acc;
    }
  return r;
}

class ProjectorCache {
 public:
  explicit ProjectorCache(int m) : m_(m) {}
  const MatrixD& get(int len) {
    auto it = cache_.find(len);
    if (it == cache_.end()) it = cache_.emplace(len, dct_basis(len, std::min(m_, len)).projector).first;
    return it->second;
  }

 private:
  int m_;
  std::map<int, MatrixD> cache_;
};

void check_keyframes(const MatrixD& x, std::span<const int> keyframes) {
  if (keyframes.empty()) throw PreconditionError("transition loss needs >= 1 keyframe");
  for (int k : keyframes)
    if (k < 0 || static_cast<std::size_t>(k) >= x.rows())
      throw RangeError("keyframe index " + std::to_string(k) + " outside sequence of " + std::to_string(x.rows()));
}

}  // namespace

double transition_loss(const MatrixD& x, std::span<const int> keyframes, const TransitionWindow& w) {
  w.validate();
  check_keyframes(x, keyframes);
  ProjectorCache cache(w.m);
  const int n = static_cast<int>(x.rows());
  double total = 0.0;
  for (int k : keyframes) {
    const WindowSpan span = clip_window(k, w.l, n);
    const MatrixD r = window_residual(x, span, cache.get(span.len));
    for (std::size_t i = 0; i < r.size(); ++i) total += r[i] * r[i];
  }
  return total / ((2.0 * w.l + 1.0) * static_cast<double>(keyframes.size()));
}

MatrixD transition_grad(const MatrixD& x, std::span<const int> keyframes, const TransitionWindow& w) {
  w.validate();
  check_keyframes(x, keyframes);
  ProjectorCache cache(w.m);
  const int n = static_cast<int>(x.rows());
  const double scale = 2.0 / ((2.0 * w.l + 1.0) * static_cast<double>(keyframes.size()));
  MatrixD g(x.rows(), x.cols());
  // d||(I-P)G||^2 / dG = 2 (I-P)^T (I-P) G = 2 (I-P) G for a symmetric idempotent P.
  for (int k : keyframes) {
    const WindowSpan span = clip_window(k, w.l, n);
    const MatrixD r = window_residual(x, span, cache.get(span.len));
    for (int i = 0; i < span.len; ++i)
      for (std::size_t c = 0; c < x.cols(); ++c) g(span.lo + i, c) += scale * r(i, c);
  }
  for (int k : keyframes)
    for (std::size_t c = 0; c < x.cols(); ++c) g(k, c) = 0.0;
  return g;
}

MatrixF transition_guided_mean(const MatrixF& mean, const MatrixF& x0_hat, const MatrixF& keyframes,
                               std::span<const int> keyframe_rows, double r, double sigma2,
                               const TransitionWindow& w) {
  if (mean.rows() != x0_hat.rows() || mean.cols() != x0_hat.cols() || keyframes.rows() != x0_hat.rows() ||
      keyframes.cols() != x0_hat.cols())
    throw ShapeError("transition_guided_mean: mean, x0_hat and keyframes must share a shape");
  MatrixD assembled = x0_hat.cast<double>();
  for (int k : keyframe_rows)
    for (std::size_t c = 0; c < assembled.cols(); ++c) assembled(k, c) = keyframes(k, c);
  const MatrixD g = transition_grad(assembled, keyframe_rows, w);
  const double step = r * sigma2;
  MatrixF out = mean;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= static_cast<float>(step * g[i]);
  return out;
}

namespace {

template <class T>
Matrix<T> combine(const Matrix<T>& cond, const Matrix<T>& uncond, double s) {
  require_same_shape(cond, uncond, "cfg_combine");
  Matrix<T> out(cond.rows(), cond.cols());
  const double a = 1.0 - s;
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = static_cast<T>(a * static_cast<double>(uncond[i]) + s * static_cast<double>(cond[i]));
  return out;
}

}  // namespace

MatrixF cfg_combine(const MatrixF& cond, const MatrixF& uncond, double s) { return combine(cond, uncond, s); }
MatrixD cfg_combine(const MatrixD& cond, const MatrixD& uncond, double s) { return combine(cond, uncond, s); }

std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::DiffKfc: return "diffkfc";
    case Strategy::DiffKfcNoTg: return "diffkfc-notg";
    case Strategy::Inpaint: return "inpaint";
    case Strategy::Gradient: return "grad";
    case Strategy::TextOnly: return "text-only";
  }
  return "?";
}

Strategy parse_strategy(std::string_view s) {
  for (Strategy v : {Strategy::DiffKfc, Strategy::DiffKfcNoTg, Strategy::Inpaint, Strategy::Gradient,
                     Strategy::TextOnly})
    if (to_string(v) == s) return v;
  throw ConfigError("unknown strategy '" + std::string(s) + "' (diffkfc, diffkfc-notg, inpaint, grad, text-only)");
}

void SamplerConfig::validate() const {
  if (!(r >= 0.0)) throw ConfigError("sample.r must be >= 0");
  if (!std::isfinite(s)) throw ConfigError("sample.s must be finite");
  if (tg_steps < 0) throw ConfigError("sample.tg_steps must be >= 0");
  if (!(grad_scale >= 0.0)) throw ConfigError("sample.grad_scale must be >= 0");
  window.validate();
}

namespace {

void check_request(const Denoiser<float>& model, const SampleRequest& req, bool need_keyframes) {
  if (req.frames == 0) throw PreconditionError("sample: zero frames requested");
  if (need_keyframes) {
    if (req.keyframes.rows() != req.frames || static_cast<int>(req.keyframes.cols()) != model.config().dim)
      throw ShapeError("sample: keyframes must be " + shape_str(req.frames, model.config().dim));
    if (req.mask.frames() != req.frames) throw ShapeError("sample: mask length != frames");
    if (req.mask.count() == 0) throw PreconditionError("sample: no keyframes in mask");
  }
}

MatrixF gaussian(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  std::normal_distribution<float> g(0.0f, 1.0f);
  MatrixF m(rows, cols);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = g(rng);
  return m;
}

void require_finite(const MatrixF& x, int t) {
  for (std::size_t i = 0; i < x.size(); ++i)
    if (!std::isfinite(x[i])) throw NumericError("non-finite sampler state at step t=" + std::to_string(t));
}

// Shared reverse loop. `predict` gives X0_hat at step t; `adjust` may perturb
// the posterior mean; `after` may edit X_{t-1}.
template <class Predict, class Adjust, class After>
MatrixF reverse_chain(std::size_t n, int dim, const SamplerConfig& cfg, const DiffusionSchedule& sched,
                      Predict&& predict, Adjust&& adjust, After&& after) {
  std::mt19937_64 rng(cfg.seed);
  MatrixF x = gaussian(n, dim, rng);
  for (int t = sched.steps(); t >= 1; --t) {
    const MatrixF x0_hat = predict(x, t);
    MatrixF mean = posterior_mean(x0_hat, x, t, sched);
    const double sigma2 = sched.sigma2(t, cfg.variance);
    adjust(mean, x0_hat, x, t, sigma2);
    if (t > 1) {
      const MatrixF z = gaussian(n, dim, rng);
      const float sigma = static_cast<float>(std::sqrt(sigma2));
      for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += sigma * z[i];
    }
    x = std::move(mean);
    after(x, t - 1);
    require_finite(x, t);
  }
  return x;
}

const auto kNoAdjust = [](MatrixF&, const MatrixF&, const MatrixF&, int, double) {};
const auto kNoAfter = [](MatrixF&, int) {};

MatrixF empty_keyframes(const Denoiser<float>& model, std::size_t n) { return MatrixF(n, model.config().dim); }

}  // namespace

MatrixF sample_text(Denoiser<float>& model, const SampleRequest& req, const SamplerConfig& cfg,
                    const DiffusionSchedule& sched) {
  cfg.validate();
  check_request(model, req, false);
  const MatrixF memory = model.encode_memory(empty_keyframes(model, req.frames), {}, req.tokens, true);
  return reverse_chain(
      req.frames, model.config().dim, cfg, sched,
      [&](const MatrixF& x, int t) { return model.predict(x, t, req.tokens, memory); }, kNoAdjust, kNoAfter);
}

MatrixF sample_diffkfc(Denoiser<float>& model, const SampleRequest& req, const SamplerConfig& cfg,
                       const DiffusionSchedule& sched, bool drop_keyframes) {
  cfg.validate();
  check_request(model, req, !drop_keyframes);
  const MatrixF null_memory = model.encode_memory(empty_keyframes(model, req.frames), {}, req.tokens, true);
  const MatrixF kf_memory = drop_keyframes ? null_memory
                                           : model.encode_memory(req.keyframes, req.mask.rows, req.tokens, false);
  const bool guide = cfg.r > 0.0 && !drop_keyframes;
  auto predict = [&](const MatrixF& x, int t) {
    MatrixF cond = model.predict(x, t, req.tokens, kf_memory);
    if (cfg.s == 1.0) return cond;
    return cfg_combine(cond, model.predict(x, t, req.tokens, null_memory), cfg.s);
  };
  auto adjust = [&](MatrixF& mean, const MatrixF& x0_hat, const MatrixF&, int t, double sigma2) {
    if (!guide || (cfg.tg_steps > 0 && t > cfg.tg_steps) || sigma2 == 0.0) return;
    mean = transition_guided_mean(mean, x0_hat, req.keyframes, req.mask.keyframe_indices, cfg.r, sigma2, cfg.window);
  };
  return reverse_chain(req.frames, model.config().dim, cfg, sched, predict, adjust, kNoAfter);
}

MatrixF baseline_inpaint_sample(Denoiser<float>& model, const SampleRequest& req, const SamplerConfig& cfg,
                                const DiffusionSchedule& sched, bool overwrite) {
  cfg.validate();
  check_request(model, req, true);
  const MatrixF memory = model.encode_memory(empty_keyframes(model, req.frames), {}, req.tokens, true);
  std::mt19937_64 overwrite_rng(stream_seed(cfg.seed, 0x696e70ull));
  std::normal_distribution<float> gauss(0.0f, 1.0f);
  auto after = [&](MatrixF& x, int t) {
    if (!overwrite) return;
    const float a = static_cast<float>(std::sqrt(sched.alpha_bar(t)));
    const float b = static_cast<float>(std::sqrt(1.0 - sched.alpha_bar(t)));
    for (int k : req.mask.keyframe_indices)
      for (std::size_t c = 0; c < x.cols(); ++c) {
        if (t == 0) {
          x(k, c) = req.keyframes(k, c);
        } else {
          x(k, c) = a * req.keyframes(k, c) + b * gauss(overwrite_rng);
        }
      }
  };
  return reverse_chain(
      req.frames, model.config().dim, cfg, sched,
      [&](const MatrixF& x, int t) { return model.predict(x, t, req.tokens, memory); }, kNoAdjust, after);
}

MatrixF baseline_gradient_sample(Denoiser<float>& model, const SampleRequest& req, const SamplerConfig& cfg,
                                 const DiffusionSchedule& sched) {
  cfg.validate();
  check_request(model, req, true);
  const MatrixF memory = model.encode_memory(empty_keyframes(model, req.frames), {}, req.tokens, true);
  MatrixF grad_x;  // gradient of the keyframe loss w.r.t. X_t for the current step
  auto predict = [&](const MatrixF& x, int t) {
    if (cfg.grad_scale == 0.0) return model.predict(x, t, req.tokens, memory);
    ag::Tape<float> tape(true);
    const ag::Var xv = tape.input(x);
    const ag::Var prompt = model.prompt_embedding(tape, req.tokens);
    const ag::Var pred = model.decode(tape, xv, t, prompt, tape.constant(memory), 0);
    const MatrixF x0_hat = tape.value(pred);
    MatrixF seed(x0_hat.rows(), x0_hat.cols());
    for (int k : req.mask.keyframe_indices)
      for (std::size_t c = 0; c < seed.cols(); ++c) seed(k, c) = 2.0f * (x0_hat(k, c) - req.keyframes(k, c));
    tape.backward(pred, seed);
    grad_x = tape.grad(xv);
    return x0_hat;
  };
  auto adjust = [&](MatrixF& mean, const MatrixF&, const MatrixF&, int, double sigma2) {
    if (cfg.grad_scale == 0.0) return;
    const float step = static_cast<float>(cfg.grad_scale * sigma2);
    for (std::size_t i = 0; i < mean.size(); ++i) mean[i] -= step * grad_x[i];
  };
  return reverse_chain(req.frames, model.config().dim, cfg, sched, predict, adjust, kNoAfter);
}

MatrixF sample_strategy(Strategy strategy, Denoiser<float>& model, const SampleRequest& req,
                        const SamplerConfig& cfg, const DiffusionSchedule& sched) {
  switch (strategy) {
    case Strategy::DiffKfc: return sample_diffkfc(model, req, cfg, sched);
    case Strategy::DiffKfcNoTg: {
      SamplerConfig c = cfg;
      c.r = 0.0;
      return sample_diffkfc(model, req, c, sched);
    }
    case Strategy::Inpaint: return baseline_inpaint_sample(model, req, cfg, sched);
    case Strategy::Gradient: return baseline_gradient_sample(model, req, cfg, sched);
    case Strategy::TextOnly: return sample_text(model, req, cfg, sched);
  }
  throw ConfigError("unhandled strategy");
}

}  // namespace kfdiff
