#include "kfdiff/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace kfdiff {

void TrainConfig::validate() const {
  if (diffusion_steps < 1) throw ConfigError("train.T must be >= 1");
  if (steps < 0) throw ConfigError("train.steps must be >= 0");
  if (batch < 1) throw ConfigError("train.batch must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("train.lr must be > 0");
  if (!(keyframe_rate >= 0.0 && keyframe_rate <= 1.0)) throw ConfigError("train.keyframe_rate must lie in [0, 1]");
  if (!(keyframe_rate_max >= 0.0 && keyframe_rate_max <= 1.0))
    throw ConfigError("train.keyframe_rate_max must lie in [0, 1]");
  if (keyframe_rate_max != 0.0 && keyframe_rate_max < keyframe_rate)
    throw ConfigError("train.keyframe_rate_max must be 0 or >= train.keyframe_rate");
  if (!(dropout_rate >= 0.0 && dropout_rate <= 1.0)) throw ConfigError("train.dropout_rate must lie in [0, 1]");
  if (lambda_phy < 0 || lambda_vel < 0 || lambda_foot < 0) throw ConfigError("loss weights must be >= 0");
}

template <class T>
void AdamOptimizer<T>::step(ag::ParameterSet<T>& params, double lr) {
  if (m_.empty()) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_.emplace_back(params[i].value.size(), T(0));
      v_.emplace_back(params[i].value.size(), T(0));
    }
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  const T b1 = static_cast<T>(beta1_), b2 = static_cast<T>(beta2_);
  const T step = static_cast<T>(lr / bc1);
  const T inv_bc2 = static_cast<T>(1.0 / bc2);
  const T eps = static_cast<T>(eps_);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < p.value.size(); ++j) {
      const T g = p.grad[j];
      m[j] = b1 * m[j] + (T(1) - b1) * g;
      v[j] = b2 * v[j] + (T(1) - b2) * g * g;
      p.value[j] -= step * m[j] / (std::sqrt(v[j] * inv_bc2) + eps);
    }
  }
}

template class AdamOptimizer<float>;
template class AdamOptimizer<double>;

template <class T>
double clip_grad_norm(ag::ParameterSet<T>& params, double max_norm) {
  double sq = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i)
    for (std::size_t j = 0; j < params[i].grad.size(); ++j) {
      const double g = params[i].grad[j];
      sq += g * g;
    }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const T s = static_cast<T>(max_norm / norm);
    for (std::size_t i = 0; i < params.size(); ++i)
      for (std::size_t j = 0; j < params[i].grad.size(); ++j) params[i].grad[j] *= s;
  }
  return norm;
}

template double clip_grad_norm(ag::ParameterSet<float>&, double);
template double clip_grad_norm(ag::ParameterSet<double>&, double);

template <class T>
StepLosses sample_loss(Denoiser<T>& model, const TrainSample& s, const DiffusionSchedule& sched,
                       const TrainConfig& cfg, const ChannelLayout& layout, const CorpusStats& stats,
                       double weight, bool backward) {
  const std::size_t n = s.x0.rows();
  const int dim = static_cast<int>(s.x0.cols());
  const Matrix<T> x0 = s.x0.template cast<T>();
  const Matrix<T> x_t = q_sample(s.x0, s.t, s.eps, sched).template cast<T>();
  // Null-condition samples have no keyframes: every row is a target.
  const Matrix<T> mask = s.drop_keyframes ? Matrix<T>(n, dim) : s.mask.as_matrix(dim).template cast<T>();
  const Matrix<T> keyframes = extract_keyframes(s.x0, s.mask).template cast<T>();

  ag::Tape<T> tape(backward);
  ag::Var pred = model.forward(tape, tape.constant(x_t), s.t, s.tokens, tape.constant(keyframes), s.mask.rows,
                               s.drop_keyframes);
  const Matrix<T>& x0_hat = tape.value(pred);

  const LossValue<T> simple = simple_loss(x0, x0_hat, mask);
  const PhyLossTerms<T> phy =
      phy_loss(x0, x0_hat, mask, PhyLossOptions{layout, cfg.lambda_vel, cfg.lambda_foot, &stats});
  StepLosses out{simple.value, phy.total, simple.value + cfg.lambda_phy * phy.total};
  if (!std::isfinite(out.total)) throw NumericError("non-finite training loss at t=" + std::to_string(s.t));
  if (backward) {
    Matrix<T> seed(n, dim);
    for (std::size_t i = 0; i < seed.size(); ++i)
      seed[i] = static_cast<T>(weight * (static_cast<double>(simple.grad[i]) +
                                         cfg.lambda_phy * static_cast<double>(phy.grad[i])));
    tape.backward(pred, seed);
  }
  return out;
}

template StepLosses sample_loss(Denoiser<float>&, const TrainSample&, const DiffusionSchedule&, const TrainConfig&,
                                const ChannelLayout&, const CorpusStats&, double, bool);
template StepLosses sample_loss(Denoiser<double>&, const TrainSample&, const DiffusionSchedule&, const TrainConfig&,
                                const ChannelLayout&, const CorpusStats&, double, bool);

StepLosses train_step(Denoiser<float>& model, const TrainBatch& batch, const DiffusionSchedule& sched,
                      AdamOptimizer<float>& opt, double lr, const TrainConfig& cfg, const ChannelLayout& layout,
                      const CorpusStats& stats) {
  if (batch.samples.empty()) throw InputError("train_step: empty batch");
  auto& params = model.parameters();
  params.zero_grad();
  const double w = 1.0 / static_cast<double>(batch.samples.size());
  StepLosses mean;
  for (const auto& s : batch.samples) {
    const StepLosses l = sample_loss(model, s, sched, cfg, layout, stats, w, true);
    mean.simple += w * l.simple;
    mean.phy += w * l.phy;
    mean.total += w * l.total;
  }
  const double norm = clip_grad_norm(params, cfg.grad_clip);
  if (!std::isfinite(norm)) throw NumericError("non-finite gradient norm");
  opt.step(params, lr);
  return mean;
}

BatchSampler::BatchSampler(const Corpus& corpus, const TrainConfig& cfg)
    : corpus_(corpus), cfg_(cfg), rng_(stream_seed(cfg.seed, 0x7261696eull)) {
  if (corpus.records.empty()) throw InputError("training corpus is empty");
  normalized_.reserve(corpus.records.size());
  for (const auto& r : corpus.records) normalized_.push_back(normalize(r.motion.frames, corpus.stats));
}

TrainBatch BatchSampler::next() {
  TrainBatch batch;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<float> gauss(0.0f, 1.0f);
  for (int b = 0; b < cfg_.batch; ++b) {
    const std::size_t idx = rng_() % corpus_.records.size();
    TrainSample s;
    s.x0 = normalized_[idx];
    s.tokens = corpus_.records[idx].prompt.tokens;
    s.t = 1 + static_cast<int>(rng_() % static_cast<std::uint64_t>(cfg_.diffusion_steps));
    double rate = cfg_.keyframe_rate;
    if (cfg_.keyframe_rate_max > rate) rate += unit(rng_) * (cfg_.keyframe_rate_max - rate);
    s.mask = sample_keyframe_mask(s.x0.rows(), rate, rng_());
    s.drop_keyframes = !cfg_.keyframe_conditioning || unit(rng_) < cfg_.dropout_rate;
    s.eps = MatrixF(s.x0.rows(), s.x0.cols());
    for (std::size_t i = 0; i < s.eps.size(); ++i) s.eps[i] = gauss(rng_);
    batch.samples.push_back(std::move(s));
  }
  return batch;
}

double learning_rate(const TrainConfig& cfg, int step) {
  if (cfg.warmup_steps > 0 && step < cfg.warmup_steps)
    return cfg.lr * static_cast<double>(step + 1) / cfg.warmup_steps;
  const int span = std::max(1, cfg.steps - cfg.warmup_steps);
  const double progress = std::clamp(static_cast<double>(step - cfg.warmup_steps) / span, 0.0, 1.0);
  const double cosine = 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
  return cfg.lr * (cfg.min_lr_fraction + (1.0 - cfg.min_lr_fraction) * cosine);
}

std::vector<TrainLogRow> train(Denoiser<float>& model, const Corpus& corpus, const TrainConfig& cfg,
                               const std::function<void(const TrainLogRow&)>& on_step) {
  cfg.validate();
  if (cfg.keyframe_conditioning && !model.config().keyframe_encoder)
    throw ConfigError("keyframe conditioning requested but the model has no keyframe encoder");
  const DiffusionSchedule sched = DiffusionSchedule::cosine(cfg.diffusion_steps);
  BatchSampler sampler(corpus, cfg);
  AdamOptimizer<float> opt;
  std::vector<TrainLogRow> log;
  log.reserve(cfg.steps);
  for (int step = 0; step < cfg.steps; ++step) {
    const TrainBatch batch = sampler.next();
    const StepLosses l = train_step(model, batch, sched, opt, learning_rate(cfg, step), cfg, corpus.layout, corpus.stats);
    log.push_back({step, l});
    if (on_step) on_step(log.back());
  }
  return log;
}

}  // namespace kfdiff
