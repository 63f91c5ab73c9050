#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "kfdiff/denoiser.hpp"
#include "kfdiff/diffusion.hpp"
#include "kfdiff/motion_data.hpp"

namespace kfdiff {

struct TrainConfig {
  int diffusion_steps = 100;
  int steps = 3000;
  int batch = 16;
  double lr = 5e-4;
  int warmup_steps = 100;
  double min_lr_fraction = 0.1;  // cosine decay floor
  double grad_clip = 1.0;
  double keyframe_rate = 0.05;
  // When above keyframe_rate, each sample draws its rate uniformly from
  // [keyframe_rate, keyframe_rate_max]; 0 keeps the rate fixed.
  double keyframe_rate_max = 0.0;
  double dropout_rate = 0.1;
  double lambda_phy = 1.0;
  double lambda_vel = 1.0;
  double lambda_foot = 1.0;
  // false trains a text-only model: every sample takes the null condition.
  bool keyframe_conditioning = true;
  std::uint64_t seed = 0;

  void validate() const;
};

// One training example, fully resolved so that a step is a pure function of
// (batch, model, optimizer state).
struct TrainSample {
  MatrixF x0;  // normalized N x D
  KeyframeMask mask;
  std::vector<int> tokens;
  int t = 1;
  MatrixF eps;
  bool drop_keyframes = false;
};

struct TrainBatch {
  std::vector<TrainSample> samples;
};

struct StepLosses {
  double simple = 0.0;
  double phy = 0.0;
  double total = 0.0;
};

template <class T>
class AdamOptimizer {
 public:
  AdamOptimizer(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(ag::ParameterSet<T>& params, double lr);
  long step_count() const { return t_; }

 private:
  double beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<std::vector<T>> m_, v_;
};

// Scales all gradients so their global L2 norm is at most max_norm; returns
// the norm before clipping.
template <class T>
double clip_grad_norm(ag::ParameterSet<T>& params, double max_norm);

// Per-sample loss on the tape-built prediction; accumulates parameter
// gradients scaled by `weight` when `backward` is set.
template <class T>
StepLosses sample_loss(Denoiser<T>& model, const TrainSample& s, const DiffusionSchedule& sched,
                       const TrainConfig& cfg, const ChannelLayout& layout, const CorpusStats& stats,
                       double weight, bool backward);

// Forward diffusion, masked losses, one optimizer step.
StepLosses train_step(Denoiser<float>& model, const TrainBatch& batch, const DiffusionSchedule& sched,
                      AdamOptimizer<float>& opt, double lr, const TrainConfig& cfg,
                      const ChannelLayout& layout, const CorpusStats& stats);

// Normalized training set plus a deterministic batch sampler.
class BatchSampler {
 public:
  BatchSampler(const Corpus& corpus, const TrainConfig& cfg);
  TrainBatch next();
  const std::vector<MatrixF>& normalized() const { return normalized_; }

 private:
  const Corpus& corpus_;
  TrainConfig cfg_;
  std::vector<MatrixF> normalized_;
  std::mt19937_64 rng_;
};

double learning_rate(const TrainConfig& cfg, int step);

struct TrainLogRow {
  int step;
  StepLosses losses;
};

// Trains `model` in place. `on_step` (optional) is called after every step.
std::vector<TrainLogRow> train(Denoiser<float>& model, const Corpus& corpus, const TrainConfig& cfg,
                               const std::function<void(const TrainLogRow&)>& on_step = {});

}  // namespace kfdiff
