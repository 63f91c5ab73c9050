#pragma once

#include <vector>

#include "kfdiff/matrix.hpp"
#include "kfdiff/motion_data.hpp"

namespace kfdiff {

enum class VarianceKind {
  Posterior,  // beta~_t = beta_t (1 - abar_{t-1}) / (1 - abar_t)
  Beta,       // beta_t
};

// Per-step noise schedule; steps are 1-based, abar(0) == 1.
class DiffusionSchedule {
 public:
  static DiffusionSchedule cosine(int steps);
  // Arbitrary betas in [0, 0.999]; mainly for degenerate test schedules.
  static DiffusionSchedule from_betas(std::vector<double> betas);

  int steps() const { return static_cast<int>(beta_.size()); }
  double beta(int t) const { return beta_[index(t)]; }
  double alpha(int t) const { return alpha_[index(t)]; }
  double alpha_bar(int t) const { return t == 0 ? 1.0 : alpha_bar_[index(t)]; }
  double posterior_variance(int t) const { return sigma2_[index(t)]; }
  double sigma2(int t, VarianceKind kind) const {
    return kind == VarianceKind::Posterior ? posterior_variance(t) : beta(t);
  }
  // posterior mean = c1 * x0_hat + c2 * x_t
  double c1(int t) const { return c1_[index(t)]; }
  double c2(int t) const { return c2_[index(t)]; }

  const std::vector<double>& betas() const { return beta_; }
  const std::vector<double>& alpha_bars() const { return alpha_bar_; }

  static constexpr double kMaxBeta = 0.999;
  static constexpr double kCosineOffset = 0.008;

 private:
  explicit DiffusionSchedule(std::vector<double> betas);
  std::size_t index(int t) const;

  std::vector<double> beta_, alpha_, alpha_bar_, sigma2_, c1_, c2_;
};

// X_t = sqrt(abar_t) X0 + sqrt(1 - abar_t) eps
MatrixF q_sample(const MatrixF& x0, int t, const MatrixF& eps, const DiffusionSchedule& sched);

// Mean of p(X_{t-1} | X_t, X0_hat). t must lie in [1, T].
MatrixF posterior_mean(const MatrixF& x0_hat, const MatrixF& x_t, int t, const DiffusionSchedule& sched);

template <class T>
struct LossValue {
  double value = 0.0;
  Matrix<T> grad;  // d(value) / d(prediction)
};

// Mean squared error over the entries selected by (1 - M). M is the N x D
// binary keyframe mask. Throws PreconditionError when M selects everything.
template <class T>
LossValue<T> simple_loss(const Matrix<T>& x0, const Matrix<T>& x0_hat, const Matrix<T>& mask);

struct PhyLossOptions {
  ChannelLayout layout;
  double lambda_vel = 1.0;
  double lambda_foot = 1.0;
  // When set, x0 is in normalized units and contacts are read after
  // denormalizing; otherwise x0 is taken as raw features.
  const CorpusStats* stats = nullptr;
};

template <class T>
struct PhyLossTerms {
  double position = 0.0;
  double velocity = 0.0;
  double foot = 0.0;
  double total = 0.0;
  Matrix<T> grad;
};

// Kinematic auxiliary loss: masked position MSE + masked first-difference MSE
// (a difference counts when either endpoint is a target entry) + foot-contact
// term (ground-truth contact at both frames x squared predicted foot motion,
// unmasked).
template <class T>
PhyLossTerms<T> phy_loss(const Matrix<T>& x0, const Matrix<T>& x0_hat, const Matrix<T>& mask,
                         const PhyLossOptions& opts);

}  // namespace kfdiff
