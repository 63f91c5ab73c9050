#include "kfdiff/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace kfdiff {

DiffusionSchedule::DiffusionSchedule(std::vector<double> betas) : beta_(std::move(betas)) {
  const std::size_t n = beta_.size();
  if (n == 0) throw ConfigError("diffusion schedule needs T >= 1");
  alpha_.resize(n);
  alpha_bar_.resize(n);
  sigma2_.resize(n);
  c1_.resize(n);
  c2_.resize(n);
  double prev = 1.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double b = beta_[i];
    if (!(b >= 0.0 && b <= kMaxBeta)) throw ConfigError("beta outside [0, 0.999]");
    alpha_[i] = 1.0 - b;
    alpha_bar_[i] = prev * alpha_[i];
    const double one_minus = 1.0 - alpha_bar_[i];
    if (one_minus > 0.0) {
      sigma2_[i] = b * (1.0 - prev) / one_minus;
      c1_[i] = std::sqrt(prev) * b / one_minus;
      c2_[i] = std::sqrt(alpha_[i]) * (1.0 - prev) / one_minus;
    } else {
      // abar_t == 1: nothing has been noised, the posterior is the estimate.
      sigma2_[i] = 0.0;
      c1_[i] = 1.0;
      c2_[i] = 0.0;
    }
    prev = alpha_bar_[i];
  }
}

DiffusionSchedule DiffusionSchedule::cosine(int steps) {
  if (steps < 1) throw ConfigError("diffusion steps T must be >= 1");
  auto f = [steps](double t) {
    const double x = (t / steps + kCosineOffset) / (1.0 + kCosineOffset) * std::numbers::pi / 2.0;
    return std::cos(x) * std::cos(x);
  };
  const double f0 = f(0.0);
  std::vector<double> betas(steps);
  for (int t = 1; t <= steps; ++t) {
    const double prev = f(t - 1.0) / f0;
    const double cur = f(static_cast<double>(t)) / f0;
    betas[t - 1] = std::min(1.0 - cur / prev, kMaxBeta);
  }
  return DiffusionSchedule(std::move(betas));
}

DiffusionSchedule DiffusionSchedule::from_betas(std::vector<double> betas) {
  return DiffusionSchedule(std::move(betas));
}

std::size_t DiffusionSchedule::index(int t) const {
  if (t < 1 || t > steps())
    throw RangeError("diffusion step " + std::to_string(t) + " outside [1, " + std::to_string(steps()) + "]");
  return static_cast<std::size_t>(t - 1);
}

MatrixF q_sample(const MatrixF& x0, int t, const MatrixF& eps, const DiffusionSchedule& sched) {
  require_same_shape(x0, eps, "q_sample");
  if (t < 1 || t > sched.steps())
    throw RangeError("q_sample: step " + std::to_string(t) + " outside [1, " + std::to_string(sched.steps()) + "]");
  const double ab = sched.alpha_bar(t);
  const double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
  MatrixF out(x0.rows(), x0.cols());
  for (std::size_t i = 0; i < x0.size(); ++i)
    out[i] = static_cast<float>(a * x0[i] + b * eps[i]);
  return out;
}

MatrixF posterior_mean(const MatrixF& x0_hat, const MatrixF& x_t, int t, const DiffusionSchedule& sched) {
  require_same_shape(x0_hat, x_t, "posterior_mean");
  const double c1 = sched.c1(t), c2 = sched.c2(t);
  MatrixF out(x_t.rows(), x_t.cols());
  for (std::size_t i = 0; i < x_t.size(); ++i)
    out[i] = static_cast<float>(c1 * x0_hat[i] + c2 * x_t[i]);
  return out;
}

template <class T>
LossValue<T> simple_loss(const Matrix<T>& x0, const Matrix<T>& x0_hat, const Matrix<T>& mask) {
  require_same_shape(x0, x0_hat, "simple_loss");
  require_same_shape(x0, mask, "simple_loss mask");
  double count = 0.0;
  for (std::size_t i = 0; i < mask.size(); ++i) count += 1.0 - static_cast<double>(mask[i]);
  if (count <= 0.0) throw PreconditionError("simple_loss: mask has no target entries");
  LossValue<T> r{0.0, Matrix<T>(x0.rows(), x0.cols())};
  double sum = 0.0;
  for (std::size_t i = 0; i < x0.size(); ++i) {
    const double w = 1.0 - static_cast<double>(mask[i]);
    if (w == 0.0) continue;
    const double d = static_cast<double>(x0_hat[i]) - static_cast<double>(x0[i]);
    sum += w * d * d;
    r.grad[i] = static_cast<T>(2.0 * w * d / count);
  }
  r.value = sum / count;
  return r;
}

template <class T>
PhyLossTerms<T> phy_loss(const Matrix<T>& x0, const Matrix<T>& x0_hat, const Matrix<T>& mask,
                         const PhyLossOptions& opts) {
  require_same_shape(x0, x0_hat, "phy_loss");
  require_same_shape(x0, mask, "phy_loss mask");
  const auto& layout = opts.layout;
  if (static_cast<int>(x0.cols()) != layout.dim()) throw ShapeError("phy_loss: channel layout mismatch");
  const std::size_t n = x0.rows(), dim = x0.cols();
  const int pos = layout.position_channels();

  PhyLossTerms<T> r;
  r.grad = Matrix<T>(n, dim);
  std::vector<double> g(n * dim, 0.0);

  // positions
  double wsum = 0.0, sum = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (int c = 0; c < pos; ++c) wsum += 1.0 - static_cast<double>(mask(i, c));
  if (wsum > 0.0) {
    for (std::size_t i = 0; i < n; ++i)
      for (int c = 0; c < pos; ++c) {
        const double w = 1.0 - static_cast<double>(mask(i, c));
        const double d = static_cast<double>(x0_hat(i, c)) - static_cast<double>(x0(i, c));
        sum += w * d * d;
        g[i * dim + c] += 2.0 * w * d / wsum;
      }
    r.position = sum / wsum;
  }

  // first differences, counted when either endpoint is a target entry
  if (n >= 2) {
    wsum = 0.0;
    sum = 0.0;
    auto weight = [&](std::size_t i, std::size_t c) {
      return (mask(i, c) == T(0) || mask(i + 1, c) == T(0)) ? 1.0 : 0.0;
    };
    for (std::size_t i = 0; i + 1 < n; ++i)
      for (std::size_t c = 0; c < dim; ++c) wsum += weight(i, c);
    if (wsum > 0.0) {
      const double scale = opts.lambda_vel * 2.0 / wsum;
      for (std::size_t i = 0; i + 1 < n; ++i)
        for (std::size_t c = 0; c < dim; ++c) {
          const double w = weight(i, c);
          if (w == 0.0) continue;
          const double vp = static_cast<double>(x0_hat(i + 1, c)) - static_cast<double>(x0_hat(i, c));
          const double vg = static_cast<double>(x0(i + 1, c)) - static_cast<double>(x0(i, c));
          const double d = vp - vg;
          sum += d * d;
          g[(i + 1) * dim + c] += scale * d;
          g[i * dim + c] -= scale * d;
        }
      r.velocity = sum / wsum;
    }

    // foot contact
    auto contact = [&](std::size_t i, int f) {
      const int ch = layout.contact_begin() + f;
      double v = static_cast<double>(x0(i, ch));
      if (opts.stats) v = v * opts.stats->std[ch] + opts.stats->mean[ch];
      return std::clamp(v, 0.0, 1.0);
    };
    const double denom = static_cast<double>(n - 1) * layout.contact_count();
    sum = 0.0;
    const double scale = opts.lambda_foot * 2.0 / denom;
    for (std::size_t i = 0; i + 1 < n; ++i)
      for (int f = 0; f < layout.contact_count(); ++f) {
        const double w = contact(i, f) * contact(i + 1, f);
        if (w == 0.0) continue;
        const int base = 3 * layout.foot_joints[f];
        for (int k = 0; k < 3; ++k) {
          const double v = static_cast<double>(x0_hat(i + 1, base + k)) - static_cast<double>(x0_hat(i, base + k));
          sum += w * v * v;
          g[(i + 1) * dim + base + k] += scale * w * v;
          g[i * dim + base + k] -= scale * w * v;
        }
      }
    r.foot = sum / denom;
  }

  r.total = r.position + opts.lambda_vel * r.velocity + opts.lambda_foot * r.foot;
  for (std::size_t i = 0; i < g.size(); ++i) r.grad[i] = static_cast<T>(g[i]);
  return r;
}

template LossValue<float> simple_loss(const Matrix<float>&, const Matrix<float>&, const Matrix<float>&);
template LossValue<double> simple_loss(const Matrix<double>&, const Matrix<double>&, const Matrix<double>&);
template PhyLossTerms<float> phy_loss(const Matrix<float>&, const Matrix<float>&, const Matrix<float>&,
                                      const PhyLossOptions&);
template PhyLossTerms<double> phy_loss(const Matrix<double>&, const Matrix<double>&, const Matrix<double>&,
                                       const PhyLossOptions&);

}  // namespace kfdiff
