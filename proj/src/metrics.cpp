#include "kfdiff/metrics.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "kfdiff/errors.hpp"

namespace kfdiff {

namespace {

double row_distance(const MatrixF& a, std::size_t ra, const MatrixF& b, std::size_t rb) {
  double sq = 0.0;
  for (std::size_t c = 0; c < a.cols(); ++c) {
    const double d = static_cast<double>(a(ra, c)) - static_cast<double>(b(rb, c));
    sq += d * d;
  }
  return std::sqrt(sq);
}

void check_indices(const MatrixF& gen, const MatrixF& keyframes, std::span<const int> indices, const char* what) {
  require_same_shape(gen, keyframes, what);
  if (indices.empty()) throw InputError(std::string(what) + ": no keyframes");
  for (int i : indices)
    if (i < 0 || static_cast<std::size_t>(i) >= gen.rows())
      throw RangeError(std::string(what) + ": keyframe index " + std::to_string(i) + " out of range");
}

}  // namespace

double ade(const MatrixF& gt, std::span<const MatrixF> samples, const KeyframeMask& mask) {
  if (samples.empty()) throw InputError("ade: empty sample list");
  if (mask.frames() != gt.rows()) throw ShapeError("ade: mask length != frames");
  double best = std::numeric_limits<double>::infinity();
  for (const MatrixF& s : samples) {
    require_same_shape(gt, s, "ade");
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < gt.rows(); ++i) {
      if (mask.rows[i]) continue;
      total += row_distance(gt, i, s, i);
      ++count;
    }
    if (count == 0) throw InputError("ade: every frame is a keyframe");
    best = std::min(best, total / static_cast<double>(count));
  }
  return best;
}

double k_err(const MatrixF& gen, const MatrixF& keyframes, std::span<const int> indices) {
  check_indices(gen, keyframes, indices, "k_err");
  double total = 0.0;
  for (int i : indices) total += row_distance(gen, i, keyframes, i);
  return total / static_cast<double>(indices.size());
}

double k_trans(const MatrixF& gen, const MatrixF& keyframes, std::span<const int> indices) {
  check_indices(gen, keyframes, indices, "k_trans");
  const std::size_t n = gen.rows();
  double total = 0.0;
  for (int i : indices) {
    double sum = 0.0;
    int sides = 0;
    if (i > 0) sum += row_distance(keyframes, i, gen, i - 1), ++sides;
    if (static_cast<std::size_t>(i) + 1 < n) sum += row_distance(gen, i + 1, keyframes, i), ++sides;
    if (sides > 0) total += sum / sides;
  }
  return total / static_cast<double>(indices.size());
}

double diversity(std::span<const MatrixF> samples, int pair_count, std::uint64_t seed) {
  if (samples.size() < 2) throw InputError("diversity: needs >= 2 samples");
  if (pair_count < 1) throw ConfigError("diversity: pair_count must be >= 1");
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t half = samples.size() / 2;
  double total = 0.0;
  for (int p = 0; p < pair_count; ++p) {
    const MatrixF& a = samples[order[p % half]];
    const MatrixF& b = samples[order[half + p % half]];
    // Motions of different lengths are compared on their common prefix.
    const std::size_t rows = std::min(a.rows(), b.rows());
    if (a.cols() != b.cols()) throw ShapeError("diversity: channel count mismatch");
    double sum = 0.0;
    for (std::size_t i = 0; i < rows; ++i) sum += row_distance(a, i, b, i);
    total += sum / static_cast<double>(rows);
  }
  return total / pair_count;
}

std::vector<double> motion_features(const MatrixF& m) {
  const std::size_t n = m.rows(), d = m.cols();
  if (n < 3) throw InputError("motion_features: needs >= 3 frames");
  std::vector<double> f(2 * d + 2, 0.0);
  for (std::size_t c = 0; c < d; ++c) {
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += m(i, c);
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) var += (m(i, c) - mean) * (m(i, c) - mean);
    f[c] = mean;
    f[d + c] = std::sqrt(var / static_cast<double>(n));
  }
  double speed = 0.0, accel = 0.0;
  for (std::size_t i = 1; i < n; ++i) {
    double sq = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      const double v = static_cast<double>(m(i, c)) - m(i - 1, c);
      sq += v * v;
    }
    speed += std::sqrt(sq);
  }
  for (std::size_t i = 1; i + 1 < n; ++i) {
    double sq = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      const double a = static_cast<double>(m(i + 1, c)) - 2.0 * m(i, c) + m(i - 1, c);
      sq += a * a;
    }
    accel += std::sqrt(sq);
  }
  f[2 * d] = speed / static_cast<double>(n - 1);
  f[2 * d + 1] = accel / static_cast<double>(n - 2);
  return f;
}

namespace {

void fit_gaussian(const MatrixD& x, Eigen::VectorXd& mu, Eigen::MatrixXd& cov) {
  const Eigen::Index n = static_cast<Eigen::Index>(x.rows()), d = static_cast<Eigen::Index>(x.cols());
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> m(x.data(), n, d);
  mu = m.colwise().mean().transpose();
  const Eigen::MatrixXd centered = m.rowwise() - mu.transpose();
  cov = centered.transpose() * centered / static_cast<double>(n - 1);
}

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& a) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (a + a.transpose()));
  const Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

double frechet_distance(const MatrixD& a, const MatrixD& b) {
  if (a.rows() < 2 || b.rows() < 2) throw InputError("frechet_distance: each set needs >= 2 items");
  if (a.cols() != b.cols()) throw ShapeError("frechet_distance: feature dimension mismatch");
  Eigen::VectorXd mu_a, mu_b;
  Eigen::MatrixXd cov_a, cov_b;
  fit_gaussian(a, mu_a, cov_a);
  fit_gaussian(b, mu_b, cov_b);
  // Tr (S_a S_b)^{1/2} = Tr (S_a^{1/2} S_b S_a^{1/2})^{1/2}, symmetric and PSD.
  const Eigen::MatrixXd sa = psd_sqrt(cov_a);
  const Eigen::MatrixXd cross = psd_sqrt(sa * cov_b * sa);
  const double fd = (mu_a - mu_b).squaredNorm() + cov_a.trace() + cov_b.trace() - 2.0 * cross.trace();
  return std::max(0.0, fd);
}

double frechet_feature_distance(std::span<const MatrixF> a, std::span<const MatrixF> b) {
  auto features = [](std::span<const MatrixF> set) {
    if (set.empty()) throw InputError("frechet_feature_distance: empty set");
    const std::vector<double> first = motion_features(set[0]);
    MatrixD out(set.size(), first.size());
    for (std::size_t i = 0; i < set.size(); ++i) {
      const std::vector<double> f = i == 0 ? first : motion_features(set[i]);
      if (f.size() != first.size()) throw ShapeError("frechet_feature_distance: channel count mismatch");
      std::copy(f.begin(), f.end(), out.row(i).begin());
    }
    return out;
  };
  return frechet_distance(features(a), features(b));
}

}  // namespace kfdiff
