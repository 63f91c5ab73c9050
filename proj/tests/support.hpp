#pragma once

#include <cmath>
#include <functional>
#include <random>

#include "kfdiff/matrix.hpp"

namespace kfdiff::test {

template <class T>
Matrix<T> random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  Matrix<T> m(r, c);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = static_cast<T>(g(rng));
  return m;
}

inline double max_abs_diff(const MatrixD& a, const MatrixD& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

template <class T>
double max_abs(const Matrix<T>& a) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, static_cast<double>(std::abs(a[i])));
  return m;
}

// Relative error with an absolute floor so that tiny gradients compare sanely.
inline double rel_err(double a, double b, double floor = 1e-8) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

// Central finite differences of f at x, one entry at a time.
inline MatrixD numeric_grad(const std::function<double(const MatrixD&)>& f, MatrixD x, double h = 1e-6) {
  MatrixD g(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = f(x);
    x[i] = keep - h;
    const double down = f(x);
    x[i] = keep;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

}  // namespace kfdiff::test
