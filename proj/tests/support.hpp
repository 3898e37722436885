#pragma once

#include <cmath>
#include <random>

#include "gploo/model.hpp"

namespace testing {

using gploo::Dataset;
using gploo::MatrixXd;
using gploo::VectorXd;

inline MatrixXd random_spd(int n, std::mt19937_64& rng) {
  std::normal_distribution<double> z;
  MatrixXd a(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) a(i, j) = z(rng);
  MatrixXd k = a * a.transpose() / n;
  k.diagonal().array() += 0.5;
  return k;
}

/// 1-D inputs on a grid with labels drawn from a smooth probit function.
inline Dataset probit_data(int n, std::uint64_t seed, double flip = 0.1) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Dataset d;
  d.x.resize(n, 1);
  d.y.resize(n);
  for (int i = 0; i < n; ++i) {
    const double x = -3.0 + 6.0 * (i + 0.5) / n;
    d.x(i, 0) = x;
    const double p = 0.5 * std::erfc(-std::sin(1.5 * x) * 2.0 / std::sqrt(2.0));
    double y = u(rng) < p ? 1.0 : -1.0;
    if (u(rng) < flip) y = -y;
    d.y(i) = y;
  }
  return d;
}

inline Dataset regression_data(int n, std::uint64_t seed, double noise = 0.3) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z;
  Dataset d;
  d.x.resize(n, 1);
  d.y.resize(n);
  for (int i = 0; i < n; ++i) {
    const double x = -3.0 + 6.0 * (i + 0.5) / n;
    d.x(i, 0) = x;
    d.y(i) = std::sin(x) + noise * z(rng);
  }
  return d;
}

/// Trapezoid sum of exp(log_g) on [lo, hi].
template <class F>
double trapezoid(F&& g, double lo, double hi, int points) {
  const double h = (hi - lo) / (points - 1);
  double s = 0.0;
  for (int k = 0; k < points; ++k) s += (k == 0 || k == points - 1 ? 0.5 : 1.0) * g(lo + k * h);
  return s * h;
}

}  // namespace testing
