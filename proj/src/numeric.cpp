#include "gploo/numeric.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "gploo/error.hpp"

namespace gploo {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidInput: return "invalid-input";
    case ErrorKind::NotPositiveDefinite: return "not-positive-definite";
    case ErrorKind::NumericalFailure: return "numerical-failure";
    case ErrorKind::UnsupportedOperation: return "unsupported-operation";
    case ErrorKind::NonConvergence: return "non-convergence";
    case ErrorKind::CavityFailure: return "cavity-failure";
    case ErrorKind::DegenerateModel: return "degenerate-model";
  }
  return "unknown";
}

double normal_pdf(double z) { return std::exp(log_normal_pdf(z)); }

double log_normal_pdf(double z) { return -kLogSqrtTwoPi - 0.5 * z * z; }

double log_gaussian(double x, double mean, double var) {
  const double r = x - mean;
  return -0.5 * (kLogTwoPi + std::log(var)) - 0.5 * r * r / var;
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

double log_normal_cdf(double z) {
  if (z > -30.0) return std::log(normal_cdf(z));
  // Asymptotic series of the Mills ratio; five terms are exact to double
  // precision for z <= -30.
  const double z2 = z * z;
  const double inv = 1.0 / z2;
  const double series =
      1.0 - inv * (1.0 - 3.0 * inv * (1.0 - 5.0 * inv * (1.0 - 7.0 * inv)));
  return -0.5 * z2 - std::log(-z) - kLogSqrtTwoPi + std::log(series);
}

double inverse_mills(double z) {
  if (z > -30.0) return normal_pdf(z) / normal_cdf(z);
  return std::exp(log_normal_pdf(z) - log_normal_cdf(z));
}

double log1pexp(double x) {
  if (x > 35.0) return x;
  if (x < -35.0) return std::exp(x);
  return std::log1p(std::exp(x));
}

double logistic(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double log_sum_exp(std::span<const double> values) {
  if (values.empty()) return -std::numeric_limits<double>::infinity();
  const double m = *std::max_element(values.begin(), values.end());
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double v : values) s += std::exp(v - m);
  return m + std::log(s);
}

}  // namespace gploo
