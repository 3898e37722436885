#pragma once

#include <span>

namespace gploo {

inline constexpr double kLogTwoPi = 1.8378770664093454836;
inline constexpr double kLogSqrtTwoPi = 0.91893853320467274178;

/// Standard normal density and log density.
double normal_pdf(double z);
double log_normal_pdf(double z);

/// log N(x | mean, var).
double log_gaussian(double x, double mean, double var);

/// Standard normal CDF and its logarithm. The log form stays accurate far
/// into the lower tail where the CDF itself underflows.
double normal_cdf(double z);
double log_normal_cdf(double z);

/// phi(z) / Phi(z), stable for very negative z.
double inverse_mills(double z);

double log1pexp(double x);
double logistic(double x);

double log_sum_exp(std::span<const double> values);

}  // namespace gploo
