#pragma once

#include <cstdint>

#include "gploo/model.hpp"

namespace gploo::synthetic {

/// Inputs are uniform on [-3, 3]^d; the latent function is
/// sum_j sin(1.5 x_j) / sqrt(d) scaled by `amplitude`.
VectorXd latent_function(const MatrixXd& x, double amplitude = 2.0);

/// Labels in {-1, +1} drawn from Phi(f(x)).
Dataset classification(int n, int d, std::uint64_t seed);

/// y = f(x) + N(0, noise_var).
Dataset regression(int n, int d, std::uint64_t seed, double noise_var = 0.5);

/// y = f(x) + scale * t_nu noise, with roughly 5% gross outliers.
Dataset heavy_tailed(int n, int d, std::uint64_t seed, double scale = 0.3, double nu = 4.0);

/// Log-logistic event times with median exp(f(x)) and shape 2, right-censored
/// by an independent exponential censoring time (about a quarter censored).
Dataset survival(int n, int d, std::uint64_t seed, double shape = 2.0);

}  // namespace gploo::synthetic
