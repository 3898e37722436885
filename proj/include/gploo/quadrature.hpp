#pragma once

#include <functional>
#include <vector>

#include "gploo/model.hpp"

namespace gploo {

inline constexpr int kDefaultQuadNodes = 33;

/// Nodes and weights such that sum_k w_k g(x_k) approximates the integral of
/// g against N(center, scale^2). Weights sum to one.
struct QuadratureGrid {
  std::vector<double> nodes;
  std::vector<double> weights;
  double center = 0.0;
  double scale = 1.0;
};

/// Gauss-Hermite rule with `m` nodes (odd, >= 11) recentered on `reference`.
QuadratureGrid adapt_grid(const Gaussian1D& reference, int m = kDefaultQuadNodes);

/// Trapezoid rule on reference.mean +- half_width standard deviations.
QuadratureGrid trapezoid_grid(const Gaussian1D& reference, double half_width,
                              int points);

struct Integral {
  double value = 0.0;
  double max_share = 0.0;  // largest |node contribution| / sum of |contributions|
  int nonfinite = 0;
  bool unstable = false;
};

/// Weighted sum of g over the grid. Flags instability when one node carries
/// more than 90% of the total or any evaluation is non-finite; throws
/// Error(NumericalFailure) when no evaluation is finite.
Integral integrate(const std::function<double(double)>& g, const QuadratureGrid& grid);

struct QuadOptions {
  int nodes = kDefaultQuadNodes;
  double concentration = 0.9;
  double fallback_half_width = 6.0;
  int fallback_points = 2001;
  /// False when the integrand may be skewed or multimodal (non-log-concave
  /// factors); integrate_log then goes straight to the trapezoid grid.
  bool unimodal = true;
  /// Cap on trapezoid points when the span is extended to reach the tails.
  int max_points = 1 << 18;
};

/// Result of integrating exp(log_g) over the real line. `nodes` and
/// `log_weights` describe the normalized density exp(log_g) / integral on the
/// grid actually used, so expectations under it are sum_k exp(lw_k) h(x_k).
struct LogIntegral {
  double log_value = 0.0;
  double max_share = 0.0;
  bool unstable = false;       // Gauss-Hermite pass concentrated or non-finite
  bool fallback_used = false;  // trapezoid grid used instead
  bool tail_dominated = false; // integrand still not decayed at the widest span
  std::vector<double> nodes;
  std::vector<double> log_weights;

  template <class H>
  double expect(H&& h) const {
    double s = 0.0;
    for (std::size_t k = 0; k < nodes.size(); ++k)
      s += std::exp(log_weights[k]) * h(nodes[k]);
    return s;
  }
};

struct LogDensityDerivs {
  double value;
  double d1;
  double d2;
};

/// Newton search for the mode of a log density starting from `start`;
/// returns N(mode, -1/curvature), or `start` when the density is not locally
/// concave at the point reached.
Gaussian1D laplace_reference(const std::function<LogDensityDerivs(double)>& log_g,
                             const Gaussian1D& start);

/// Integral of exp(log_g(f)) df on a Gauss-Hermite grid centred on
/// `reference`. If that pass is unstable (concentrated, non-finite, or with
/// mass on the outermost nodes) the integral is redone on a trapezoid grid.
LogIntegral integrate_log(const std::function<double(double)>& log_g,
                          const Gaussian1D& reference, const QuadOptions& opts = {});

/// Trapezoid rule starting at +-fallback_half_width reference standard
/// deviations with fallback_points points. Each side is extended, at the same
/// spacing, until its boundary term is negligible; an integrand that has not
/// decayed by max_points is reported as tail dominated (possibly divergent).
LogIntegral integrate_log_dense(const std::function<double(double)>& log_g,
                                const Gaussian1D& reference,
                                const QuadOptions& opts = {});

}  // namespace gploo
