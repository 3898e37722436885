#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gploo/latent.hpp"
#include "gploo/quadrature.hpp"

namespace gploo {

struct PointFailure {
  int index = 0;
  std::string reason;
};

/// Per-point and aggregate leave-one-out log predictive densities. Failed
/// points carry NaN in `lpd` and an entry in `failures`; points whose value
/// was computed but is numerically suspect are listed in `unstable`.
struct LooReport {
  std::string method;
  VectorXd lpd;
  double sum_lpd = 0.0;  // over points that did not fail
  VectorXd cpo;
  std::optional<VectorXd> pit;
  std::optional<double> p_eff;
  std::vector<PointFailure> failures;
  std::vector<int> unstable;
  std::vector<std::string> warnings;

  Eigen::Index n() const { return lpd.size(); }
  bool failed(Eigen::Index i) const;
};

/// Builds a report from per-point values, filling cpo and sum_lpd.
LooReport make_report(std::string method, VectorXd lpd, std::vector<PointFailure> failures = {});

// ---------------------------------------------------------------------------
// Marginal posteriors used by the quadrature estimators

/// A latent marginal: either the Gaussian `base` itself or, when `tilted`,
/// the density proportional to N(f | base) p(y_i | f).
struct LatentMarginal {
  Gaussian1D base;
  bool tilted = false;
  std::string failure;  // non-empty when the marginal could not be formed

  bool valid() const { return failure.empty(); }
};

std::vector<LatentMarginal> gaussian_marginals(const GaussianPosterior& post);
/// LA-L: Laplace cavity (linear-response route) times the likelihood.
std::vector<LatentMarginal> tilted_marginals(const LaplaceState& state);
/// EP-L: EP cavity times the likelihood.
std::vector<LatentMarginal> tilted_marginals(const EPState& state);

/// log E_q[p(y_i | f_i)] for each marginal (the training log predictive density).
VectorXd training_lpd(const std::vector<LatentMarginal>& marginals, const Dataset& data,
                      const LikelihoodSpec& lik, const QuadOptions& quad = {});

// ---------------------------------------------------------------------------
// Estimators

struct GaussianLooResult {
  VectorXd mean;    // mu_-i
  VectorXd var;     // v_-i
  VectorXd g;       // [(K + s2 I)^-1 y]_i
  VectorXd c_diag;  // diag[(K + s2 I)^-1]
  VectorXd lpd;
};

/// Closed-form leave-one-out for the Gaussian observation model.
GaussianLooResult gaussian_exact_loo(const MatrixXd& k, double sigma2, const VectorXd& y);
LooReport to_report(const GaussianLooResult& r, const VectorXd& y, double sigma2);

/// EP-LOO: log of the stored tilted zeroth moments.
LooReport ep_loo(const EPState& state, const Dataset& data, const LikelihoodSpec& lik);

enum class CavityRoute { SiteRemoval, LinearResponse };

/// LA-LOO: likelihood integrated against the Laplace leave-one-out cavity.
LooReport la_loo(const LaplaceState& state, const Dataset& data, const LikelihoodSpec& lik,
                 CavityRoute route = CavityRoute::LinearResponse, const QuadOptions& quad = {});

/// Q-LOO: -log of the integral of q(f_i) / p(y_i | f_i).
LooReport q_loo(const std::vector<LatentMarginal>& marginals, const Dataset& data,
                const LikelihoodSpec& lik, const QuadOptions& quad = {});

struct TruncationConfig {
  double c0 = 1e-4;
  double half_width = 6.0;  // posterior standard deviations on each side
  /// Overrides the adaptive truncation level (0 disables truncation).
  std::optional<double> fixed_c;
};

/// TQ-LOO: quadrature with weights 1 / max(p(y_i | f), c).
LooReport tq_loo(const std::vector<LatentMarginal>& marginals, const Dataset& data,
                 const LikelihoodSpec& lik, const TruncationConfig& cfg = {},
                 const QuadOptions& quad = {});

enum class WaicVariant { G, V };

/// Per-point WAIC terms on the log-density scale:
/// G: 2 E[log p] - log E[p];  V: log E[p] - Var[log p].
LooReport waic(const std::vector<LatentMarginal>& marginals, const Dataset& data,
               const LikelihoodSpec& lik, WaicVariant variant, const QuadOptions& quad = {});

inline constexpr int kMaxCumulantOrder = 6;

/// Cumulants of log p(y_i | f_i) under each marginal (derivatives of the
/// per-point generating function at zero) and log E[p] (its value at one).
struct CumulantSeries {
  MatrixXd cumulants;  // n x order; column j holds the (j+1)-th cumulant
  VectorXd f_one;
};

struct CumulantLoo {
  CumulantSeries series;
  LooReport report;
};

/// Partial sums of LOO = k1 - k2/2 + k3/6 - ... up to `order` terms.
CumulantLoo cumulant_series_loo(const std::vector<LatentMarginal>& marginals,
                                const Dataset& data, const LikelihoodSpec& lik, int order,
                                const QuadOptions& quad = {});

// ---------------------------------------------------------------------------
// Brute-force oracle

enum class InferenceMethod { Laplace, EP };

const char* to_string(InferenceMethod m);
InferenceMethod inference_from_string(const std::string& name);

struct BruteForceOptions {
  int threads = 1;
  /// Full-data fit used to warm start every fold (optional).
  const LaplaceState* laplace_warm = nullptr;
  const EPState* ep_warm = nullptr;
  EPOptions ep;
  LaplaceOptions laplace;
};

/// Refits the latent approximation without each point in `indices` (all
/// points when empty) and evaluates the predictive density at the held-out
/// observation. Folds that fail are reported, not thrown.
LooReport brute_force_loo(const Dataset& data, const MatrixXd& k, const LikelihoodSpec& lik,
                          InferenceMethod method, std::span<const int> indices = {},
                          const BruteForceOptions& opts = {});

// ---------------------------------------------------------------------------
// Comparison and diagnostics

enum class StdNormalization {
  PerPointMean,  // (delta_i - bias / n)^2
  TotalBias,     // (delta_i - bias)^2, the literal printed form
};

struct ComparisonStats {
  double bias = 0.0;
  double std = 0.0;
  VectorXd delta;            // NaN where excluded
  std::vector<int> excluded;  // failed in either report
  int n_compared = 0;
};

ComparisonStats compare(const LooReport& reference, const LooReport& candidate,
                        StdNormalization norm = StdNormalization::PerPointMean);

struct Diagnostics {
  double p_eff = 0.0;
  double p_eff_over_n = 0.0;
  VectorXd p_eff_i;
  std::vector<std::string> warnings;
  std::vector<int> flagged_points;
};

/// True for estimators exempt from the p_eff/n reliability rule.
bool is_cavity_method(const std::string& method);

Diagnostics diagnostics(const LooReport& report, const VectorXd& training_lpd);

}  // namespace gploo
