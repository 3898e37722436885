#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

namespace gploo {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// ---------------------------------------------------------------------------
// Data

struct Dataset {
  MatrixXd x;  // n x d covariates
  VectorXd y;  // outcomes: +-1 for probit, positive times for survival
  std::optional<std::vector<bool>> censored;

  Eigen::Index n() const { return x.rows(); }
  Eigen::Index d() const { return x.cols(); }

  /// Copy of the dataset without row `i`.
  Dataset without(Eigen::Index i) const;
};

/// Reads a CSV with a header row naming x1..xd, y and an optional cens
/// column (0/1). Throws Error(InvalidInput) with the offending line number.
Dataset load_csv(const std::string& path);
Dataset parse_csv(const std::string& text);

// ---------------------------------------------------------------------------
// Covariance functions

enum class KernelKind { Constant, Linear, SquaredExponential };

const char* to_string(KernelKind kind);
KernelKind kernel_kind_from_string(const std::string& name);

/// One additive term of a covariance function. Magnitudes are variances and
/// all parameters are stored on the log scale.
struct KernelTerm {
  KernelKind kind = KernelKind::SquaredExponential;
  double log_magnitude = 0.0;
  VectorXd log_length_scales;  // SE only; length 1 (shared) or d (per dim)
};

struct KernelSpec {
  std::vector<KernelTerm> terms;
  /// Starting jitter relative to the mean diagonal of the covariance.
  double jitter = 1e-10;

  static KernelSpec squared_exponential(double log_magnitude,
                                        VectorXd log_length_scales);
};

/// k(x1_i, x2_j) without any jitter.
MatrixXd cross_covariance(const MatrixXd& x1, const MatrixXd& x2,
                          const KernelSpec& kernel);

/// Prior covariance of the latent values with jitter on the diagonal. The
/// jitter starts at `kernel.jitter` times the mean diagonal and is escalated
/// tenfold up to 1e-4 until the Cholesky factorization succeeds.
MatrixXd build_covariance(const MatrixXd& x, const KernelSpec& kernel);

// ---------------------------------------------------------------------------
// Observation models

enum class LikelihoodKind { Gaussian, Probit, StudentT, LogLogisticCensored };

const char* to_string(LikelihoodKind kind);
LikelihoodKind likelihood_kind_from_string(const std::string& name);

/// `log_param` is log sigma^2 (gaussian), log scale (student-t) or log shape
/// (log-logistic); probit has no parameter. `nu` is fixed, never inferred.
struct LikelihoodSpec {
  LikelihoodKind kind = LikelihoodKind::Gaussian;
  double log_param = 0.0;
  double nu = 4.0;

  bool has_param() const { return kind != LikelihoodKind::Probit; }
  bool log_concave() const { return kind != LikelihoodKind::StudentT; }
  bool continuous() const { return kind != LikelihoodKind::Probit; }

  static LikelihoodSpec gaussian(double sigma2);
  static LikelihoodSpec probit();
  static LikelihoodSpec student_t(double scale, double nu = 4.0);
  static LikelihoodSpec log_logistic(double shape);
};

/// A single observation as seen by the likelihood.
struct Observation {
  double y = 0.0;
  bool censored = false;
};

Observation observation(const Dataset& data, Eigen::Index i);

/// Checks the dataset against the observation model's support.
void validate(const Dataset& data, const LikelihoodSpec& lik);

struct LogLikDerivs {
  double value;
  double grad;  // d/df
  double hess;  // d^2/df^2
};

/// log p(y | f) and its first two derivatives with respect to f.
LogLikDerivs loglik(const Observation& obs, double f, const LikelihoodSpec& lik);
double loglik_value(const Observation& obs, double f, const LikelihoodSpec& lik);

struct Gaussian1D {
  double mean = 0.0;
  double var = 1.0;
};

struct TiltedMoments {
  double log_z0;  // log of the zeroth moment
  double mean;
  double var;
};

/// Moments of N(f | cavity) p(y | f). Closed form for gaussian and probit,
/// adaptive quadrature otherwise.
TiltedMoments likelihood_moments(const Observation& obs, const Gaussian1D& cavity,
                                 const LikelihoodSpec& lik, int nodes = 33);

/// Predictive CDF P(Y <= y) when f ~ N(marginal). Continuous likelihoods only.
double predictive_cdf(double y, const Gaussian1D& marginal,
                      const LikelihoodSpec& lik, int nodes = 33);

}  // namespace gploo
