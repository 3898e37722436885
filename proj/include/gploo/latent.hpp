#pragma once

#include <optional>
#include <string>
#include <vector>

#include "gploo/model.hpp"

namespace gploo {

/// One Gaussian pseudo-observation in natural parameters. tau == 0 means
/// "no site" (infinite variance); nu may still be non-zero for a Laplace site
/// whose curvature vanished.
struct SiteTerm {
  double tau = 0.0;  // 1 / site variance
  double nu = 0.0;   // site mean / site variance

  static SiteTerm from_moments(double mean, double var);
  double mean() const;
  double var() const;
};

struct SiteParams {
  VectorXd log_z;
  VectorXd tau;
  VectorXd nu;

  Eigen::Index size() const { return tau.size(); }
  SiteTerm site(Eigen::Index i) const { return {tau(i), nu(i)}; }
  /// Site mean mu~_i and variance Sigma~_i (+inf when tau == 0).
  VectorXd means() const;
  VectorXd variances() const;
};

struct GaussianPosterior {
  VectorXd mean;
  MatrixXd cov;
  VectorXd marginal_var;  // == cov.diagonal()
  double log_marginal = 0.0;

  Gaussian1D marginal(Eigen::Index i) const { return {mean(i), marginal_var(i)}; }
};

struct CavityDistribution {
  double mean = 0.0;
  double var = 1.0;

  Gaussian1D gaussian() const { return {mean, var}; }
};

/// Gaussian approximation N(mu, (K^-1 + T)^-1) with mu = Sigma nu built from
/// prior covariance K and diagonal site precisions T. Negative site
/// precisions are supported as long as the result stays positive definite.
class SiteGaussian {
 public:
  SiteGaussian(const MatrixXd& k, const VectorXd& tau, const VectorXd& nu);

  const VectorXd& mean() const { return mean_; }
  const MatrixXd& cov() const { return cov_; }
  /// K^-1 mu, so that predictive means are k_*^T alpha.
  const VectorXd& alpha() const { return alpha_; }
  /// log det(I + T K).
  double log_det() const { return log_det_; }

  /// Latent predictive distribution at a new input with cross-covariance
  /// `kstar` (length n) and prior variance `kss`.
  Gaussian1D predict(const VectorXd& kstar, double kss) const;

 private:
  bool nonneg_ = true;
  VectorXd sqrt_tau_;
  MatrixXd chol_;                      // L of B = I + S^1/2 K S^1/2
  Eigen::PartialPivLU<MatrixXd> lu_;   // I + T K, general case
  VectorXd tau_;
  VectorXd mean_;
  VectorXd alpha_;
  MatrixXd cov_;
  double log_det_ = 0.0;
};

/// Removes a site from a Gaussian marginal. Throws Error(CavityFailure) when
/// the resulting precision is not positive.
CavityDistribution cavity_remove(const Gaussian1D& marginal, const SiteTerm& site);

// ---------------------------------------------------------------------------
// Laplace

struct LaplaceOptions {
  int max_iter = 100;
  double tol = 1e-8;  // on max_i |g_i - (K^-1 f)_i|
  std::optional<VectorXd> init;  // starting latent values
};

struct LaplaceState {
  VectorXd mode;      // f^
  VectorXd grad;      // d log p(y_i | f_i) at the mode
  VectorXd neg_hess;  // h^_i = -d^2 log p(y_i | f_i) at the mode
  VectorXd alpha;     // K^-1 f^
  GaussianPosterior posterior;
  SiteParams sites;
  std::vector<int> flat_sites;  // h^_i <= 0, treated as "no site"
  int iterations = 0;
  double residual = 0.0;  // max |g - K^-1 f|
};

LaplaceState laplace_fit(const Dataset& data, const MatrixXd& k, const LikelihoodSpec& lik,
                         const LaplaceOptions& opts = {});

/// Leave-one-out cavity from the linear-response form f^_i - v_-i g^_i.
CavityDistribution la_loo_cavity_lr(const LaplaceState& state, Eigen::Index i);

/// Leave-one-out cavity by dividing the site out of the marginal.
CavityDistribution la_loo_cavity_site(const LaplaceState& state, Eigen::Index i);

// ---------------------------------------------------------------------------
// Expectation propagation (parallel updates)

struct EPOptions {
  int max_iter = 200;
  double tol = 1e-6;     // max undamped site-parameter change
  double damping = 0.8;  // initial step size
  double min_step = 1.0 / 64.0;
  int quad_nodes = 33;
  /// Allow negative site precisions; defaults on for non-log-concave models.
  std::optional<bool> robust;
  std::optional<SiteParams> init;
};

struct EPState {
  SiteParams sites;
  GaussianPosterior posterior;
  std::vector<CavityDistribution> cavities;
  VectorXd tilted_log_z0;
  VectorXd tilted_mean;
  VectorXd tilted_var;
  std::vector<int> cavity_failures;
  int iterations = 0;
  bool converged = false;
  double step = 0.0;       // final damping step
  double max_change = 0.0; // last undamped site change
  bool robust = false;
};

EPState ep_fit(const Dataset& data, const MatrixXd& k, const LikelihoodSpec& lik,
               const EPOptions& opts = {});

}  // namespace gploo
