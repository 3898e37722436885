#include <Eigen/Cholesky>
#include <cmath>
#include <limits>

#include "gploo/error.hpp"
#include "gploo/latent.hpp"

namespace gploo {

SiteTerm SiteTerm::from_moments(double mean, double var) {
  if (std::isinf(var)) return {0.0, 0.0};
  return {1.0 / var, mean / var};
}

double SiteTerm::mean() const {
  if (tau == 0.0) return nu == 0.0 ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), nu);
  return nu / tau;
}

double SiteTerm::var() const {
  return tau == 0.0 ? std::numeric_limits<double>::infinity() : 1.0 / tau;
}

VectorXd SiteParams::means() const {
  VectorXd m(size());
  for (Eigen::Index i = 0; i < size(); ++i) m(i) = site(i).mean();
  return m;
}

VectorXd SiteParams::variances() const {
  VectorXd v(size());
  for (Eigen::Index i = 0; i < size(); ++i) v(i) = site(i).var();
  return v;
}

SiteGaussian::SiteGaussian(const MatrixXd& k, const VectorXd& tau, const VectorXd& nu)
    : tau_(tau) {
  const Eigen::Index n = k.rows();
  if (k.cols() != n || tau.size() != n || nu.size() != n)
    throw Error(ErrorKind::InvalidInput, "site vectors do not match the covariance size");
  if (!tau.allFinite() || !nu.allFinite())
    throw Error(ErrorKind::NumericalFailure, "non-finite site parameters");
  nonneg_ = (tau.array() >= 0.0).all();

  if (nonneg_) {
    sqrt_tau_ = tau.array().sqrt();
    MatrixXd b = sqrt_tau_.asDiagonal() * k * sqrt_tau_.asDiagonal();
    b.diagonal().array() += 1.0;
    Eigen::LLT<MatrixXd> llt(b);
    if (llt.info() != Eigen::Success)
      throw Error(ErrorKind::NotPositiveDefinite, "I + S^1/2 K S^1/2 is not positive definite");
    chol_ = llt.matrixL();
    log_det_ = 2.0 * chol_.diagonal().array().log().sum();
    // V = L^-1 S^1/2 K
    MatrixXd v = sqrt_tau_.asDiagonal() * k;
    chol_.triangularView<Eigen::Lower>().solveInPlace(v);
    cov_ = k;
    cov_.noalias() -= v.transpose() * v;
    const VectorXd kn = k * nu;
    VectorXd t = sqrt_tau_.cwiseProduct(kn);
    llt.solveInPlace(t);
    alpha_ = nu - sqrt_tau_.cwiseProduct(t);
  } else {
    MatrixXd a = tau.asDiagonal() * k;
    a.diagonal().array() += 1.0;
    lu_.compute(a);
    const double det = lu_.determinant();
    if (!(det > 0.0) || !std::isfinite(det))
      throw Error(ErrorKind::NotPositiveDefinite, "I + T K has a non-positive determinant");
    // log|det| from the LU diagonal to avoid overflow.
    log_det_ = lu_.matrixLU().diagonal().array().abs().log().sum();
    // Sigma = (K^-1 + T)^-1 = K (I + T K)^-1
    cov_ = k * lu_.inverse();
    alpha_ = lu_.solve(nu);
  }
  cov_ = 0.5 * (cov_ + cov_.transpose()).eval();
  if (!nonneg_) {
    Eigen::LLT<MatrixXd> check(cov_);
    if (check.info() != Eigen::Success || (cov_.diagonal().array() <= 0.0).any())
      throw Error(ErrorKind::NotPositiveDefinite, "posterior covariance is not positive definite");
  }
  mean_ = k * alpha_;
}

Gaussian1D SiteGaussian::predict(const VectorXd& kstar, double kss) const {
  const double mean = kstar.dot(alpha_);
  double var = 0.0;
  if (nonneg_) {
    VectorXd v = sqrt_tau_.cwiseProduct(kstar);
    chol_.triangularView<Eigen::Lower>().solveInPlace(v);
    var = kss - v.squaredNorm();
  } else {
    // (K + T^-1)^-1 = (I + T K)^-1 T
    const VectorXd t = lu_.solve(tau_.cwiseProduct(kstar));
    var = kss - kstar.dot(t);
  }
  if (!(var > 0.0))
    throw Error(ErrorKind::NumericalFailure, "non-positive predictive variance");
  return {mean, var};
}

CavityDistribution cavity_remove(const Gaussian1D& marginal, const SiteTerm& site) {
  if (!(marginal.var > 0.0))
    throw Error(ErrorKind::InvalidInput, "marginal variance must be positive");
  const double tau = 1.0 / marginal.var - site.tau;
  if (!(tau > 0.0) || !std::isfinite(tau))
    throw Error(ErrorKind::CavityFailure, "cavity precision is not positive");
  const double var = 1.0 / tau;
  return {var * (marginal.mean / marginal.var - site.nu), var};
}

}  // namespace gploo
