#include <Eigen/Cholesky>
#include <cmath>
#include <sstream>

#include "gploo/error.hpp"
#include "gploo/latent.hpp"

namespace gploo {
namespace {

struct Pointwise {
  VectorXd value;
  VectorXd grad;
  VectorXd hess;
};

Pointwise evaluate(const Dataset& data, const VectorXd& f, const LikelihoodSpec& lik) {
  const Eigen::Index n = f.size();
  Pointwise p{VectorXd(n), VectorXd(n), VectorXd(n)};
  for (Eigen::Index i = 0; i < n; ++i) {
    const LogLikDerivs d = loglik(observation(data, i), f(i), lik);
    p.value(i) = d.value;
    p.grad(i) = d.grad;
    p.hess(i) = d.hess;
  }
  return p;
}

double objective(const Dataset& data, const VectorXd& f, const VectorXd& a,
                 const LikelihoodSpec& lik) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < f.size(); ++i) s += loglik_value(observation(data, i), f(i), lik);
  return s - 0.5 * a.dot(f);
}

}  // namespace

LaplaceState laplace_fit(const Dataset& data, const MatrixXd& k, const LikelihoodSpec& lik,
                         const LaplaceOptions& opts) {
  const Eigen::Index n = data.n();
  if (k.rows() != n || k.cols() != n)
    throw Error(ErrorKind::InvalidInput, "covariance size does not match the data");

  VectorXd a = VectorXd::Zero(n);
  VectorXd f = VectorXd::Zero(n);
  if (opts.init) {
    if (opts.init->size() != n) throw Error(ErrorKind::InvalidInput, "initial latent vector has wrong length");
    Eigen::LLT<MatrixXd> llt(k);
    if (llt.info() != Eigen::Success)
      throw Error(ErrorKind::NotPositiveDefinite, "prior covariance is not positive definite");
    a = llt.solve(*opts.init);
    f = k * a;
  }

  std::ostringstream trace;
  double psi = objective(data, f, a, lik);
  Pointwise p = evaluate(data, f, lik);
  double residual = (p.grad - a).cwiseAbs().maxCoeff();
  int it = 0;
  while (residual >= opts.tol) {
    if (it >= opts.max_iter) {
      throw Error(ErrorKind::NonConvergence,
                  "Laplace Newton iteration did not converge in " + std::to_string(opts.max_iter) +
                      " iterations; residual trace:" + trace.str());
    }
    ++it;
    // Newton step with negative curvatures clipped so K^-1 + W stays SPD.
    const VectorXd w = (-p.hess).cwiseMax(0.0);
    const VectorXd sw = w.cwiseSqrt();
    MatrixXd bmat = sw.asDiagonal() * k * sw.asDiagonal();
    bmat.diagonal().array() += 1.0;
    Eigen::LLT<MatrixXd> llt(bmat);
    if (llt.info() != Eigen::Success)
      throw Error(ErrorKind::NumericalFailure, "Newton system is not positive definite");
    const VectorXd b = w.cwiseProduct(f) + p.grad;
    const VectorXd kb = k * b;
    const VectorXd a_new = b - sw.cwiseProduct(llt.solve(sw.cwiseProduct(kb)));
    const VectorXd da = a_new - a;

    double t = 1.0;
    bool accepted = false;
    VectorXd a_try;
    VectorXd f_try;
    double psi_try = 0.0;
    for (int bt = 0; bt < 40; ++bt) {
      a_try = a + t * da;
      f_try = k * a_try;
      psi_try = objective(data, f_try, a_try, lik);
      if (std::isfinite(psi_try) && psi_try >= psi - 1e-12 * std::abs(psi)) {
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    if (!accepted) {
      throw Error(ErrorKind::NonConvergence,
                  "Laplace line search failed after backoff; residual trace:" + trace.str());
    }
    a = a_try;
    f = f_try;
    psi = psi_try;
    p = evaluate(data, f, lik);
    residual = (p.grad - a).cwiseAbs().maxCoeff();
    trace << ' ' << residual;
    if (t * da.cwiseAbs().maxCoeff() < 1e-15 * (1.0 + a.cwiseAbs().maxCoeff()) && residual >= opts.tol) {
      throw Error(ErrorKind::NonConvergence,
                  "Laplace iteration stalled; residual trace:" + trace.str());
    }
  }

  LaplaceState st;
  st.mode = f;
  st.grad = p.grad;
  st.neg_hess = -p.hess;
  st.alpha = a;
  st.iterations = it;
  st.residual = residual;

  st.sites.tau.resize(n);
  st.sites.nu.resize(n);
  st.sites.log_z.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double h = st.neg_hess(i);
    if (!(h > 0.0)) st.flat_sites.push_back(static_cast<int>(i));
    const double tau = h > 0.0 ? h : 0.0;
    st.sites.tau(i) = tau;
    st.sites.nu(i) = tau * f(i) + p.grad(i);
    // Site scaled to touch the likelihood at the mode.
    if (tau > 0.0) {
      const double m = st.sites.nu(i) / tau;
      st.sites.log_z(i) = p.value(i) + 0.5 * (std::log(2.0 * M_PI / tau)) + 0.5 * tau * (f(i) - m) * (f(i) - m);
    } else {
      st.sites.log_z(i) = p.value(i) - p.grad(i) * f(i);
    }
  }

  const SiteGaussian approx(k, st.sites.tau, st.sites.nu);
  st.posterior.mean = f;
  st.posterior.cov = approx.cov();
  st.posterior.marginal_var = approx.cov().diagonal();
  st.posterior.log_marginal = p.value.sum() - 0.5 * a.dot(f) - 0.5 * approx.log_det();
  return st;
}

CavityDistribution la_loo_cavity_lr(const LaplaceState& state, Eigen::Index i) {
  const double s = state.posterior.marginal_var(i);
  const double tau = 1.0 / s - state.sites.tau(i);
  if (!(tau > 0.0) || !std::isfinite(tau))
    throw Error(ErrorKind::CavityFailure, "cavity precision is not positive");
  const double v = 1.0 / tau;
  return {state.mode(i) - v * state.grad(i), v};
}

CavityDistribution la_loo_cavity_site(const LaplaceState& state, Eigen::Index i) {
  return cavity_remove(state.posterior.marginal(i), state.sites.site(i));
}

}  // namespace gploo
