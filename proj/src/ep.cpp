#include <algorithm>
#include <cmath>
#include <limits>

#include "gploo/error.hpp"
#include "gploo/latent.hpp"

namespace gploo {
namespace {

constexpr double kMinCavityPrecision = 1e-8;

struct Sweep {
  VectorXd tau_cav;
  VectorXd nu_cav;
  VectorXd log_z0;
  VectorXd m1;
  VectorXd m2;
  VectorXd tau_new;
  VectorXd nu_new;
  std::vector<int> failures;
  double max_change = 0.0;
};

// Cavities, tilted moments and proposed (undamped) sites for every point.
Sweep sweep(const Dataset& data, const LikelihoodSpec& lik, const SiteGaussian& post,
            const VectorXd& tau, const VectorXd& nu, bool robust, int nodes) {
  const Eigen::Index n = tau.size();
  Sweep s{VectorXd(n), VectorXd(n), VectorXd(n), VectorXd(n), VectorXd(n), tau, nu, {}, 0.0};
  for (Eigen::Index i = 0; i < n; ++i) {
    const double var = post.cov()(i, i);
    const double mu = post.mean()(i);
    double tc = 1.0 / var - tau(i);
    double nc = mu / var - nu(i);
    if (!(tc > 0.0)) {
      s.failures.push_back(static_cast<int>(i));
      if (!robust) {
        s.tau_cav(i) = std::numeric_limits<double>::quiet_NaN();
        s.nu_cav(i) = std::numeric_limits<double>::quiet_NaN();
        s.log_z0(i) = s.m1(i) = s.m2(i) = std::numeric_limits<double>::quiet_NaN();
        continue;
      }
      tc = kMinCavityPrecision;
      nc = mu * tc;
    } else if (robust && tc < kMinCavityPrecision) {
      nc *= kMinCavityPrecision / tc;
      tc = kMinCavityPrecision;
    }
    s.tau_cav(i) = tc;
    s.nu_cav(i) = nc;
    const TiltedMoments m =
        likelihood_moments(observation(data, i), {nc / tc, 1.0 / tc}, lik, nodes);
    s.log_z0(i) = m.log_z0;
    s.m1(i) = m.mean;
    s.m2(i) = m.var;
    double t_new = 1.0 / m.var - tc;
    if (!robust && t_new < 0.0) t_new = 0.0;
    s.tau_new(i) = t_new;
    s.nu_new(i) = m.mean / m.var - nc;
    s.max_change = std::max({s.max_change, std::abs(t_new - tau(i)), std::abs(s.nu_new(i) - nu(i))});
  }
  return s;
}

double log_z_ep(const SiteGaussian& post, const VectorXd& tau, const VectorXd& nu,
                const Sweep& s) {
  double lz = post.log_det() * -0.5;
  lz += 0.5 * nu.dot(post.cov() * nu);
  for (Eigen::Index i = 0; i < tau.size(); ++i) {
    const double tc = s.tau_cav(i);
    const double nc = s.nu_cav(i);
    if (!std::isfinite(tc)) continue;
    lz += s.log_z0(i);
    lz += 0.5 * nc * ((tau(i) / tc) * nc - 2.0 * nu(i)) / (tau(i) + tc);
    lz -= 0.5 * nu(i) * nu(i) / (tc + tau(i));
    lz += 0.5 * std::log1p(tau(i) / tc);
  }
  return lz;
}

}  // namespace

EPState ep_fit(const Dataset& data, const MatrixXd& k, const LikelihoodSpec& lik,
               const EPOptions& opts) {
  const Eigen::Index n = data.n();
  if (k.rows() != n || k.cols() != n)
    throw Error(ErrorKind::InvalidInput, "covariance size does not match the data");
  const bool robust = opts.robust.value_or(!lik.log_concave());

  VectorXd tau = VectorXd::Zero(n);
  VectorXd nu = VectorXd::Zero(n);
  if (opts.init && opts.init->size() == n) {
    tau = opts.init->tau;
    nu = opts.init->nu;
    if (!robust) tau = tau.cwiseMax(0.0);
  }

  std::optional<SiteGaussian> post;
  try {
    post.emplace(k, tau, nu);
  } catch (const Error&) {
    tau.setZero();
    nu.setZero();
    post.emplace(k, tau, nu);
  }

  double step = opts.damping;
  double prev_change = std::numeric_limits<double>::infinity();
  EPState st;
  st.robust = robust;
  Sweep s = sweep(data, lik, *post, tau, nu, robust, opts.quad_nodes);
  int it = 0;
  while (it < opts.max_iter) {
    if (s.max_change < opts.tol) {
      st.converged = true;
      // Finish with the undamped proposal; damping only slows the approach.
      try {
        SiteGaussian fin(k, s.tau_new, s.nu_new);
        Sweep fs = sweep(data, lik, fin, s.tau_new, s.nu_new, robust, opts.quad_nodes);
        if (fs.failures.size() <= s.failures.size() && fs.max_change <= s.max_change) {
          tau = s.tau_new;
          nu = s.nu_new;
          post.emplace(std::move(fin));
          s = std::move(fs);
        }
      } catch (const Error&) {
      }
      break;
    }
    ++it;
    const VectorXd tau_try = tau + step * (s.tau_new - tau);
    const VectorXd nu_try = nu + step * (s.nu_new - nu);
    try {
      post.emplace(k, tau_try, nu_try);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::NotPositiveDefinite) throw;
      step *= 0.5;
      if (step < 1e-6)
        throw Error(ErrorKind::NonConvergence, "EP updates keep violating positive definiteness");
      continue;
    }
    tau = tau_try;
    nu = nu_try;
    if (s.max_change > prev_change) step = std::max(0.5 * step, opts.min_step);
    prev_change = s.max_change;
    s = sweep(data, lik, *post, tau, nu, robust, opts.quad_nodes);
  }

  st.iterations = it;
  st.step = step;
  st.max_change = s.max_change;
  st.cavity_failures = s.failures;
  st.sites.tau = tau;
  st.sites.nu = nu;
  st.sites.log_z.resize(n);
  st.cavities.resize(n);
  st.tilted_log_z0 = s.log_z0;
  st.tilted_mean = s.m1;
  st.tilted_var = s.m2;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double tc = s.tau_cav(i);
    st.cavities[i] = {s.nu_cav(i) / tc, 1.0 / tc};
    // Normalizer of the site so that cavity * site integrates to Z0.
    if (tau(i) != 0.0 && std::isfinite(tc)) {
      const double mc = s.nu_cav(i) / tc;
      const double ms = nu(i) / tau(i);
      const double vsum = 1.0 / tc + 1.0 / tau(i);
      st.sites.log_z(i) = s.log_z0(i) + 0.5 * std::log(2.0 * M_PI * vsum) + 0.5 * (mc - ms) * (mc - ms) / vsum;
    } else {
      st.sites.log_z(i) = std::isfinite(s.log_z0(i)) ? s.log_z0(i) : 0.0;
    }
  }
  st.posterior.mean = post->mean();
  st.posterior.cov = post->cov();
  st.posterior.marginal_var = post->cov().diagonal();
  st.posterior.log_marginal = log_z_ep(*post, tau, nu, s);
  return st;
}

}  // namespace gploo
