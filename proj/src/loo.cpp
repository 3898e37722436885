#include "gploo/loo.hpp"

#include <Eigen/Cholesky>
#include <algorithm>
#include <array>
#include <cstdio>
#include <cmath>
#include <limits>

#include "gploo/error.hpp"
#include "gploo/numeric.hpp"

namespace gploo {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Normalized log density of a latent marginal plus a Gaussian used to place
// quadrature grids on it.
struct PointDensity {
  Gaussian1D ref;
  Gaussian1D base;
  bool tilted = false;
  double log_z0 = 0.0;
  Observation obs;
  const LikelihoodSpec* lik = nullptr;

  LogDensityDerivs derivs(double f) const {
    const double v = base.var;
    LogDensityDerivs d{log_gaussian(f, base.mean, v), -(f - base.mean) / v, -1.0 / v};
    if (tilted) {
      const LogLikDerivs l = loglik(obs, f, *lik);
      d.value += l.value - log_z0;
      d.d1 += l.grad;
      d.d2 += l.hess;
    }
    return d;
  }
  double log_q(double f) const { return derivs(f).value; }
};

PointDensity point_density(const LatentMarginal& m, const Observation& obs,
                           const LikelihoodSpec& lik, const QuadOptions& quad) {
  if (!m.valid()) throw Error(ErrorKind::CavityFailure, m.failure);
  PointDensity pd;
  pd.base = m.base;
  pd.ref = m.base;
  pd.tilted = m.tilted;
  pd.obs = obs;
  pd.lik = &lik;
  if (m.tilted) {
    pd.log_z0 = likelihood_moments(obs, m.base, lik, quad.nodes).log_z0;
    pd.ref = laplace_reference([&](double f) { return pd.derivs(f); }, m.base);
  }
  return pd;
}

// Quadrature nodes carrying the normalized marginal.
LogIntegral marginal_nodes(const PointDensity& pd, const QuadOptions& quad) {
  if (!pd.tilted) {
    const QuadratureGrid grid = adapt_grid(pd.base, quad.nodes);
    LogIntegral li;
    li.nodes = grid.nodes;
    li.log_weights.resize(grid.weights.size());
    for (std::size_t k = 0; k < grid.weights.size(); ++k) li.log_weights[k] = std::log(grid.weights[k]);
    return li;
  }
  QuadOptions q = quad;
  q.unimodal = pd.lik->log_concave();
  return integrate_log([&](double f) { return pd.log_q(f); }, pd.ref, q);
}

// log E_q[p(y | f)].
double log_expected_lik(const PointDensity& pd, const QuadOptions& quad) {
  if (!pd.tilted) return likelihood_moments(pd.obs, pd.base, *pd.lik, quad.nodes).log_z0;
  auto d = [&](double f) {
    LogDensityDerivs e = pd.derivs(f);
    const LogLikDerivs l = loglik(pd.obs, f, *pd.lik);
    return LogDensityDerivs{e.value + l.value, e.d1 + l.grad, e.d2 + l.hess};
  };
  const Gaussian1D ref = laplace_reference(d, pd.ref);
  QuadOptions q = quad;
  q.unimodal = pd.lik->log_concave();
  const LogIntegral li = integrate_log([&](double f) { return d(f).value; }, ref, q);
  if (!std::isfinite(li.log_value) || li.tail_dominated)
    throw Error(ErrorKind::NumericalFailure, "predictive density quadrature did not converge");
  return li.log_value;
}

// Whether log N(f | m) - log p(y | f) is concave, so a single Gauss-Hermite
// pass around its mode is reliable.
bool ratio_log_concave(const Gaussian1D& m, const LikelihoodSpec& lik) {
  const double r = std::exp(lik.log_param);
  switch (lik.kind) {
    case LikelihoodKind::Gaussian: return m.var < r;
    case LikelihoodKind::Probit: return m.var < 1.0;
    case LikelihoodKind::LogLogisticCensored: return 1.0 / m.var > 0.5 * r * r;
    case LikelihoodKind::StudentT: return false;
  }
  return false;
}

// Ratio integrals of a Gaussian marginal against 1/p that cannot converge.
bool ratio_diverges(const Gaussian1D& m, const LikelihoodSpec& lik) {
  switch (lik.kind) {
    case LikelihoodKind::Probit: return m.var >= 1.0;
    case LikelihoodKind::Gaussian: return m.var >= std::exp(lik.log_param);
    default: return false;
  }
}

struct PointValue {
  double lpd = kNaN;
  bool unstable = false;
  std::string failure;
};

// -log of the integral of q / p for one point.
PointValue q_loo_point(const PointDensity& pd, const QuadOptions& quad) {
  PointValue out;
  if (pd.tilted) {
    // q / p is N(cavity) / Z0, whose integral is 1 / Z0.
    out.lpd = pd.log_z0;
    return out;
  }
  if (ratio_diverges(pd.base, *pd.lik)) {
    out.failure = "ratio integral diverges (marginal variance too large for the likelihood tail)";
    return out;
  }
  auto d = [&](double f) {
    LogDensityDerivs e = pd.derivs(f);
    const LogLikDerivs l = loglik(pd.obs, f, *pd.lik);
    return LogDensityDerivs{e.value - l.value, e.d1 - l.grad, e.d2 - l.hess};
  };
  const Gaussian1D ref = laplace_reference(d, pd.ref);
  QuadOptions q = quad;
  q.unimodal = ratio_log_concave(pd.base, *pd.lik);
  const LogIntegral li = integrate_log([&](double f) { return d(f).value; }, ref, q);
  if (!std::isfinite(li.log_value)) {
    out.failure = "ratio integral is not finite";
    return out;
  }
  out.lpd = -li.log_value;
  out.unstable = li.tail_dominated;
  return out;
}

PointValue tq_loo_point(const PointDensity& pd, const TruncationConfig& cfg,
                        const QuadOptions& quad) {
  double log_c;
  if (cfg.fixed_c) {
    if (*cfg.fixed_c == 0.0) return q_loo_point(pd, quad);
    log_c = std::log(*cfg.fixed_c);
  } else {
    // c^-1 = c0^-1 * integral over (a, b) of q / p.
    const int pts = quad.fallback_points;
    const double sd = std::sqrt(pd.ref.var);
    const double h = 2.0 * cfg.half_width * sd / (pts - 1);
    std::vector<double> terms(pts);
    for (int k = 0; k < pts; ++k) {
      const double f = pd.ref.mean - cfg.half_width * sd + k * h;
      const double c = (k == 0 || k == pts - 1) ? 0.5 * h : h;
      terms[k] = std::log(c) + pd.log_q(f) - loglik_value(pd.obs, f, *pd.lik);
    }
    log_c = std::log(cfg.c0) - log_sum_exp(terms);
  }

  constexpr double kSpan = 10.0;
  constexpr int kPoints = 4001;
  const double sd = std::sqrt(pd.ref.var);
  const double h = 2.0 * kSpan * sd / (kPoints - 1);
  std::vector<double> num(kPoints);
  std::vector<double> den(kPoints);
  for (int k = 0; k < kPoints; ++k) {
    const double f = pd.ref.mean - kSpan * sd + k * h;
    const double lq = pd.log_q(f) + ((k == 0 || k == kPoints - 1) ? std::log(0.5) : 0.0);
    const double lp = loglik_value(pd.obs, f, *pd.lik);
    const double lw = -std::max(lp, log_c);
    num[k] = lq + lp + lw;
    den[k] = lq + lw;
  }
  PointValue out;
  out.lpd = log_sum_exp(num) - log_sum_exp(den);
  if (!std::isfinite(out.lpd)) {
    out.lpd = kNaN;
    out.failure = "truncated quadrature is not finite";
  }
  return out;
}

struct Cumulants {
  std::array<double, kMaxCumulantOrder> kappa{};
  double f_one = 0.0;
};

Cumulants cumulants_point(const PointDensity& pd, const QuadOptions& quad) {
  const LogIntegral nodes = marginal_nodes(pd, quad);
  std::vector<double> ll(nodes.nodes.size());
  for (std::size_t k = 0; k < ll.size(); ++k) ll[k] = loglik_value(pd.obs, nodes.nodes[k], *pd.lik);
  double mean = 0.0;
  for (std::size_t k = 0; k < ll.size(); ++k) mean += std::exp(nodes.log_weights[k]) * ll[k];
  std::array<double, 7> mu{};  // central moments
  for (std::size_t k = 0; k < ll.size(); ++k) {
    const double w = std::exp(nodes.log_weights[k]);
    const double d = ll[k] - mean;
    double p = d;
    for (int j = 2; j <= 6; ++j) {
      p *= d;
      mu[j] += w * p;
    }
  }
  Cumulants c;
  c.kappa[0] = mean;
  c.kappa[1] = mu[2];
  c.kappa[2] = mu[3];
  c.kappa[3] = mu[4] - 3.0 * mu[2] * mu[2];
  c.kappa[4] = mu[5] - 10.0 * mu[3] * mu[2];
  c.kappa[5] = mu[6] - 15.0 * mu[4] * mu[2] - 10.0 * mu[3] * mu[3] + 30.0 * mu[2] * mu[2] * mu[2];
  c.f_one = log_expected_lik(pd, quad);
  return c;
}

void check_sizes(const std::vector<LatentMarginal>& m, const Dataset& data) {
  if (static_cast<Eigen::Index>(m.size()) != data.n())
    throw Error(ErrorKind::InvalidInput, "number of marginals does not match the data");
}

// Runs `fn(i, pd)` for every point, collecting per-point failures.
template <class Fn>
LooReport per_point(const std::string& method, const std::vector<LatentMarginal>& marginals,
                    const Dataset& data, const LikelihoodSpec& lik, const QuadOptions& quad,
                    Fn&& fn) {
  check_sizes(marginals, data);
  const Eigen::Index n = data.n();
  VectorXd lpd = VectorXd::Constant(n, kNaN);
  std::vector<PointFailure> failures;
  std::vector<int> unstable;
  for (Eigen::Index i = 0; i < n; ++i) {
    const int ii = static_cast<int>(i);
    try {
      const PointDensity pd = point_density(marginals[i], observation(data, i), lik, quad);
      const PointValue v = fn(i, pd);
      if (!v.failure.empty()) {
        failures.push_back({ii, v.failure});
        continue;
      }
      lpd(i) = v.lpd;
      if (v.unstable) unstable.push_back(ii);
    } catch (const Error& e) {
      failures.push_back({ii, e.what()});
    }
  }
  LooReport r = make_report(method, std::move(lpd), std::move(failures));
  r.unstable = std::move(unstable);
  if (!r.unstable.empty())
    r.warnings.push_back(std::to_string(r.unstable.size()) +
                         " point(s) with tail-dominated quadrature; values may be unreliable");
  return r;
}

}  // namespace

bool LooReport::failed(Eigen::Index i) const {
  return std::any_of(failures.begin(), failures.end(),
                     [&](const PointFailure& f) { return f.index == i; });
}

LooReport make_report(std::string method, VectorXd lpd, std::vector<PointFailure> failures) {
  LooReport r;
  r.method = std::move(method);
  for (const PointFailure& f : failures) lpd(f.index) = kNaN;
  r.cpo = lpd.array().exp();
  r.sum_lpd = 0.0;
  for (Eigen::Index i = 0; i < lpd.size(); ++i)
    if (std::isfinite(lpd(i))) r.sum_lpd += lpd(i);
  r.lpd = std::move(lpd);
  std::sort(failures.begin(), failures.end(),
            [](const PointFailure& a, const PointFailure& b) { return a.index < b.index; });
  r.failures = std::move(failures);
  if (!r.failures.empty())
    r.warnings.push_back(std::to_string(r.failures.size()) + " point(s) failed and are excluded");
  return r;
}

std::vector<LatentMarginal> gaussian_marginals(const GaussianPosterior& post) {
  std::vector<LatentMarginal> out(post.mean.size());
  for (Eigen::Index i = 0; i < post.mean.size(); ++i) out[i].base = post.marginal(i);
  return out;
}

std::vector<LatentMarginal> tilted_marginals(const LaplaceState& state) {
  std::vector<LatentMarginal> out(state.mode.size());
  for (Eigen::Index i = 0; i < state.mode.size(); ++i) {
    out[i].tilted = true;
    try {
      out[i].base = la_loo_cavity_lr(state, i).gaussian();
    } catch (const Error& e) {
      out[i].failure = e.what();
    }
  }
  return out;
}

std::vector<LatentMarginal> tilted_marginals(const EPState& state) {
  std::vector<LatentMarginal> out(state.cavities.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i].tilted = true;
    out[i].base = state.cavities[i].gaussian();
    if (!(out[i].base.var > 0.0) || !std::isfinite(out[i].base.var))
      out[i].failure = "cavity precision is not positive";
  }
  return out;
}

VectorXd training_lpd(const std::vector<LatentMarginal>& marginals, const Dataset& data,
                      const LikelihoodSpec& lik, const QuadOptions& quad) {
  check_sizes(marginals, data);
  VectorXd out(data.n());
  for (Eigen::Index i = 0; i < data.n(); ++i) {
    try {
      out(i) = log_expected_lik(point_density(marginals[i], observation(data, i), lik, quad), quad);
    } catch (const Error&) {
      out(i) = kNaN;
    }
  }
  return out;
}

GaussianLooResult gaussian_exact_loo(const MatrixXd& k, double sigma2, const VectorXd& y) {
  const Eigen::Index n = y.size();
  if (k.rows() != n || k.cols() != n || !(sigma2 > 0.0))
    throw Error(ErrorKind::InvalidInput, "gaussian_exact_loo needs an n x n covariance and sigma2 > 0");
  MatrixXd c = k;
  c.diagonal().array() += sigma2;
  Eigen::LLT<MatrixXd> llt(c);
  if (llt.info() != Eigen::Success)
    throw Error(ErrorKind::NotPositiveDefinite, "K + sigma2 I is not positive definite");
  const MatrixXd cinv = llt.solve(MatrixXd::Identity(n, n));
  GaussianLooResult r;
  r.g = cinv * y;
  r.c_diag = cinv.diagonal();
  r.mean = y.array() - r.g.array() / r.c_diag.array();
  r.var = 1.0 / r.c_diag.array() - sigma2;
  r.lpd.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!(r.var(i) > 0.0))
      throw Error(ErrorKind::DegenerateModel,
                  "leave-one-out latent variance is not positive at point " + std::to_string(i));
    r.lpd(i) = -0.5 * kLogTwoPi + 0.5 * std::log(r.c_diag(i)) -
               r.g(i) * r.g(i) / (2.0 * r.c_diag(i));
  }
  return r;
}

LooReport to_report(const GaussianLooResult& r, const VectorXd& y, double sigma2) {
  LooReport rep = make_report("gaussian-exact", r.lpd);
  VectorXd pit(y.size());
  for (Eigen::Index i = 0; i < y.size(); ++i)
    pit(i) = normal_cdf((y(i) - r.mean(i)) / std::sqrt(r.var(i) + sigma2));
  rep.pit = std::move(pit);
  return rep;
}

namespace {

LooReport cavity_report(const std::string& method, const std::vector<Gaussian1D>& cavities,
                        const std::vector<PointFailure>& cavity_failures, const VectorXd& lpd_in,
                        const Dataset& data, const LikelihoodSpec& lik, int nodes) {
  VectorXd lpd = lpd_in;
  std::vector<PointFailure> failures = cavity_failures;
  LooReport r = make_report(method, lpd, failures);
  if (lik.continuous()) {
    VectorXd pit = VectorXd::Constant(data.n(), kNaN);
    for (Eigen::Index i = 0; i < data.n(); ++i) {
      if (r.failed(i)) continue;
      try {
        pit(i) = predictive_cdf(data.y(i), cavities[i], lik, nodes);
      } catch (const Error&) {
      }
    }
    r.pit = std::move(pit);
  }
  return r;
}

}  // namespace

LooReport ep_loo(const EPState& state, const Dataset& data, const LikelihoodSpec& lik) {
  const Eigen::Index n = data.n();
  if (state.tilted_log_z0.size() != n)
    throw Error(ErrorKind::InvalidInput, "EP state does not match the data");
  std::vector<PointFailure> failures;
  std::vector<Gaussian1D> cavities(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    cavities[i] = state.cavities[i].gaussian();
    if (!std::isfinite(state.tilted_log_z0(i)) || !(cavities[i].var > 0.0) ||
        !std::isfinite(cavities[i].var))
      failures.push_back({static_cast<int>(i), "cavity precision is not positive"});
  }
  for (int i : state.cavity_failures) {
    if (std::none_of(failures.begin(), failures.end(),
                     [&](const PointFailure& f) { return f.index == i; }))
      failures.push_back({i, "cavity precision was clamped during the final sweep"});
  }
  LooReport r = cavity_report("ep-loo", cavities, failures, state.tilted_log_z0, data, lik, kDefaultQuadNodes);
  if (!state.converged) r.warnings.push_back("EP did not converge; values are from the last sweep");
  return r;
}

LooReport la_loo(const LaplaceState& state, const Dataset& data, const LikelihoodSpec& lik,
                 CavityRoute route, const QuadOptions& quad) {
  const Eigen::Index n = data.n();
  if (state.mode.size() != n) throw Error(ErrorKind::InvalidInput, "Laplace state does not match the data");
  VectorXd lpd = VectorXd::Constant(n, kNaN);
  std::vector<PointFailure> failures;
  std::vector<Gaussian1D> cavities(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    try {
      const CavityDistribution cav = route == CavityRoute::LinearResponse
                                         ? la_loo_cavity_lr(state, i)
                                         : la_loo_cavity_site(state, i);
      cavities[i] = cav.gaussian();
      lpd(i) = likelihood_moments(observation(data, i), cavities[i], lik, quad.nodes).log_z0;
    } catch (const Error& e) {
      failures.push_back({static_cast<int>(i), e.what()});
    }
  }
  return cavity_report("la-loo", cavities, failures, lpd, data, lik, quad.nodes);
}

LooReport q_loo(const std::vector<LatentMarginal>& marginals, const Dataset& data,
                const LikelihoodSpec& lik, const QuadOptions& quad) {
  return per_point("q-loo", marginals, data, lik, quad,
                   [&](Eigen::Index, const PointDensity& pd) { return q_loo_point(pd, quad); });
}

LooReport tq_loo(const std::vector<LatentMarginal>& marginals, const Dataset& data,
                 const LikelihoodSpec& lik, const TruncationConfig& cfg, const QuadOptions& quad) {
  if (!(cfg.c0 > 0.0) || !(cfg.half_width >= 1.0) || (cfg.fixed_c && !(*cfg.fixed_c >= 0.0)))
    throw Error(ErrorKind::InvalidInput, "truncation needs c0 > 0, half-width >= 1 and c >= 0");
  return per_point("tq-loo", marginals, data, lik, quad,
                   [&](Eigen::Index, const PointDensity& pd) { return tq_loo_point(pd, cfg, quad); });
}

LooReport waic(const std::vector<LatentMarginal>& marginals, const Dataset& data,
               const LikelihoodSpec& lik, WaicVariant variant, const QuadOptions& quad) {
  const char* tag = variant == WaicVariant::G ? "waic-g" : "waic-v";
  return per_point(tag, marginals, data, lik, quad, [&](Eigen::Index, const PointDensity& pd) {
    const Cumulants c = cumulants_point(pd, quad);
    PointValue v;
    v.lpd = variant == WaicVariant::G ? 2.0 * c.kappa[0] - c.f_one : c.f_one - c.kappa[1];
    return v;
  });
}

CumulantLoo cumulant_series_loo(const std::vector<LatentMarginal>& marginals,
                                const Dataset& data, const LikelihoodSpec& lik, int order,
                                const QuadOptions& quad) {
  if (order < 1) throw Error(ErrorKind::InvalidInput, "cumulant series order must be at least 1");
  if (order > kMaxCumulantOrder)
    throw Error(ErrorKind::InvalidInput,
                "cumulant series above order 6 is numerically unstable; use order <= 6 or "
                "a quadrature estimator such as tq-loo");
  check_sizes(marginals, data);
  CumulantLoo out;
  out.series.cumulants = MatrixXd::Constant(data.n(), order, kNaN);
  out.series.f_one = VectorXd::Constant(data.n(), kNaN);
  out.report = per_point("series-" + std::to_string(order), marginals, data, lik, quad,
                         [&](Eigen::Index i, const PointDensity& pd) {
                           const Cumulants c = cumulants_point(pd, quad);
                           PointValue v;
                           v.lpd = 0.0;
                           double fact = 1.0;
                           for (int j = 1; j <= order; ++j) {
                             fact *= j;
                             const double sign = j % 2 == 1 ? 1.0 : -1.0;
                             v.lpd += sign * c.kappa[j - 1] / fact;
                             out.series.cumulants(i, j - 1) = c.kappa[j - 1];
                           }
                           out.series.f_one(i) = c.f_one;
                           return v;
                         });
  return out;
}

ComparisonStats compare(const LooReport& reference, const LooReport& candidate,
                        StdNormalization norm) {
  if (reference.n() != candidate.n())
    throw Error(ErrorKind::InvalidInput, "reports cover different point sets");
  const Eigen::Index n = reference.n();
  ComparisonStats s;
  s.delta = VectorXd::Constant(n, kNaN);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double a = reference.lpd(i);
    const double b = candidate.lpd(i);
    if (!std::isfinite(a) || !std::isfinite(b) || reference.failed(i) || candidate.failed(i)) {
      s.excluded.push_back(static_cast<int>(i));
      continue;
    }
    s.delta(i) = b - a;
    s.bias += s.delta(i);
    ++s.n_compared;
  }
  if (s.n_compared == 0) throw Error(ErrorKind::InvalidInput, "reports share no valid points");
  const double center = norm == StdNormalization::PerPointMean ? s.bias / s.n_compared : s.bias;
  double ss = 0.0;
  for (Eigen::Index i = 0; i < n; ++i)
    if (std::isfinite(s.delta(i))) ss += (s.delta(i) - center) * (s.delta(i) - center);
  s.std = std::sqrt(ss);
  return s;
}

bool is_cavity_method(const std::string& method) {
  for (const char* prefix : {"la-loo", "ep-loo", "exact", "gaussian-exact"})
    if (method.rfind(prefix, 0) == 0) return true;
  return false;
}

Diagnostics diagnostics(const LooReport& report, const VectorXd& training) {
  if (training.size() != report.n())
    throw Error(ErrorKind::InvalidInput, "training lpd length does not match the report");
  Diagnostics d;
  d.p_eff_i = VectorXd::Constant(report.n(), kNaN);
  int used = 0;
  for (Eigen::Index i = 0; i < report.n(); ++i) {
    if (!std::isfinite(report.lpd(i)) || !std::isfinite(training(i))) continue;
    d.p_eff_i(i) = training(i) - report.lpd(i);
    d.p_eff += d.p_eff_i(i);
    ++used;
  }
  const Eigen::Index n = report.n();
  d.p_eff_over_n = n > 0 ? d.p_eff / static_cast<double>(n) : 0.0;
  if (d.p_eff < 0.0)
    d.warnings.push_back("negative effective number of parameters (" + std::to_string(d.p_eff) + ")");
  if (used == 0 || is_cavity_method(report.method)) return d;

  char buf[160];
  if (d.p_eff_over_n > 0.05) {
    std::snprintf(buf, sizeof buf,
                  "p_eff/n = %.3f exceeds 0.05; %s is likely unreliable, prefer la-loo or ep-loo",
                  d.p_eff_over_n, report.method.c_str());
    d.warnings.push_back(buf);
  } else if (d.p_eff_over_n > 0.02) {
    std::snprintf(buf, sizeof buf, "note: p_eff/n = %.3f exceeds 0.02; %s may start to fail",
                  d.p_eff_over_n, report.method.c_str());
    d.warnings.push_back(buf);
  }
  for (Eigen::Index i = 0; i < n; ++i)
    if (d.p_eff_i(i) > 0.2) d.flagged_points.push_back(static_cast<int>(i));
  if (!d.flagged_points.empty())
    d.warnings.push_back(std::to_string(d.flagged_points.size()) +
                         " point(s) with p_eff,i > 0.2 where the estimate may fail");
  return d;
}

}  // namespace gploo
