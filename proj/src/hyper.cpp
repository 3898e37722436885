#include "gploo/hyper.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <memory>

#include "gploo/error.hpp"
#include "gploo/numeric.hpp"

namespace gploo {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

const char* short_name(KernelKind k) {
  switch (k) {
    case KernelKind::Constant: return "const";
    case KernelKind::Linear: return "lin";
    case KernelKind::SquaredExponential: return "se";
  }
  return "k";
}

const char* likelihood_param_name(LikelihoodKind k) {
  switch (k) {
    case LikelihoodKind::Gaussian: return "lik.log_sigma2";
    case LikelihoodKind::StudentT: return "lik.log_scale";
    case LikelihoodKind::LogLogisticCensored: return "lik.log_shape";
    case LikelihoodKind::Probit: break;
  }
  return "";
}

VectorXd fd_gradient(const std::function<double(const VectorXd&)>& f, const VectorXd& x, double fx,
                     double h, int& evals) {
  VectorXd g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    VectorXd a = x, b = x;
    a(i) += h;
    b(i) -= h;
    const double fa = f(a);
    const double fb = f(b);
    evals += 2;
    if (std::isfinite(fa) && std::isfinite(fb)) g(i) = (fa - fb) / (2.0 * h);
    else if (std::isfinite(fa)) g(i) = (fa - fx) / h;
    else if (std::isfinite(fb)) g(i) = (fx - fb) / h;
    else g(i) = 0.0;
  }
  return g;
}

}  // namespace

double ParamPrior::log_density(double x) const {
  if (kind == Kind::Flat) return 0.0;
  return log_gaussian(x, mean, sd * sd);
}

VectorXd HyperParams::constrained() const { return values.array().exp(); }

HyperParams HyperParams::from_constrained(std::vector<std::string> names, const VectorXd& positive) {
  if (static_cast<Eigen::Index>(names.size()) != positive.size() || (positive.array() <= 0.0).any())
    throw Error(ErrorKind::InvalidInput, "constrained hyperparameters must be positive and named");
  return {std::move(names), positive.array().log()};
}

std::optional<Eigen::Index> HyperParams::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return static_cast<Eigen::Index>(i);
  return std::nullopt;
}

HyperParams pack(const ModelConfig& config) {
  HyperParams hp;
  std::vector<double> v;
  for (std::size_t t = 0; t < config.kernel.terms.size(); ++t) {
    const KernelTerm& term = config.kernel.terms[t];
    const std::string prefix = short_name(term.kind) + std::to_string(t) + ".";
    hp.names.push_back(prefix + "log_magnitude");
    v.push_back(term.log_magnitude);
    if (term.kind == KernelKind::SquaredExponential) {
      const Eigen::Index nl = term.log_length_scales.size();
      for (Eigen::Index j = 0; j < nl; ++j) {
        hp.names.push_back(prefix + "log_length_scale" + (nl == 1 ? "" : std::to_string(j + 1)));
        v.push_back(term.log_length_scales(j));
      }
    }
  }
  if (config.likelihood.has_param()) {
    hp.names.push_back(likelihood_param_name(config.likelihood.kind));
    v.push_back(config.likelihood.log_param);
  }
  hp.values = Eigen::Map<VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
  return hp;
}

ModelConfig unpack(const ModelConfig& config, const VectorXd& values) {
  ModelConfig out = config;
  Eigen::Index k = 0;
  auto take = [&] {
    if (k >= values.size()) throw Error(ErrorKind::InvalidInput, "too few hyperparameter values");
    return values(k++);
  };
  for (KernelTerm& term : out.kernel.terms) {
    term.log_magnitude = take();
    if (term.kind == KernelKind::SquaredExponential)
      for (Eigen::Index j = 0; j < term.log_length_scales.size(); ++j) term.log_length_scales(j) = take();
  }
  if (out.likelihood.has_param()) out.likelihood.log_param = take();
  if (k != values.size()) throw Error(ErrorKind::InvalidInput, "too many hyperparameter values");
  return out;
}

const GaussianPosterior& LatentFit::posterior() const {
  if (laplace) return laplace->posterior;
  if (ep) return ep->posterior;
  throw Error(ErrorKind::InvalidInput, "empty latent fit");
}

LatentFit fit_latent(const Dataset& data, const MatrixXd& k, const ModelConfig& config) {
  LatentFit fit;
  fit.method = config.method;
  if (config.method == InferenceMethod::Laplace) {
    fit.laplace = laplace_fit(data, k, config.likelihood, config.laplace);
  } else {
    fit.ep = ep_fit(data, k, config.likelihood, config.ep);
    if (!fit.ep->converged)
      throw Error(ErrorKind::NonConvergence,
                  "EP did not converge in " + std::to_string(fit.ep->iterations) +
                      " iterations (last change " + std::to_string(fit.ep->max_change) + ")");
  }
  return fit;
}

LatentFit fit_latent(const Dataset& data, const ModelConfig& config) {
  return fit_latent(data, build_covariance(data.x, config.kernel), config);
}

double log_prior(const ModelConfig& config, const VectorXd& values) {
  if (!config.priors.empty() && static_cast<Eigen::Index>(config.priors.size()) != values.size())
    throw Error(ErrorKind::InvalidInput, "one prior per hyperparameter is required");
  double lp = 0.0;
  for (Eigen::Index i = 0; i < values.size(); ++i)
    lp += config.priors.empty() ? ParamPrior{}.log_density(values(i)) : config.priors[i].log_density(values(i));
  return lp;
}

double log_posterior(const Dataset& data, const ModelConfig& config, const VectorXd& values) {
  if (!values.allFinite()) return kNegInf;
  try {
    const ModelConfig c = unpack(config, values);
    const double lm = fit_latent(data, c).log_marginal();
    return std::isfinite(lm) ? lm + log_prior(config, values) : kNegInf;
  } catch (const Error&) {
    return kNegInf;
  }
}

MaxResult maximize(const std::function<double(const VectorXd&)>& objective, const VectorXd& x0,
                   const MapOptions& opts) {
  MaxResult r;
  r.x = x0;
  r.value = objective(x0);
  r.initial_value = r.value;
  r.evaluations = 1;
  if (!std::isfinite(r.value))
    throw Error(ErrorKind::InvalidInput, "objective is not finite at the initial point");
  const Eigen::Index p = x0.size();
  if (p == 0) {
    r.converged = true;
    r.gradient = VectorXd();
    return r;
  }
  for (int run = 0; run <= opts.restarts; ++run) {
    const double start_value = r.value;
    MatrixXd h = MatrixXd::Identity(p, p);  // inverse Hessian of -objective
    VectorXd g = fd_gradient(objective, r.x, r.value, opts.fd_step, r.evaluations);
    for (int it = 0; it < opts.max_iter; ++it) {
      if (g.cwiseAbs().maxCoeff() < opts.gtol) break;
      VectorXd d = h * g;  // ascent direction
      if (!(d.dot(g) > 0.0)) {
        h.setIdentity();
        d = g;
      }
      const double len = d.cwiseAbs().maxCoeff();
      if (len > opts.max_step) d *= opts.max_step / len;
      double t = 1.0;
      bool accepted = false;
      VectorXd xn;
      double fn = kNegInf;
      for (int bt = 0; bt < 40; ++bt) {
        xn = r.x + t * d;
        fn = objective(xn);
        ++r.evaluations;
        if (std::isfinite(fn) && fn >= r.value + 1e-4 * t * g.dot(d)) {
          accepted = true;
          break;
        }
        t *= 0.5;
      }
      if (!accepted) break;
      const VectorXd gn = fd_gradient(objective, xn, fn, opts.fd_step, r.evaluations);
      const VectorXd s = xn - r.x;
      const VectorXd y = g - gn;  // gradient change of -objective
      const double sy = s.dot(y);
      if (sy > 1e-12) {
        const double rho = 1.0 / sy;
        const MatrixXd id = MatrixXd::Identity(p, p);
        h = (id - rho * s * y.transpose()) * h * (id - rho * y * s.transpose()) + rho * s * s.transpose();
      }
      r.x = xn;
      r.value = fn;
      g = gn;
      ++r.iterations;
    }
    r.gradient = g;
    r.converged = g.cwiseAbs().maxCoeff() < opts.gtol;
    if (r.converged || r.value - start_value < 1e-10 * (1.0 + std::abs(r.value))) break;
  }
  return r;
}

MatrixXd fd_hessian(const std::function<double(const VectorXd&)>& f, const VectorXd& x, double h) {
  const Eigen::Index p = x.size();
  MatrixXd hess(p, p);
  const double f0 = f(x);
  for (Eigen::Index i = 0; i < p; ++i) {
    VectorXd a = x, b = x;
    a(i) += h;
    b(i) -= h;
    hess(i, i) = (f(a) - 2.0 * f0 + f(b)) / (h * h);
    for (Eigen::Index j = 0; j < i; ++j) {
      VectorXd pp = x, pm = x, mp = x, mm = x;
      pp(i) += h; pp(j) += h;
      pm(i) += h; pm(j) -= h;
      mp(i) -= h; mp(j) += h;
      mm(i) -= h; mm(j) -= h;
      hess(i, j) = hess(j, i) = (f(pp) - f(pm) - f(mp) + f(mm)) / (4.0 * h * h);
    }
  }
  return hess;
}

MapResult map_optimize(const Dataset& data, const ModelConfig& config, const MapOptions& opts) {
  const HyperParams init = pack(config);
  std::vector<Eigen::Index> free;
  for (Eigen::Index i = 0; i < init.size(); ++i) {
    bool fixed = false;
    for (const std::string& name : opts.fixed) fixed = fixed || name == init.names[i];
    if (!fixed) free.push_back(i);
  }
  for (const std::string& name : opts.fixed)
    if (!init.index_of(name))
      throw Error(ErrorKind::InvalidInput, "unknown hyperparameter '" + name + "'");

  // Warm starts from the previous evaluation keep EP cheap; the fixed point
  // reached does not depend on the start beyond the convergence tolerance.
  auto warm = std::make_shared<std::optional<LatentFit>>();
  auto expand = [&](const VectorXd& z) {
    VectorXd v = init.values;
    for (std::size_t j = 0; j < free.size(); ++j) v(free[j]) = z(j);
    return v;
  };
  auto objective = [&](const VectorXd& z) {
    const VectorXd v = expand(z);
    if (!v.allFinite()) return kNegInf;
    try {
      ModelConfig c = unpack(config, v);
      if (*warm && (*warm)->ep) c.ep.init = (*warm)->ep->sites;
      if (*warm && (*warm)->laplace) c.laplace.init = (*warm)->laplace->mode;
      LatentFit fit = fit_latent(data, c);
      const double lm = fit.log_marginal();
      *warm = std::move(fit);
      return std::isfinite(lm) ? lm + log_prior(config, v) : kNegInf;
    } catch (const Error&) {
      return kNegInf;
    }
  };
  VectorXd z0(free.size());
  for (std::size_t j = 0; j < free.size(); ++j) z0(j) = init.values(free[j]);

  const MaxResult m = maximize(objective, z0, opts);
  MapResult out;
  out.params = init;
  out.params.values = expand(m.x);
  out.log_posterior = m.value;
  out.initial_log_posterior = m.initial_value;
  out.iterations = m.iterations;
  out.converged = m.converged;
  if (!m.converged) {
    char buf[160];
    std::snprintf(buf, sizeof buf,
                  "MAP search stopped before the gradient tolerance (max |grad| = %.3g); returning the best point found",
                  m.gradient.size() ? m.gradient.cwiseAbs().maxCoeff() : 0.0);
    out.warnings.push_back(buf);
  }
  return out;
}

}  // namespace gploo
