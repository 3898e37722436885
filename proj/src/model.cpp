#include "gploo/model.hpp"

#include <Eigen/Cholesky>
#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <limits>

#include "gploo/error.hpp"
#include "gploo/numeric.hpp"
#include "gploo/quadrature.hpp"

namespace gploo {

const char* to_string(KernelKind kind) {
  switch (kind) {
    case KernelKind::Constant: return "constant";
    case KernelKind::Linear: return "linear";
    case KernelKind::SquaredExponential: return "squared-exponential";
  }
  return "unknown";
}

KernelKind kernel_kind_from_string(const std::string& name) {
  if (name == "constant") return KernelKind::Constant;
  if (name == "linear") return KernelKind::Linear;
  if (name == "squared-exponential" || name == "se") return KernelKind::SquaredExponential;
  throw Error(ErrorKind::InvalidInput, "unknown kernel kind '" + name + "'");
}

const char* to_string(LikelihoodKind kind) {
  switch (kind) {
    case LikelihoodKind::Gaussian: return "gaussian";
    case LikelihoodKind::Probit: return "probit";
    case LikelihoodKind::StudentT: return "student-t";
    case LikelihoodKind::LogLogisticCensored: return "log-logistic-censored";
  }
  return "unknown";
}

LikelihoodKind likelihood_kind_from_string(const std::string& name) {
  if (name == "gaussian") return LikelihoodKind::Gaussian;
  if (name == "probit") return LikelihoodKind::Probit;
  if (name == "student-t") return LikelihoodKind::StudentT;
  if (name == "log-logistic-censored" || name == "log-logistic")
    return LikelihoodKind::LogLogisticCensored;
  throw Error(ErrorKind::InvalidInput, "unknown likelihood kind '" + name + "'");
}

KernelSpec KernelSpec::squared_exponential(double log_magnitude, VectorXd log_length_scales) {
  KernelSpec spec;
  spec.terms.push_back({KernelKind::SquaredExponential, log_magnitude, std::move(log_length_scales)});
  return spec;
}

LikelihoodSpec LikelihoodSpec::gaussian(double sigma2) {
  return {LikelihoodKind::Gaussian, std::log(sigma2), 4.0};
}
LikelihoodSpec LikelihoodSpec::probit() { return {LikelihoodKind::Probit, 0.0, 4.0}; }
LikelihoodSpec LikelihoodSpec::student_t(double scale, double nu) {
  return {LikelihoodKind::StudentT, std::log(scale), nu};
}
LikelihoodSpec LikelihoodSpec::log_logistic(double shape) {
  return {LikelihoodKind::LogLogisticCensored, std::log(shape), 4.0};
}

Dataset Dataset::without(Eigen::Index i) const {
  const Eigen::Index n = this->n();
  Dataset out;
  out.x.resize(n - 1, d());
  out.y.resize(n - 1);
  if (censored) out.censored.emplace();
  for (Eigen::Index r = 0, k = 0; r < n; ++r) {
    if (r == i) continue;
    out.x.row(k) = x.row(r);
    out.y(k) = y(r);
    if (censored) out.censored->push_back((*censored)[r]);
    ++k;
  }
  return out;
}

// ---------------------------------------------------------------------------

MatrixXd cross_covariance(const MatrixXd& x1, const MatrixXd& x2, const KernelSpec& kernel) {
  if (x1.cols() != x2.cols())
    throw Error(ErrorKind::InvalidInput, "covariate dimensions differ");
  const Eigen::Index d = x1.cols();
  MatrixXd k = MatrixXd::Zero(x1.rows(), x2.rows());
  for (const KernelTerm& term : kernel.terms) {
    const double mag = std::exp(term.log_magnitude);
    switch (term.kind) {
      case KernelKind::Constant:
        k.array() += mag;
        break;
      case KernelKind::Linear:
        k.noalias() += mag * x1 * x2.transpose();
        break;
      case KernelKind::SquaredExponential: {
        const Eigen::Index nl = term.log_length_scales.size();
        if (nl != 1 && nl != d)
          throw Error(ErrorKind::InvalidInput, "length-scale vector must have length 1 or d");
        VectorXd inv_ell(d);
        for (Eigen::Index j = 0; j < d; ++j)
          inv_ell(j) = std::exp(-term.log_length_scales(nl == 1 ? 0 : j));
        const MatrixXd a = x1 * inv_ell.asDiagonal();
        const MatrixXd b = x2 * inv_ell.asDiagonal();
        for (Eigen::Index c = 0; c < x2.rows(); ++c)
          for (Eigen::Index r = 0; r < x1.rows(); ++r)
            k(r, c) += mag * std::exp(-0.5 * (a.row(r) - b.row(c)).squaredNorm());
        break;
      }
    }
  }
  return k;
}

MatrixXd build_covariance(const MatrixXd& x, const KernelSpec& kernel) {
  if (!x.allFinite()) throw Error(ErrorKind::InvalidInput, "covariates contain non-finite values");
  if (kernel.terms.empty()) throw Error(ErrorKind::InvalidInput, "kernel has no terms");
  if (!(kernel.jitter > 0.0)) throw Error(ErrorKind::InvalidInput, "jitter must be positive");
  for (const KernelTerm& t : kernel.terms)
    if (!std::isfinite(t.log_magnitude) || !t.log_length_scales.allFinite())
      throw Error(ErrorKind::InvalidInput, "kernel parameters must be finite");

  MatrixXd k = cross_covariance(x, x, kernel);
  k = 0.5 * (k + k.transpose()).eval();
  const double mean_diag = k.diagonal().mean();
  if (!(mean_diag > 0.0) || !k.allFinite())
    throw Error(ErrorKind::NotPositiveDefinite, "covariance has a non-positive diagonal");

  for (double rel = kernel.jitter; rel <= 1e-4 * (1.0 + 1e-9); rel *= 10.0) {
    MatrixXd kj = k;
    kj.diagonal().array() += rel * mean_diag;
    Eigen::LLT<MatrixXd> llt(kj);
    if (llt.info() == Eigen::Success) return kj;
  }
  throw Error(ErrorKind::NotPositiveDefinite,
              "covariance not positive definite after jitter escalation to 1e-4");
}

// ---------------------------------------------------------------------------

Observation observation(const Dataset& data, Eigen::Index i) {
  return {data.y(i), data.censored ? static_cast<bool>((*data.censored)[i]) : false};
}

void validate(const Dataset& data, const LikelihoodSpec& lik) {
  if (data.n() < 1 || data.d() < 1)
    throw Error(ErrorKind::InvalidInput, "dataset needs n >= 1 and d >= 1");
  if (data.y.size() != data.n())
    throw Error(ErrorKind::InvalidInput, "outcome length differs from covariate rows");
  if (!data.y.allFinite() || !data.x.allFinite())
    throw Error(ErrorKind::InvalidInput, "dataset contains non-finite values");
  if (data.censored && lik.kind != LikelihoodKind::LogLogisticCensored)
    throw Error(ErrorKind::InvalidInput, "censoring flags require the log-logistic likelihood");
  if (data.censored && static_cast<Eigen::Index>(data.censored->size()) != data.n())
    throw Error(ErrorKind::InvalidInput, "censoring vector length differs from n");
  for (Eigen::Index i = 0; i < data.n(); ++i) {
    const double y = data.y(i);
    if (lik.kind == LikelihoodKind::Probit && y != 1.0 && y != -1.0)
      throw Error(ErrorKind::InvalidInput, "probit outcomes must be -1 or +1 (row " + std::to_string(i + 1) + ")");
    if (lik.kind == LikelihoodKind::LogLogisticCensored && !(y > 0.0))
      throw Error(ErrorKind::InvalidInput, "survival times must be positive (row " + std::to_string(i + 1) + ")");
  }
  if (lik.kind == LikelihoodKind::StudentT && !(lik.nu > 0.0))
    throw Error(ErrorKind::InvalidInput, "student-t degrees of freedom must be positive");
}

namespace {

void check_support(const Observation& obs, const LikelihoodSpec& lik) {
  if (!std::isfinite(obs.y)) throw Error(ErrorKind::InvalidInput, "observation is not finite");
  if (lik.kind == LikelihoodKind::Probit && obs.y != 1.0 && obs.y != -1.0)
    throw Error(ErrorKind::InvalidInput, "probit outcome must be -1 or +1");
  if (lik.kind == LikelihoodKind::LogLogisticCensored && !(obs.y > 0.0))
    throw Error(ErrorKind::InvalidInput, "survival time must be positive");
}

}  // namespace

LogLikDerivs loglik(const Observation& obs, double f, const LikelihoodSpec& lik) {
  check_support(obs, lik);
  switch (lik.kind) {
    case LikelihoodKind::Gaussian: {
      const double s2 = std::exp(lik.log_param);
      const double r = obs.y - f;
      return {-0.5 * (kLogTwoPi + lik.log_param) - 0.5 * r * r / s2, r / s2, -1.0 / s2};
    }
    case LikelihoodKind::Probit: {
      const double z = obs.y * f;
      const double ratio = inverse_mills(z);
      return {log_normal_cdf(z), obs.y * ratio, -ratio * (z + ratio)};
    }
    case LikelihoodKind::StudentT: {
      const double nu = lik.nu;
      const double a = nu * std::exp(2.0 * lik.log_param);
      const double r = obs.y - f;
      const double q = a + r * r;
      const double value = std::lgamma(0.5 * (nu + 1.0)) - std::lgamma(0.5 * nu) -
                           0.5 * std::log(nu * M_PI) - lik.log_param -
                           0.5 * (nu + 1.0) * std::log1p(r * r / a);
      return {value, (nu + 1.0) * r / q, (nu + 1.0) * (r * r - a) / (q * q)};
    }
    case LikelihoodKind::LogLogisticCensored: {
      const double shape = std::exp(lik.log_param);
      const double z = shape * (std::log(obs.y) - f);
      const double s = logistic(z);
      if (obs.censored) return {-log1pexp(z), shape * s, -shape * shape * s * (1.0 - s)};
      return {lik.log_param - std::log(obs.y) + z - 2.0 * log1pexp(z),
              -shape * (1.0 - 2.0 * s), -2.0 * shape * shape * s * (1.0 - s)};
    }
  }
  throw Error(ErrorKind::InvalidInput, "unknown likelihood");
}

double loglik_value(const Observation& obs, double f, const LikelihoodSpec& lik) {
  return loglik(obs, f, lik).value;
}

TiltedMoments likelihood_moments(const Observation& obs, const Gaussian1D& cavity,
                                 const LikelihoodSpec& lik, int nodes) {
  if (!(cavity.var > 0.0) || !std::isfinite(cavity.mean))
    throw Error(ErrorKind::InvalidInput, "cavity variance must be positive");
  check_support(obs, lik);
  const double mu = cavity.mean;
  const double v = cavity.var;
  switch (lik.kind) {
    case LikelihoodKind::Gaussian: {
      const double s2 = std::exp(lik.log_param);
      const double tot = v + s2;
      return {log_gaussian(obs.y, mu, tot), mu + v * (obs.y - mu) / tot, v * s2 / tot};
    }
    case LikelihoodKind::Probit: {
      const double sq = std::sqrt(1.0 + v);
      const double z = obs.y * mu / sq;
      const double ratio = inverse_mills(z);
      return {log_normal_cdf(z), mu + obs.y * v * ratio / sq,
              v - v * v * ratio * (z + ratio) / (1.0 + v)};
    }
    default:
      break;
  }
  auto derivs = [&](double f) {
    const LogLikDerivs l = loglik(obs, f, lik);
    return LogDensityDerivs{l.value + log_gaussian(f, mu, v), l.grad - (f - mu) / v, l.hess - 1.0 / v};
  };
  const Gaussian1D ref = laplace_reference(derivs, cavity);
  QuadOptions opts;
  opts.nodes = nodes;
  opts.unimodal = lik.log_concave();
  const LogIntegral li = integrate_log([&](double f) { return derivs(f).value; }, ref, opts);
  if (!std::isfinite(li.log_value) || li.tail_dominated)
    throw Error(ErrorKind::NumericalFailure,
                "tilted moment quadrature did not converge (max node share " +
                    std::to_string(li.max_share) + ")");
  const double mean = li.expect([](double f) { return f; });
  const double var = li.expect([&](double f) { return (f - mean) * (f - mean); });
  return {li.log_value, mean, var};
}

double predictive_cdf(double y, const Gaussian1D& marginal, const LikelihoodSpec& lik, int nodes) {
  if (!lik.continuous())
    throw Error(ErrorKind::UnsupportedOperation, "predictive CDF is undefined for discrete outcomes");
  if (!(marginal.var > 0.0)) throw Error(ErrorKind::InvalidInput, "marginal variance must be positive");
  if (std::isnan(y)) throw Error(ErrorKind::InvalidInput, "y is NaN");
  if (y == std::numeric_limits<double>::infinity()) return 1.0;
  if (y == -std::numeric_limits<double>::infinity()) return 0.0;
  switch (lik.kind) {
    case LikelihoodKind::Gaussian:
      return normal_cdf((y - marginal.mean) / std::sqrt(marginal.var + std::exp(lik.log_param)));
    case LikelihoodKind::StudentT: {
      const boost::math::students_t_distribution<double> t(lik.nu);
      const double s = std::exp(lik.log_param);
      const QuadratureGrid grid = adapt_grid(marginal, nodes);
      return integrate([&](double f) { return boost::math::cdf(t, (y - f) / s); }, grid).value;
    }
    case LikelihoodKind::LogLogisticCensored: {
      if (y <= 0.0) return 0.0;
      const double shape = std::exp(lik.log_param);
      const QuadratureGrid grid = adapt_grid(marginal, nodes);
      return integrate([&](double f) { return logistic(shape * (std::log(y) - f)); }, grid).value;
    }
    default:
      break;
  }
  throw Error(ErrorKind::UnsupportedOperation, "predictive CDF not available");
}

}  // namespace gploo
