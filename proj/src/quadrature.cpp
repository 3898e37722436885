#include "gploo/quadrature.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <mutex>

#include "gploo/error.hpp"
#include "gploo/numeric.hpp"

namespace gploo {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kEndShare = 1e-6;

struct HermiteRule {
  std::vector<double> nodes;    // for weight exp(-t^2)
  std::vector<double> weights;  // normalized to sum to one
};

// Golub-Welsch on the Jacobi matrix of the physicists' Hermite polynomials.
HermiteRule compute_hermite(int m) {
  Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(m, m);
  for (int k = 1; k < m; ++k) {
    const double b = std::sqrt(0.5 * k);
    jacobi(k, k - 1) = b;
    jacobi(k - 1, k) = b;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(jacobi);
  HermiteRule rule;
  rule.nodes.resize(m);
  rule.weights.resize(m);
  for (int k = 0; k < m; ++k) {
    rule.nodes[k] = eig.eigenvalues()(k);
    const double v = eig.eigenvectors()(0, k);
    rule.weights[k] = v * v;
  }
  // Enforce exact symmetry.
  for (int k = 0; k < m / 2; ++k) {
    const int j = m - 1 - k;
    const double t = 0.5 * (rule.nodes[j] - rule.nodes[k]);
    const double w = 0.5 * (rule.weights[j] + rule.weights[k]);
    rule.nodes[k] = -t;
    rule.nodes[j] = t;
    rule.weights[k] = rule.weights[j] = w;
  }
  if (m % 2 == 1) rule.nodes[m / 2] = 0.0;
  double total = 0.0;
  for (double w : rule.weights) total += w;
  for (double& w : rule.weights) w /= total;
  return rule;
}

const HermiteRule& hermite(int m) {
  static std::mutex mutex;
  static std::map<int, HermiteRule> cache;
  std::lock_guard<std::mutex> lock(mutex);
  auto it = cache.find(m);
  if (it == cache.end()) it = cache.emplace(m, compute_hermite(m)).first;
  return it->second;
}

void check_reference(const Gaussian1D& ref) {
  if (!(ref.var > 0.0) || !std::isfinite(ref.var) || !std::isfinite(ref.mean))
    throw Error(ErrorKind::InvalidInput, "quadrature reference must have finite mean and positive variance");
}

// Fills nodes/log_weights from per-node log terms and returns the log sum.
double finish_terms(const std::vector<double>& x, const std::vector<double>& terms,
                    LogIntegral& out) {
  const double lse = log_sum_exp(terms);
  out.nodes = x;
  out.log_weights.resize(terms.size());
  double max_term = kNegInf;
  for (std::size_t k = 0; k < terms.size(); ++k) {
    out.log_weights[k] = terms[k] - lse;
    max_term = std::max(max_term, terms[k]);
  }
  out.max_share = std::isfinite(lse) ? std::exp(max_term - lse) : 1.0;
  return lse;
}

}  // namespace

QuadratureGrid adapt_grid(const Gaussian1D& reference, int m) {
  check_reference(reference);
  if (m < 11 || m % 2 == 0)
    throw Error(ErrorKind::InvalidInput, "Gauss-Hermite node count must be odd and >= 11");
  const HermiteRule& rule = hermite(m);
  QuadratureGrid grid;
  grid.center = reference.mean;
  grid.scale = std::sqrt(reference.var);
  grid.nodes.resize(m);
  grid.weights = rule.weights;
  for (int k = 0; k < m; ++k)
    grid.nodes[k] = reference.mean + std::sqrt(2.0) * grid.scale * rule.nodes[k];
  return grid;
}

QuadratureGrid trapezoid_grid(const Gaussian1D& reference, double half_width, int points) {
  check_reference(reference);
  if (points < 3 || !(half_width > 0.0))
    throw Error(ErrorKind::InvalidInput, "trapezoid grid needs >= 3 points and a positive span");
  QuadratureGrid grid;
  grid.center = reference.mean;
  grid.scale = std::sqrt(reference.var);
  grid.nodes.resize(points);
  grid.weights.resize(points);
  const double h = 2.0 * half_width / (points - 1);
  double total = 0.0;
  for (int k = 0; k < points; ++k) {
    const double z = -half_width + k * h;
    grid.nodes[k] = reference.mean + grid.scale * z;
    double w = h * normal_pdf(z);
    if (k == 0 || k == points - 1) w *= 0.5;
    grid.weights[k] = w;
    total += w;
  }
  for (double& w : grid.weights) w /= total;
  return grid;
}

Integral integrate(const std::function<double(double)>& g, const QuadratureGrid& grid) {
  Integral out;
  double sum = 0.0;
  double abs_sum = 0.0;
  double abs_max = 0.0;
  for (std::size_t k = 0; k < grid.nodes.size(); ++k) {
    const double v = g(grid.nodes[k]);
    if (!std::isfinite(v)) {
      ++out.nonfinite;
      continue;
    }
    const double c = grid.weights[k] * v;
    sum += c;
    abs_sum += std::abs(c);
    abs_max = std::max(abs_max, std::abs(c));
  }
  if (out.nonfinite == static_cast<int>(grid.nodes.size()))
    throw Error(ErrorKind::NumericalFailure, "integrand is non-finite at every quadrature node");
  out.value = sum;
  out.max_share = abs_sum > 0.0 ? abs_max / abs_sum : 0.0;
  double end = 0.0;
  for (std::size_t k : {std::size_t{0}, grid.nodes.size() - 1}) {
    const double v = g(grid.nodes[k]);
    if (std::isfinite(v)) end = std::max(end, std::abs(grid.weights[k] * v));
  }
  out.unstable = out.max_share > 0.9 || out.nonfinite > 0 || (abs_sum > 0.0 && end > kEndShare * abs_sum);
  return out;
}

Gaussian1D laplace_reference(const std::function<LogDensityDerivs(double)>& log_g,
                             const Gaussian1D& start) {
  check_reference(start);
  const double scale = std::sqrt(start.var);
  double x = start.mean;
  LogDensityDerivs e = log_g(x);
  if (!std::isfinite(e.value) || !std::isfinite(e.d1) || !std::isfinite(e.d2)) return start;
  for (int it = 0; it < 200; ++it) {
    double step = e.d2 < 0.0 ? -e.d1 / e.d2 : (e.d1 >= 0.0 ? scale : -scale);
    const double cap = 20.0 * scale;
    step = std::clamp(step, -cap, cap);
    double t = 1.0;
    bool accepted = false;
    LogDensityDerivs trial{};
    for (int bt = 0; bt < 60; ++bt) {
      trial = log_g(x + t * step);
      if (std::isfinite(trial.value) && trial.value >= e.value - 1e-14 * std::abs(e.value)) {
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    if (!accepted) break;
    x += t * step;
    e = trial;
    if (std::abs(t * step) < 1e-11 * (1.0 + std::abs(x)) && e.d2 < 0.0) break;
  }
  if (!(e.d2 < 0.0) || !std::isfinite(e.d2)) return start;
  return {x, -1.0 / e.d2};
}

LogIntegral integrate_log_dense(const std::function<double(double)>& log_g,
                                const Gaussian1D& reference, const QuadOptions& opts) {
  check_reference(reference);
  if (opts.fallback_points < 3 || !(opts.fallback_half_width > 0.0))
    throw Error(ErrorKind::InvalidInput, "trapezoid grid needs >= 3 points and a positive span");
  const double sd = std::sqrt(reference.var);
  const double h = 2.0 * opts.fallback_half_width * sd / (opts.fallback_points - 1);
  const long half = (opts.fallback_points - 1) / 2;
  int bad = 0;
  auto eval = [&](long j) {
    double lg = log_g(reference.mean + j * h);
    if (std::isnan(lg) || lg == std::numeric_limits<double>::infinity()) {
      ++bad;
      lg = kNegInf;
    }
    return lg;
  };
  // left[k] holds index -k, right[k] holds index k (k >= 1).
  std::vector<double> left{eval(0)};
  std::vector<double> right{kNegInf};
  for (long j = 1; j <= half; ++j) {
    left.push_back(eval(-j));
    right.push_back(eval(j));
  }
  const double tol = std::log(1e-15);
  auto decayed = [&](const std::vector<double>& side, double total) {
    return side.back() == kNegInf || side.back() - total < tol;
  };
  bool tail = false;
  for (;;) {
    const double total = log_sum_exp(std::vector<double>{log_sum_exp(left), log_sum_exp(right)});
    const bool l_ok = decayed(left, total);
    const bool r_ok = decayed(right, total);
    if (l_ok && r_ok && std::isfinite(total)) break;
    if (static_cast<long>(left.size() + right.size()) * 2 > opts.max_points || !std::isfinite(total)) {
      tail = true;
      break;
    }
    if (!l_ok) {
      const long k0 = static_cast<long>(left.size());
      for (long k = k0; k < 2 * k0; ++k) left.push_back(eval(-k));
    }
    if (!r_ok) {
      const long k0 = static_cast<long>(right.size());
      for (long k = k0; k < 2 * k0; ++k) right.push_back(eval(k));
    }
  }
  const long nl = static_cast<long>(left.size()) - 1;
  const long nr = static_cast<long>(right.size()) - 1;
  if (bad == nl + nr + 1)
    throw Error(ErrorKind::NumericalFailure, "integrand is non-finite at every quadrature node");
  std::vector<double> x;
  std::vector<double> terms;
  x.reserve(nl + nr + 1);
  terms.reserve(nl + nr + 1);
  const double log_h = std::log(h);
  for (long j = -nl; j <= nr; ++j) {
    const double lg = j <= 0 ? left[-j] : right[j];
    x.push_back(reference.mean + j * h);
    terms.push_back(lg + log_h + ((j == -nl || j == nr) ? std::log(0.5) : 0.0));
  }
  LogIntegral out;
  out.fallback_used = true;
  out.log_value = finish_terms(x, terms, out);
  out.unstable = bad > 0 || out.max_share > opts.concentration;
  out.tail_dominated = tail || !std::isfinite(out.log_value);
  return out;
}

LogIntegral integrate_log(const std::function<double(double)>& log_g,
                          const Gaussian1D& reference, const QuadOptions& opts) {
  if (!opts.unimodal) return integrate_log_dense(log_g, reference, opts);
  const QuadratureGrid grid = adapt_grid(reference, opts.nodes);
  std::vector<double> terms(grid.nodes.size());
  int bad = 0;
  for (std::size_t k = 0; k < grid.nodes.size(); ++k) {
    const double f = grid.nodes[k];
    double lg = log_g(f);
    if (std::isnan(lg) || lg == std::numeric_limits<double>::infinity()) {
      ++bad;
      lg = kNegInf;
    }
    terms[k] = std::log(grid.weights[k]) + lg - log_gaussian(f, reference.mean, reference.var);
  }
  LogIntegral out;
  out.log_value = finish_terms(grid.nodes, terms, out);
  // Mass on the outermost nodes means the integrand is not resolved by the
  // reference (too wide, or not decaying at all).
  const double end_share = std::exp(std::max(out.log_weights.front(), out.log_weights.back()));
  out.unstable = bad > 0 || out.max_share > opts.concentration || !std::isfinite(out.log_value) ||
                 end_share > kEndShare;
  if (!out.unstable) return out;

  LogIntegral dense = integrate_log_dense(log_g, reference, opts);
  dense.unstable = true;
  return dense;
}

}  // namespace gploo
