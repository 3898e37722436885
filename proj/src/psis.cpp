#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

#include "gploo/error.hpp"
#include "gploo/hyper.hpp"
#include "gploo/numeric.hpp"

namespace gploo {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double lse(const std::vector<double>& v) { return log_sum_exp(v); }

double gpd_quantile(double p, double k, double sigma) {
  if (k == 0.0) return -sigma * std::log1p(-p);
  return sigma * std::expm1(-k * std::log1p(-p)) / k;
}

}  // namespace

double effective_sample_size(const VectorXd& w) {
  const double s2 = w.squaredNorm();
  if (!(s2 > 0.0)) throw Error(ErrorKind::InvalidInput, "weights must not all be zero");
  return 1.0 / s2;
}

GpdFit gpd_fit(std::vector<double> x) {
  std::sort(x.begin(), x.end());
  const std::size_t n = x.size();
  if (n < 2) throw Error(ErrorKind::InvalidInput, "generalized Pareto fit needs at least two values");
  const double prior = 3.0;
  const std::size_t m = 30 + static_cast<std::size_t>(std::floor(std::sqrt(static_cast<double>(n))));
  const double xstar = x[static_cast<std::size_t>(std::floor(n / 4.0 + 0.5)) - 1];
  std::vector<double> theta(m);
  std::vector<double> ltheta(m);
  for (std::size_t j = 0; j < m; ++j) {
    theta[j] = 1.0 / x[n - 1] + (1.0 - std::sqrt(m / (j + 0.5))) / prior / xstar;
    // Profile log-likelihood.
    const double a = -theta[j];
    double k = 0.0;
    for (double xi : x) k += std::log1p(a * xi);
    k /= static_cast<double>(n);
    const double l = n * (std::log(a / k) - k - 1.0);
    ltheta[j] = std::isfinite(l) ? l : kNegInf;
  }
  const double total = lse(ltheta);
  double theta_hat = 0.0;
  for (std::size_t j = 0; j < m; ++j) theta_hat += theta[j] * std::exp(ltheta[j] - total);
  double k = 0.0;
  for (double xi : x) k += std::log1p(-theta_hat * xi);
  k /= static_cast<double>(n);
  GpdFit fit;
  fit.sigma = -k / theta_hat;
  // Weakly informative prior pulling k towards 0.5.
  fit.k = (static_cast<double>(n) * k + 5.0) / (static_cast<double>(n) + 10.0);
  if (std::isnan(fit.k)) fit.k = std::numeric_limits<double>::infinity();
  return fit;
}

PsisResult psis_smooth(const VectorXd& log_weights) {
  PsisResult r;
  r.log_weights = log_weights;
  const Eigen::Index s = log_weights.size();
  if (s < kPsisMinSamples) {
    r.warnings.push_back("too few samples (" + std::to_string(s) + ") for a Pareto tail fit");
    return r;
  }
  if (!log_weights.allFinite()) throw Error(ErrorKind::InvalidInput, "log weights must be finite");
  const int m = static_cast<int>(std::ceil(std::min(0.2 * s, 3.0 * std::sqrt(static_cast<double>(s)))));
  r.tail_size = m;
  const double mx = log_weights.maxCoeff();
  std::vector<Eigen::Index> order(s);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index a, Eigen::Index b) { return log_weights(a) < log_weights(b); });
  const double cutoff = log_weights(order[s - m - 1]) - mx;
  const double exp_cut = std::exp(cutoff);
  std::vector<double> exceed(m);
  for (int j = 0; j < m; ++j) exceed[j] = std::exp(log_weights(order[s - m + j]) - mx) - exp_cut;
  if (exceed.back() <= 0.0) {
    r.warnings.push_back("tail weights are all equal; no Pareto fit");
    return r;
  }
  const GpdFit fit = gpd_fit(exceed);
  r.khat = fit.k;
  if (std::isfinite(fit.k)) {
    for (int j = 0; j < m; ++j) {
      const double q = gpd_quantile((j + 0.5) / m, fit.k, fit.sigma) + exp_cut;
      r.log_weights(order[s - m + j]) = std::min(std::log(q), 0.0) + mx;
    }
  }
  if (!(fit.k <= kKhatWarn)) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "Pareto k-hat %.2f exceeds %.1f; importance weights are unreliable",
                  fit.k, kKhatWarn);
    r.warnings.push_back(buf);
  }
  return r;
}

HierarchicalLoo hierarchical_loo(const WeightedSampleSet& samples,
                                 const std::vector<LooReport>& conditional) {
  const std::size_t s = samples.size();
  if (s == 0 || conditional.size() != s)
    throw Error(ErrorKind::InvalidInput, "one conditional report per hyperparameter sample is required");
  const Eigen::Index n = conditional[0].n();
  for (const LooReport& c : conditional)
    if (c.n() != n) throw Error(ErrorKind::InvalidInput, "conditional reports cover different point sets");

  HierarchicalLoo out;
  out.log_weights = MatrixXd::Constant(n, static_cast<Eigen::Index>(s), kNegInf);
  if (s == 1) {
    out.report = conditional[0];
    out.unweighted = conditional[0];
    for (Eigen::Index i = 0; i < n; ++i)
      if (std::isfinite(conditional[0].lpd(i))) out.log_weights(i, 0) = 0.0;
    return out;
  }

  const VectorXd w = samples.normalized_weights();
  VectorXd lpd = VectorXd::Constant(n, kNaN);
  VectorXd mix = VectorXd::Constant(n, kNaN);
  bool have_pit = true;
  for (const LooReport& c : conditional) have_pit = have_pit && c.pit.has_value();
  VectorXd pit = VectorXd::Constant(n, kNaN);
  std::vector<PointFailure> failures;
  for (Eigen::Index i = 0; i < n; ++i) {
    std::vector<double> inv;   // log w_s - lpd_is
    std::vector<double> lw;    // log w_s
    std::vector<double> fwd;   // log w_s + lpd_is
    std::vector<std::size_t> used;
    for (std::size_t k = 0; k < s; ++k) {
      const double l = conditional[k].lpd(i);
      if (!std::isfinite(l) || !(w(k) > 0.0)) continue;
      const double lwk = std::log(w(k));
      inv.push_back(lwk - l);
      lw.push_back(lwk);
      fwd.push_back(lwk + l);
      used.push_back(k);
    }
    if (used.empty()) {
      failures.push_back({static_cast<int>(i), "no hyperparameter sample has a valid conditional value"});
      continue;
    }
    const double lw_total = lse(lw);
    const double inv_total = lse(inv);
    lpd(i) = lw_total - inv_total;
    mix(i) = lse(fwd) - lw_total;
    double p = 0.0;
    for (std::size_t j = 0; j < used.size(); ++j) {
      const double lwi = inv[j] - inv_total;
      out.log_weights(i, static_cast<Eigen::Index>(used[j])) = lwi;
      if (have_pit) p += std::exp(lwi) * (*conditional[used[j]].pit)(i);
    }
    pit(i) = p;
  }
  out.report = make_report(conditional[0].method, lpd, failures);
  out.unweighted = make_report(conditional[0].method + "-unweighted", mix, failures);
  if (have_pit) out.report.pit = pit;
  for (const std::string& wmsg : samples.warnings) out.report.warnings.push_back(wmsg);
  return out;
}

WeightDiagnostics loo_weight_diagnostics(const WeightedSampleSet& samples, const HierarchicalLoo& loo) {
  const Eigen::Index n = loo.log_weights.rows();
  const Eigen::Index s = loo.log_weights.cols();
  WeightDiagnostics d;
  d.relative_ess = VectorXd::Constant(n, kNaN);
  d.min_relative_ess = 1.0;
  const bool want_khat = static_cast<std::size_t>(s) > kKhatMinSamples || samples.source == SampleSource::External;
  if (want_khat) d.khat = VectorXd::Constant(n, kNaN);
  int warned = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const VectorXd w = loo.log_weights.row(i).transpose().array().exp();
    if (!(w.sum() > 0.0)) continue;
    d.relative_ess(i) = effective_sample_size(w / w.sum()) / static_cast<double>(s);
    d.min_relative_ess = std::min(d.min_relative_ess, d.relative_ess(i));
    if (want_khat) {
      VectorXd lw = loo.log_weights.row(i).transpose();
      if (!lw.allFinite()) continue;
      const PsisResult ps = psis_smooth(lw);
      if (ps.khat) {
        (*d.khat)(i) = *ps.khat;
        d.khat_max = std::max(d.khat_max, *ps.khat);
        if (*ps.khat > kKhatWarn) ++warned;
      }
    }
  }
  if (warned > 0)
    d.warnings.push_back(std::to_string(warned) + " point(s) with Pareto k-hat above 0.7");
  return d;
}

}  // namespace gploo
