#include <atomic>
#include <cmath>
#include <limits>
#include <thread>

#include "gploo/error.hpp"
#include "gploo/loo.hpp"

namespace gploo {
namespace {

VectorXd drop(const VectorXd& v, Eigen::Index i) {
  VectorXd out(v.size() - 1);
  out << v.head(i), v.tail(v.size() - i - 1);
  return out;
}

MatrixXd drop(const MatrixXd& m, Eigen::Index i) {
  const Eigen::Index n = m.rows();
  const Eigen::Index t = n - i - 1;
  MatrixXd out(n - 1, n - 1);
  out.topLeftCorner(i, i) = m.topLeftCorner(i, i);
  out.topRightCorner(i, t) = m.topRightCorner(i, t);
  out.bottomLeftCorner(t, i) = m.bottomLeftCorner(t, i);
  out.bottomRightCorner(t, t) = m.bottomRightCorner(t, t);
  return out;
}

struct Fold {
  double lpd = std::numeric_limits<double>::quiet_NaN();
  double pit = std::numeric_limits<double>::quiet_NaN();
  std::string failure;
};

Gaussian1D fold_predictive(const Dataset& data, const MatrixXd& k, const LikelihoodSpec& lik,
                           InferenceMethod method, Eigen::Index i,
                           const BruteForceOptions& opts) {
  if (data.n() == 1) return {0.0, k(0, 0)};
  const Dataset sub = data.without(i);
  const MatrixXd ksub = drop(k, i);
  const VectorXd kstar = drop(VectorXd(k.col(i)), i);
  const double kss = k(i, i);
  if (method == InferenceMethod::Laplace) {
    LaplaceOptions lo = opts.laplace;
    if (opts.laplace_warm) lo.init = drop(opts.laplace_warm->mode, i);
    const LaplaceState st = laplace_fit(sub, ksub, lik, lo);
    const SiteGaussian approx(ksub, st.sites.tau, st.sites.nu);
    Gaussian1D pred = approx.predict(kstar, kss);
    pred.mean = kstar.dot(st.alpha);
    return pred;
  }
  EPOptions eo = opts.ep;
  if (opts.ep_warm) {
    const SiteParams& w = opts.ep_warm->sites;
    eo.init = SiteParams{drop(w.log_z, i), drop(w.tau, i), drop(w.nu, i)};
  }
  const EPState st = ep_fit(sub, ksub, lik, eo);
  if (!st.converged)
    throw Error(ErrorKind::NonConvergence,
                "EP did not converge in " + std::to_string(st.iterations) + " iterations");
  const SiteGaussian approx(ksub, st.sites.tau, st.sites.nu);
  return approx.predict(kstar, kss);
}

}  // namespace

const char* to_string(InferenceMethod m) {
  return m == InferenceMethod::Laplace ? "laplace" : "ep";
}

InferenceMethod inference_from_string(const std::string& name) {
  if (name == "laplace" || name == "la") return InferenceMethod::Laplace;
  if (name == "ep") return InferenceMethod::EP;
  throw Error(ErrorKind::InvalidInput, "unknown inference method '" + name + "'");
}

LooReport brute_force_loo(const Dataset& data, const MatrixXd& k, const LikelihoodSpec& lik,
                          InferenceMethod method, std::span<const int> indices,
                          const BruteForceOptions& opts) {
  const Eigen::Index n = data.n();
  if (n == 0 || k.rows() != n || k.cols() != n)
    throw Error(ErrorKind::InvalidInput, "brute force needs a non-empty dataset and an n x n covariance");
  std::vector<int> todo;
  if (indices.empty()) {
    for (Eigen::Index i = 0; i < n; ++i) todo.push_back(static_cast<int>(i));
  } else {
    for (int i : indices) {
      if (i < 0 || i >= n) throw Error(ErrorKind::InvalidInput, "fold index out of range");
      todo.push_back(i);
    }
  }

  std::vector<Fold> folds(n);
  std::vector<bool> evaluated(n, false);
  for (int i : todo) evaluated[i] = true;
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t j = next++; j < todo.size(); j = next++) {
      const int i = todo[j];
      Fold& f = folds[i];
      try {
        const Gaussian1D pred = fold_predictive(data, k, lik, method, i, opts);
        const Observation obs = observation(data, i);
        f.lpd = likelihood_moments(obs, pred, lik).log_z0;
        if (lik.continuous()) f.pit = predictive_cdf(obs.y, pred, lik);
      } catch (const Error& e) {
        f.failure = e.what();
      }
    }
  };
  const int threads = std::max(1, std::min<int>(opts.threads, static_cast<int>(todo.size())));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
  }

  VectorXd lpd(n);
  VectorXd pit(n);
  std::vector<PointFailure> failures;
  for (Eigen::Index i = 0; i < n; ++i) {
    lpd(i) = folds[i].lpd;
    pit(i) = folds[i].pit;
    if (!evaluated[i]) failures.push_back({static_cast<int>(i), "not evaluated"});
    else if (!folds[i].failure.empty()) failures.push_back({static_cast<int>(i), folds[i].failure});
  }
  LooReport r = make_report(std::string("exact-") + to_string(method), std::move(lpd), std::move(failures));
  if (lik.continuous()) r.pit = std::move(pit);
  return r;
}

}  // namespace gploo
