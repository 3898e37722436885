#include <doctest.h>

#include <Eigen/Cholesky>
#include <cmath>
#include <random>

#include "gploo/error.hpp"
#include "gploo/latent.hpp"
#include "gploo/numeric.hpp"
#include "support.hpp"

using namespace gploo;

namespace {

struct GaussianTruth {
  VectorXd mean;
  MatrixXd cov;
  double log_marginal;
};

GaussianTruth gaussian_truth(const MatrixXd& k, double s2, const VectorXd& y) {
  const Eigen::Index n = y.size();
  MatrixXd c = k;
  c.diagonal().array() += s2;
  Eigen::LLT<MatrixXd> llt(c);
  GaussianTruth t;
  t.mean = k * llt.solve(y);
  t.cov = k - k * llt.solve(k);
  const MatrixXd l = llt.matrixL();
  t.log_marginal = -0.5 * y.dot(llt.solve(y)) - l.diagonal().array().log().sum() - 0.5 * n * kLogTwoPi;
  return t;
}

Dataset with_y(const VectorXd& y) {
  Dataset d;
  d.x = MatrixXd::Zero(y.size(), 1);
  d.y = y;
  return d;
}

MatrixXd se_cov(const Dataset& d, double log_mag, double log_ell) {
  return build_covariance(d.x, KernelSpec::squared_exponential(log_mag, VectorXd::Constant(1, log_ell)));
}

}  // namespace

TEST_CASE("site terms and cavities") {
  const SiteTerm s = SiteTerm::from_moments(2.0, 1.0);
  CHECK(s.tau == doctest::Approx(1.0));
  CHECK(s.nu == doctest::Approx(2.0));
  const CavityDistribution c = cavity_remove({1.0, 0.5}, s);
  CHECK(c.mean == doctest::Approx(0.0).scale(1.0));
  CHECK(c.var == doctest::Approx(1.0));
  const CavityDistribution same = cavity_remove({1.3, 0.7}, SiteTerm{0.0, 0.0});
  CHECK(same.mean == doctest::Approx(1.3));
  CHECK(same.var == doctest::Approx(0.7));
  CHECK_THROWS_AS(cavity_remove({0.0, 0.5}, SiteTerm{3.0, 0.0}), Error);
  // Round trip: cavity combined with its site gives the marginal.
  const Gaussian1D m{0.4, 0.3};
  const SiteTerm t{1.7, -0.2};
  const CavityDistribution cav = cavity_remove(m, t);
  const double prec = 1.0 / cav.var + t.tau;
  CHECK(1.0 / prec == doctest::Approx(m.var).epsilon(1e-10));
  CHECK((cav.mean / cav.var + t.nu) / prec == doctest::Approx(m.mean).epsilon(1e-10));
}

TEST_CASE("Laplace and EP are exact for the gaussian likelihood") {
  std::mt19937_64 rng(11);
  const int n = 7;
  const MatrixXd k = testing::random_spd(n, rng);
  std::normal_distribution<double> z;
  VectorXd y(n);
  for (int i = 0; i < n; ++i) y(i) = z(rng);
  const double s2 = 0.4;
  const GaussianTruth truth = gaussian_truth(k, s2, y);
  const Dataset data = with_y(y);
  const LikelihoodSpec lik = LikelihoodSpec::gaussian(s2);

  const LaplaceState la = laplace_fit(data, k, lik);
  CHECK(la.iterations <= 2);
  CHECK((la.posterior.mean - truth.mean).cwiseAbs().maxCoeff() < 1e-10);
  CHECK((la.posterior.cov - truth.cov).cwiseAbs().maxCoeff() < 1e-10);
  CHECK(la.posterior.log_marginal == doctest::Approx(truth.log_marginal).epsilon(1e-10));
  CHECK((la.posterior.marginal_var - la.posterior.cov.diagonal()).cwiseAbs().maxCoeff() == 0.0);

  const EPState ep = ep_fit(data, k, lik);
  CHECK(ep.converged);
  CHECK((ep.sites.means() - y).cwiseAbs().maxCoeff() < 1e-8);
  CHECK((ep.sites.variances().array() - s2).abs().maxCoeff() < 1e-8);
  CHECK((ep.posterior.mean - truth.mean).cwiseAbs().maxCoeff() < 1e-8);
  CHECK(ep.posterior.log_marginal == doctest::Approx(truth.log_marginal).epsilon(1e-8));

  // Cavities match the closed-form leave-one-out values.
  MatrixXd c = k;
  c.diagonal().array() += s2;
  const MatrixXd cinv = c.inverse();
  for (int i = 0; i < n; ++i) {
    const double cbar = cinv(i, i);
    const double g = (cinv * y)(i);
    const CavityDistribution lr = la_loo_cavity_lr(la, i);
    const CavityDistribution site = la_loo_cavity_site(la, i);
    CHECK(lr.mean == doctest::Approx(y(i) - g / cbar).epsilon(1e-10));
    CHECK(lr.var == doctest::Approx(1.0 / cbar - s2).epsilon(1e-10));
    CHECK(site.mean == doctest::Approx(lr.mean).epsilon(1e-10));
    CHECK(site.var == doctest::Approx(lr.var).epsilon(1e-10));
    CHECK(ep.cavities[i].mean == doctest::Approx(lr.mean).epsilon(1e-8));
    CHECK(ep.cavities[i].var == doctest::Approx(lr.var).epsilon(1e-8));
  }
}

TEST_CASE("zero outcomes give a zero mode") {
  std::mt19937_64 rng(2);
  const MatrixXd k = testing::random_spd(4, rng);
  const LaplaceState la = laplace_fit(with_y(VectorXd::Zero(4)), k, LikelihoodSpec::gaussian(1.0));
  CHECK(la.mode.cwiseAbs().maxCoeff() < 1e-14);
  CHECK(la.sites.means().cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("probit n=1 Laplace mode matches bisection") {
  const Dataset d = with_y(VectorXd::Ones(1));
  const MatrixXd k = MatrixXd::Ones(1, 1);
  const LaplaceState la = laplace_fit(d, k, LikelihoodSpec::probit());
  // Root of f - phi(f)/Phi(f) on [0, 1].
  double lo = 0.0, hi = 1.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    (mid - normal_pdf(mid) / normal_cdf(mid) > 0.0 ? hi : lo) = mid;
  }
  CHECK(la.mode(0) == doctest::Approx(0.5 * (lo + hi)).epsilon(1e-10));
  CHECK(la.residual < 1e-8);
  // Removing the only site restores the prior.
  const CavityDistribution c = la_loo_cavity_site(la, 0);
  CHECK(c.mean == doctest::Approx(0.0).scale(1.0));
  CHECK(c.var == doctest::Approx(1.0).epsilon(1e-10));
}

TEST_CASE("probit n=1 EP cavity is the prior") {
  const Dataset d = with_y(VectorXd::Ones(1));
  const EPState ep = ep_fit(d, MatrixXd::Ones(1, 1), LikelihoodSpec::probit());
  REQUIRE(ep.converged);
  CHECK(ep.cavities[0].mean == doctest::Approx(0.0).scale(1.0));
  CHECK(ep.cavities[0].var == doctest::Approx(1.0).epsilon(1e-8));
  CHECK(std::exp(ep.tilted_log_z0(0)) == doctest::Approx(0.5).epsilon(1e-8));
  // With a single site, log Z_EP is the exact evidence Phi(0).
  CHECK(ep.posterior.log_marginal == doctest::Approx(std::log(0.5)).epsilon(1e-8));
}

TEST_CASE("EP moment matching on synthetic probit data") {
  const Dataset d = testing::probit_data(100, 5);
  const MatrixXd k = se_cov(d, std::log(4.0), std::log(0.8));
  EPOptions opts;
  opts.tol = 1e-9;
  const EPState ep = ep_fit(d, k, LikelihoodSpec::probit(), opts);
  REQUIRE(ep.converged);
  for (Eigen::Index i = 0; i < d.n(); ++i) {
    CHECK(std::abs(ep.posterior.mean(i) - ep.tilted_mean(i)) < 1e-6);
    CHECK(std::abs(ep.posterior.marginal_var(i) - ep.tilted_var(i)) < 1e-6);
  }
  // Sigma = (K^-1 + T)^-1 for the stored sites.
  const MatrixXd& sig = ep.posterior.cov;
  CHECK((sig + k * ep.sites.tau.asDiagonal() * sig - k).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("Laplace stationarity and route identity on probit data") {
  const Dataset d = testing::probit_data(60, 9);
  const MatrixXd k = se_cov(d, std::log(3.0), std::log(0.6));
  const LaplaceState la = laplace_fit(d, k, LikelihoodSpec::probit());
  CHECK(la.residual < 1e-8);
  CHECK((la.mode - k * la.grad).cwiseAbs().maxCoeff() < 1e-8 * k.norm());
  for (Eigen::Index i = 0; i < d.n(); ++i) {
    const CavityDistribution a = la_loo_cavity_lr(la, i);
    const CavityDistribution b = la_loo_cavity_site(la, i);
    CHECK(std::abs(a.mean - b.mean) < 1e-8);
    CHECK(std::abs(a.var - b.var) < 1e-8);
  }
  // Site mean mu~ = f^ + g^ / h^.
  for (Eigen::Index i = 0; i < d.n(); ++i)
    CHECK(la.sites.means()(i) == doctest::Approx(la.mode(i) + la.grad(i) / la.neg_hess(i)).epsilon(1e-10));
}

TEST_CASE("permuting observations permutes the fit") {
  const Dataset d = testing::probit_data(30, 4);
  const KernelSpec ks = KernelSpec::squared_exponential(std::log(2.0), VectorXd::Constant(1, std::log(0.7)));
  Eigen::PermutationMatrix<Eigen::Dynamic> p(30);
  p.setIdentity();
  std::mt19937_64 rng(1);
  std::shuffle(p.indices().data(), p.indices().data() + 30, rng);
  Dataset dp;
  dp.x = p * d.x;
  dp.y = p * d.y;
  const MatrixXd k = build_covariance(d.x, ks);
  const MatrixXd kp = build_covariance(dp.x, ks);
  const LikelihoodSpec lik = LikelihoodSpec::probit();
  const LaplaceState a = laplace_fit(d, k, lik);
  const LaplaceState b = laplace_fit(dp, kp, lik);
  CHECK((p * a.mode - b.mode).cwiseAbs().maxCoeff() < 1e-8);
  CHECK(a.posterior.log_marginal == doctest::Approx(b.posterior.log_marginal).epsilon(1e-8));
  const EPState ea = ep_fit(d, k, lik);
  const EPState eb = ep_fit(dp, kp, lik);
  CHECK((p * ea.tilted_log_z0 - eb.tilted_log_z0).cwiseAbs().maxCoeff() < 1e-6);
  CHECK(ea.posterior.log_marginal == doctest::Approx(eb.posterior.log_marginal).epsilon(1e-8));
}

TEST_CASE("robust EP on student-t data keeps the posterior valid") {
  Dataset d = testing::regression_data(40, 8, 0.2);
  d.y(5) += 6.0;
  d.y(20) -= 5.0;
  const MatrixXd k = se_cov(d, 0.0, 0.0);
  const EPState ep = ep_fit(d, k, LikelihoodSpec::student_t(0.2, 4.0));
  CHECK(ep.robust);
  CHECK(ep.converged);
  CHECK(ep.posterior.marginal_var.minCoeff() > 0.0);
  const LaplaceState la = laplace_fit(d, k, LikelihoodSpec::student_t(0.2, 4.0));
  CHECK(la.residual < 1e-8);
}

TEST_CASE("invalid covariance sizes are rejected") {
  const Dataset d = with_y(VectorXd::Ones(3));
  CHECK_THROWS_AS(laplace_fit(d, MatrixXd::Identity(2, 2), LikelihoodSpec::probit()), Error);
  CHECK_THROWS_AS(ep_fit(d, MatrixXd::Identity(2, 2), LikelihoodSpec::probit()), Error);
}
