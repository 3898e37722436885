#include <doctest.h>

#include <cmath>
#include <random>

#include "gploo/error.hpp"
#include "gploo/loo.hpp"
#include "gploo/numeric.hpp"
#include "support.hpp"

using namespace gploo;

namespace {

Dataset with_y(const VectorXd& y) {
  Dataset d;
  d.x = MatrixXd::Zero(y.size(), 1);
  d.y = y;
  return d;
}

Dataset single(double y) { return with_y(VectorXd::Constant(1, y)); }

std::vector<LatentMarginal> one_marginal(double mean, double var) {
  std::vector<LatentMarginal> m(1);
  m[0].base = {mean, var};
  return m;
}

LooReport from_values(const std::string& method, std::vector<double> v) {
  return make_report(method, Eigen::Map<VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())));
}

struct GaussianProblem {
  Dataset data;
  MatrixXd k;
  double s2;
};

GaussianProblem gaussian_problem(int n, std::uint64_t seed, double s2 = 0.3) {
  GaussianProblem p{testing::regression_data(n, seed), {}, s2};
  p.k = build_covariance(p.data.x, KernelSpec::squared_exponential(0.0, VectorXd::Constant(1, std::log(0.9))));
  return p;
}

}  // namespace

TEST_CASE("gaussian exact LOO on hand-checkable cases") {
  const GaussianLooResult a = gaussian_exact_loo(MatrixXd::Ones(1, 1), 1.0, VectorXd::Zero(1));
  CHECK(a.mean(0) == doctest::Approx(0.0).scale(1.0));
  CHECK(a.var(0) == doctest::Approx(1.0));
  CHECK(a.lpd(0) == doctest::Approx(log_gaussian(0.0, 0.0, 2.0)).epsilon(1e-14));
  CHECK(a.lpd(0) == doctest::Approx(-1.2655).epsilon(1e-4));

  VectorXd y(2);
  y << 1.0, -1.0;
  const GaussianLooResult b = gaussian_exact_loo(MatrixXd::Identity(2, 2), 1.0, y);
  CHECK(b.c_diag(0) == doctest::Approx(0.5));
  CHECK(b.g(0) == doctest::Approx(0.5));
  CHECK(b.g(1) == doctest::Approx(-0.5));
  CHECK(b.mean.cwiseAbs().maxCoeff() < 1e-14);
  CHECK(b.var(1) == doctest::Approx(1.0));
  CHECK(b.lpd(0) == doctest::Approx(-1.5155).epsilon(1e-4));
  CHECK(b.lpd(1) == doctest::Approx(b.lpd(0)));
}

TEST_CASE("gaussian exact LOO matches brute-force refits") {
  std::mt19937_64 rng(17);
  const MatrixXd k = testing::random_spd(5, rng);
  std::normal_distribution<double> z;
  VectorXd y(5);
  for (int i = 0; i < 5; ++i) y(i) = z(rng);
  const GaussianLooResult r = gaussian_exact_loo(k, 0.5, y);
  const Dataset d = with_y(y);
  const LooReport bf = brute_force_loo(d, k, LikelihoodSpec::gaussian(0.5), InferenceMethod::Laplace);
  CHECK(bf.failures.empty());
  CHECK((bf.lpd - r.lpd).cwiseAbs().maxCoeff() < 1e-8);
  // Independent refit oracle: conditional Gaussian of y_i given y_-i.
  MatrixXd c = k;
  c.diagonal().array() += 0.5;
  for (int i = 0; i < 5; ++i) {
    std::vector<int> keep;
    for (int j = 0; j < 5; ++j)
      if (j != i) keep.push_back(j);
    MatrixXd cs(4, 4);
    VectorXd cross(4), ys(4);
    for (int a = 0; a < 4; ++a) {
      cross(a) = c(keep[a], i);
      ys(a) = y(keep[a]);
      for (int b = 0; b < 4; ++b) cs(a, b) = c(keep[a], keep[b]);
    }
    const VectorXd w = cs.llt().solve(cross);
    CHECK(r.lpd(i) == doctest::Approx(log_gaussian(y(i), w.dot(ys), c(i, i) - w.dot(cross))).epsilon(1e-10));
  }
}

TEST_CASE("degenerate gaussian LOO variance is an error") {
  try {
    gaussian_exact_loo(MatrixXd::Zero(1, 1), 1.0, VectorXd::Zero(1));
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::DegenerateModel);
  }
}

TEST_CASE("oracle equivalence for the gaussian likelihood") {
  const GaussianProblem p = gaussian_problem(25, 3);
  const LikelihoodSpec lik = LikelihoodSpec::gaussian(p.s2);
  const GaussianLooResult exact = gaussian_exact_loo(p.k, p.s2, p.data.y);
  const LaplaceState la = laplace_fit(p.data, p.k, lik);
  const EPState ep = ep_fit(p.data, p.k, lik);
  const LooReport reports[] = {
      brute_force_loo(p.data, p.k, lik, InferenceMethod::Laplace),
      brute_force_loo(p.data, p.k, lik, InferenceMethod::EP),
      la_loo(la, p.data, lik, CavityRoute::LinearResponse),
      la_loo(la, p.data, lik, CavityRoute::SiteRemoval),
      ep_loo(ep, p.data, lik),
      q_loo(gaussian_marginals(la.posterior), p.data, lik),
  };
  for (const LooReport& r : reports) {
    CAPTURE(r.method);
    CHECK(r.failures.empty());
    CHECK((r.lpd - exact.lpd).cwiseAbs().maxCoeff() < 1e-6);
  }
  CHECK((reports[2].lpd - exact.lpd).cwiseAbs().maxCoeff() < 1e-8);
  CHECK((reports[4].lpd - exact.lpd).cwiseAbs().maxCoeff() < 1e-8);
  CHECK((reports[2].lpd - reports[3].lpd).cwiseAbs().maxCoeff() < 1e-8);
  // PIT from the cavity agrees with the closed form.
  const LooReport er = to_report(exact, p.data.y, p.s2);
  REQUIRE(er.pit);
  REQUIRE(reports[2].pit);
  CHECK((*er.pit - *reports[2].pit).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("EP-LOO and LA-LOO on a single probit point") {
  const Dataset d = single(1.0);
  const MatrixXd k = MatrixXd::Ones(1, 1);
  const EPState ep = ep_fit(d, k, LikelihoodSpec::probit());
  const LooReport e = ep_loo(ep, d, LikelihoodSpec::probit());
  CHECK(e.lpd(0) == doctest::Approx(std::log(0.5)).epsilon(1e-8));
  CHECK(!e.pit);
  const LaplaceState la = laplace_fit(d, k, LikelihoodSpec::probit());
  const LooReport l = la_loo(la, d, LikelihoodSpec::probit());
  CHECK(l.lpd(0) == doctest::Approx(std::log(0.5)).epsilon(1e-8));
  CHECK(l.cpo(0) <= 1.0);
  const LooReport bf = brute_force_loo(d, k, LikelihoodSpec::probit(), InferenceMethod::EP);
  CHECK(bf.lpd(0) == doctest::Approx(std::log(0.5)).epsilon(1e-12));
}

TEST_CASE("brute force with one point is the prior predictive") {
  const Dataset d = single(0.7);
  const LooReport r = brute_force_loo(d, MatrixXd::Constant(1, 1, 2.0), LikelihoodSpec::gaussian(0.5),
                                      InferenceMethod::Laplace);
  CHECK(r.lpd(0) == doctest::Approx(log_gaussian(0.7, 0.0, 2.5)).epsilon(1e-12));
}

TEST_CASE("brute force subsets and threads give identical results") {
  const Dataset d = testing::probit_data(20, 2);
  const MatrixXd k = build_covariance(d.x, KernelSpec::squared_exponential(std::log(2.0), VectorXd::Constant(1, 0.0)));
  const LikelihoodSpec lik = LikelihoodSpec::probit();
  BruteForceOptions one;
  BruteForceOptions four;
  four.threads = 4;
  const LooReport a = brute_force_loo(d, k, lik, InferenceMethod::EP, {}, one);
  const LooReport b = brute_force_loo(d, k, lik, InferenceMethod::EP, {}, four);
  CHECK((a.lpd - b.lpd).cwiseAbs().maxCoeff() == 0.0);
  const std::vector<int> idx{3, 7};
  const LooReport c = brute_force_loo(d, k, lik, InferenceMethod::EP, idx, one);
  CHECK(c.lpd(3) == a.lpd(3));
  CHECK(c.failed(0));
  CHECK(!c.failed(7));
  // Warm starts do not change the answer.
  const EPState full = ep_fit(d, k, lik);
  BruteForceOptions warm;
  warm.ep_warm = &full;
  const LooReport w = brute_force_loo(d, k, lik, InferenceMethod::EP, {}, warm);
  CHECK((w.lpd - a.lpd).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("Q-LOO closed-form ratio and divergence") {
  const Dataset d = single(0.0);
  const LikelihoodSpec lik = LikelihoodSpec::gaussian(1.0);
  const LooReport r = q_loo(one_marginal(0.0, 0.5), d, lik);
  CHECK(r.lpd(0) == doctest::Approx(-std::log(2.0 * std::sqrt(M_PI))).epsilon(1e-10));
  CHECK(r.lpd(0) == doctest::Approx(-1.2655).epsilon(1e-4));
  const LooReport bad = q_loo(one_marginal(0.0, 1.5), d, lik);
  CHECK(bad.failed(0));
  CHECK(std::isnan(bad.lpd(0)));
  CHECK(!bad.warnings.empty());
  // Probit ratio diverges once the marginal variance reaches one.
  const Dataset pd = single(1.0);
  CHECK(q_loo(one_marginal(0.3, 1.2), pd, LikelihoodSpec::probit()).failed(0));
  const LooReport ok = q_loo(one_marginal(0.3, 0.5), pd, LikelihoodSpec::probit());
  CHECK(!ok.failed(0));
  CHECK(ok.unstable.empty());
}

TEST_CASE("Q-LOO with tilted marginals reproduces the cavity estimate") {
  const Dataset d = testing::probit_data(30, 12);
  const MatrixXd k = build_covariance(d.x, KernelSpec::squared_exponential(std::log(3.0), VectorXd::Constant(1, 0.0)));
  const LikelihoodSpec lik = LikelihoodSpec::probit();
  const LaplaceState la = laplace_fit(d, k, lik);
  const LooReport q = q_loo(tilted_marginals(la), d, lik);
  const LooReport l = la_loo(la, d, lik);
  CHECK((q.lpd - l.lpd).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("TQ-LOO limits") {
  const Dataset d = testing::probit_data(25, 21);
  const MatrixXd k = build_covariance(d.x, KernelSpec::squared_exponential(std::log(2.0), VectorXd::Constant(1, 0.0)));
  const LikelihoodSpec lik = LikelihoodSpec::probit();
  const LaplaceState la = laplace_fit(d, k, lik);
  const auto marg = gaussian_marginals(la.posterior);
  const LooReport q = q_loo(marg, d, lik);
  TruncationConfig zero;
  zero.fixed_c = 0.0;
  const LooReport t0 = tq_loo(marg, d, lik, zero);
  for (Eigen::Index i = 0; i < d.n(); ++i)
    if (!q.failed(i)) CHECK(t0.lpd(i) == q.lpd(i));
  TruncationConfig big;
  big.fixed_c = 10.0;
  const LooReport tinf = tq_loo(marg, d, lik, big);
  const VectorXd pred = training_lpd(marg, d, lik);
  CHECK((tinf.lpd - pred).cwiseAbs().maxCoeff() < 1e-8);
  const LooReport tq = tq_loo(marg, d, lik);
  CHECK(tq.failures.empty());
  CHECK(tq.lpd.allFinite());
  CHECK_THROWS_AS(tq_loo(marg, d, lik, TruncationConfig{0.0, 6.0, {}}), Error);
}

TEST_CASE("WAIC on the analytic gaussian case") {
  const Dataset d = single(0.0);
  const LikelihoodSpec lik = LikelihoodSpec::gaussian(1.0);
  const auto m = one_marginal(0.0, 0.5);
  const CumulantLoo c = cumulant_series_loo(m, d, lik, 2);
  CHECK(c.series.f_one(0) == doctest::Approx(log_gaussian(0.0, 0.0, 1.5)).epsilon(1e-12));
  CHECK(c.series.f_one(0) == doctest::Approx(-1.1216).epsilon(1e-4));
  CHECK(c.series.cumulants(0, 0) == doctest::Approx(-1.1689).epsilon(1e-4));
  CHECK(c.series.cumulants(0, 1) == doctest::Approx(0.125).epsilon(1e-12));
  const LooReport g = waic(m, d, lik, WaicVariant::G);
  const LooReport v = waic(m, d, lik, WaicVariant::V);
  CHECK(g.lpd(0) == doctest::Approx(-1.2162).epsilon(1e-4));
  CHECK(v.lpd(0) == doctest::Approx(-1.2466).epsilon(1e-4));
  // Zero posterior uncertainty: both variants equal the training density.
  const auto sharp = one_marginal(0.3, 1e-14);
  const double train = training_lpd(sharp, d, lik)(0);
  CHECK(waic(sharp, d, lik, WaicVariant::G).lpd(0) == doctest::Approx(train).epsilon(1e-10));
  CHECK(waic(sharp, d, lik, WaicVariant::V).lpd(0) == doctest::Approx(train).epsilon(1e-10));
}

TEST_CASE("cumulant series partial sums") {
  const Dataset d = single(0.0);
  const LikelihoodSpec lik = LikelihoodSpec::gaussian(1.0);
  const auto m = one_marginal(0.0, 0.5);
  const double exact = -std::log(2.0 * std::sqrt(M_PI));
  const double expect[] = {-1.1689, -1.2314, -1.2522};
  double prev_err = INFINITY;
  for (int k = 1; k <= 3; ++k) {
    const CumulantLoo c = cumulant_series_loo(m, d, lik, k);
    CHECK(c.report.lpd(0) == doctest::Approx(expect[k - 1]).epsilon(1e-4));
    const double err = std::abs(c.report.lpd(0) - exact);
    CHECK(err < prev_err);
    prev_err = err;
  }
  const CumulantLoo c3 = cumulant_series_loo(m, d, lik, 3);
  CHECK(c3.series.cumulants(0, 2) == doctest::Approx(-0.125).epsilon(1e-10));
  const CumulantLoo c2 = cumulant_series_loo(m, d, lik, 2);
  CHECK(c2.report.lpd(0) == c2.series.cumulants(0, 0) - 0.5 * c2.series.cumulants(0, 1));
  CHECK_THROWS_AS(cumulant_series_loo(m, d, lik, 7), Error);
  CHECK_THROWS_AS(cumulant_series_loo(m, d, lik, 0), Error);
}

TEST_CASE("sixth-order series approaches Q-LOO on a gaussian regression model") {
  const GaussianProblem p = gaussian_problem(30, 8, 0.3);
  const LikelihoodSpec lik = LikelihoodSpec::gaussian(p.s2);
  const LaplaceState la = laplace_fit(p.data, p.k, lik);
  const auto marg = gaussian_marginals(la.posterior);
  const CumulantLoo c = cumulant_series_loo(marg, p.data, lik, 6);
  const LooReport q = q_loo(marg, p.data, lik);
  CHECK((c.report.lpd - q.lpd).cwiseAbs().maxCoeff() < 1e-3);
}

TEST_CASE("WAIC expansion consistency") {
  const Dataset d = testing::probit_data(20, 30);
  const MatrixXd k = build_covariance(d.x, KernelSpec::squared_exponential(std::log(2.0), VectorXd::Constant(1, 0.0)));
  const LikelihoodSpec lik = LikelihoodSpec::probit();
  const LaplaceState la = laplace_fit(d, k, lik);
  for (const auto& marg : {gaussian_marginals(la.posterior), tilted_marginals(la)}) {
    const CumulantLoo c = cumulant_series_loo(marg, d, lik, 2);
    const LooReport g = waic(marg, d, lik, WaicVariant::G);
    const LooReport v = waic(marg, d, lik, WaicVariant::V);
    for (Eigen::Index i = 0; i < d.n(); ++i) {
      CHECK(std::abs(v.lpd(i) - (c.series.f_one(i) - c.series.cumulants(i, 1))) < 1e-10);
      CHECK(std::abs(g.lpd(i) - (2.0 * c.series.cumulants(i, 0) - c.series.f_one(i))) < 1e-10);
      CHECK(c.series.cumulants(i, 1) >= 0.0);
    }
  }
}

TEST_CASE("LA-LOO agrees with brute-force Laplace on synthetic probit data") {
  const Dataset d = testing::probit_data(100, 77);
  const MatrixXd k = build_covariance(d.x, KernelSpec::squared_exponential(std::log(2.0), VectorXd::Constant(1, std::log(0.8))));
  const LikelihoodSpec lik = LikelihoodSpec::probit();
  const LaplaceState la = laplace_fit(d, k, lik);
  BruteForceOptions opts;
  opts.laplace_warm = &la;
  const LooReport bf = brute_force_loo(d, k, lik, InferenceMethod::Laplace, {}, opts);
  const ComparisonStats s = compare(bf, la_loo(la, d, lik));
  CHECK(std::abs(s.bias) < 1.0);
  CHECK(s.n_compared == 100);
}

TEST_CASE("report invariants") {
  const LooReport r = from_values("q-loo", {-0.5, -1.25, -0.1});
  CHECK(r.sum_lpd == doctest::Approx(-1.85).epsilon(1e-14));
  CHECK(r.cpo(1) == doctest::Approx(std::exp(-1.25)));
  const LooReport f = make_report("q-loo", VectorXd::Constant(3, -1.0), {{1, "diverged"}});
  CHECK(std::isnan(f.lpd(1)));
  CHECK(f.sum_lpd == doctest::Approx(-2.0));
}

TEST_CASE("comparison statistics") {
  const LooReport r = from_values("exact-ep", {-0.5, -1.0, -0.7});
  const ComparisonStats self = compare(r, r);
  CHECK(self.bias == 0.0);
  CHECK(self.std == 0.0);
  const LooReport a = from_values("exact-ep", {0.0, 0.0});
  const LooReport b = from_values("q-loo", {1.0, -1.0});
  const ComparisonStats s = compare(a, b);
  CHECK(s.bias == 0.0);
  CHECK(s.std == doctest::Approx(std::sqrt(2.0)));
  const LooReport c = from_values("q-loo", {1.0, 2.0});
  CHECK(compare(a, c).std == doctest::Approx(std::sqrt(0.5)));
  CHECK(compare(a, c, StdNormalization::TotalBias).std == doctest::Approx(std::sqrt(4.0 + 1.0)));
  const LooReport failed = make_report("q-loo", VectorXd::Constant(2, 0.5), {{0, "diverged"}});
  const ComparisonStats p = compare(a, failed);
  CHECK(p.n_compared == 1);
  CHECK(p.excluded == std::vector<int>{0});
  CHECK(p.bias == doctest::Approx(0.5));
  CHECK_THROWS_AS(compare(a, from_values("q-loo", {1.0, 2.0, 3.0})), Error);
}

TEST_CASE("diagnostics and the p_eff rule of thumb") {
  const LooReport r = from_values("q-loo", std::vector<double>(10, -0.5));
  const Diagnostics none = diagnostics(r, r.lpd);
  CHECK(none.p_eff == 0.0);
  CHECK(none.warnings.empty());
  const VectorXd train = VectorXd::Constant(10, -0.4);  // p_eff/n = 0.1
  const Diagnostics q = diagnostics(r, train);
  CHECK(q.p_eff_over_n == doctest::Approx(0.1));
  CHECK(!q.warnings.empty());
  const LooReport e = from_values("ep-loo", std::vector<double>(10, -0.5));
  CHECK(diagnostics(e, train).warnings.empty());
  const VectorXd mild = VectorXd::Constant(10, -0.47);  // 0.03
  const Diagnostics m = diagnostics(r, mild);
  REQUIRE(m.warnings.size() == 1);
  CHECK(m.warnings[0].rfind("note", 0) == 0);
  VectorXd spike = r.lpd;
  spike(4) += 0.3;
  CHECK(diagnostics(r, spike).flagged_points == std::vector<int>{4});
  CHECK(!diagnostics(r, VectorXd::Constant(10, -0.6)).warnings.empty());  // negative p_eff
}
