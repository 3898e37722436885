// One PASS/FAIL line per acceptance criterion; exits 1 if any fails.
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "gploo/experiment.hpp"
#include "gploo/hyper.hpp"
#include "gploo/loo.hpp"
#include "gploo/numeric.hpp"
#include "gploo/synthetic.hpp"

using namespace gploo;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t).count();
}

double max_abs_diff(const VectorXd& a, const VectorXd& b) { return (a - b).cwiseAbs().maxCoeff(); }

// 1 -------------------------------------------------------------------------
Outcome gaussian_oracle_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst = 0.0;
  for (int r = 0; r < 20; ++r) {
    const int d = r < 10 ? 1 : 3;
    const Dataset data = synthetic::regression(50, d, 100 + r, 0.1 + 0.5 * u(rng));
    KernelSpec k = KernelSpec::squared_exponential(-1.0 + 2.0 * u(rng), VectorXd::Constant(d, -0.5 + 1.5 * u(rng)));
    const double s2 = 0.1 + 0.9 * u(rng);
    const LikelihoodSpec lik = LikelihoodSpec::gaussian(s2);
    const MatrixXd kmat = build_covariance(data.x, k);
    const LaplaceState la = laplace_fit(data, kmat, lik);
    const EPState ep = ep_fit(data, kmat, lik);
    std::vector<VectorXd> all = {
        gaussian_exact_loo(kmat, s2, data.y).lpd,
        brute_force_loo(data, kmat, lik, InferenceMethod::Laplace).lpd,
        la_loo(la, data, lik).lpd,
        ep_loo(ep, data, lik).lpd,
        q_loo(gaussian_marginals(la.posterior), data, lik).lpd,
    };
    for (std::size_t a = 0; a < all.size(); ++a)
      for (std::size_t b = a + 1; b < all.size(); ++b) {
        const double e = max_abs_diff(all[a], all[b]);
        worst = std::isfinite(e) ? std::max(worst, e) : INFINITY;
      }
  }
  const double t = seconds_since(t0);
  return {worst <= 1e-6 && t < 30.0, "max pairwise difference " + fmt("%.2e", worst) + ", " + fmt("%.1f s", t)};
}

// Fitted models used by several criteria.
struct Corpus {
  std::string name;
  Dataset data;
  MatrixXd k;
  LikelihoodSpec lik;
};

std::vector<Corpus> corpus() {
  std::vector<Corpus> c;
  auto add = [&](std::string name, Dataset d, LikelihoodSpec lik, double ls) {
    const KernelSpec k = KernelSpec::squared_exponential(0.0, VectorXd::Constant(d.d(), std::log(ls)));
    MatrixXd km = build_covariance(d.x, k);
    c.push_back({std::move(name), std::move(d), std::move(km), lik});
  };
  add("regression", synthetic::regression(100, 2, 1), LikelihoodSpec::gaussian(0.5), 1.0);
  add("probit", synthetic::classification(100, 2, 2), LikelihoodSpec::probit(), 1.0);
  add("probit-flexible", synthetic::classification(100, 1, 3), LikelihoodSpec::probit(), 0.1);
  add("student-t", synthetic::heavy_tailed(100, 1, 4), LikelihoodSpec::student_t(0.3), 1.0);
  add("survival", synthetic::survival(100, 2, 5), LikelihoodSpec::log_logistic(2.0), 1.5);
  const Dataset ripley = load_csv(std::string(GPLOO_DATA_DIR) + "/ripley.csv");
  add("ripley", ripley, LikelihoodSpec::probit(), 0.5);
  return c;
}

// 2 -------------------------------------------------------------------------
Outcome dual_route(const std::vector<Corpus>& models) {
  double worst = 0.0;
  for (const Corpus& m : models) {
    const LaplaceState la = laplace_fit(m.data, m.k, m.lik);
    for (Eigen::Index i = 0; i < m.data.n(); ++i) {
      const CavityDistribution a = la_loo_cavity_site(la, i);
      const CavityDistribution b = la_loo_cavity_lr(la, i);
      worst = std::max({worst, std::abs(a.mean - b.mean), std::abs(a.var - b.var) / std::max(1.0, b.var)});
    }
    const LooReport s = la_loo(la, m.data, m.lik, CavityRoute::SiteRemoval);
    const LooReport l = la_loo(la, m.data, m.lik, CavityRoute::LinearResponse);
    worst = std::max(worst, max_abs_diff(s.lpd, l.lpd));
  }
  return {worst <= 1e-8, std::to_string(models.size()) + " models, max cavity/lpd difference " + fmt("%.2e", worst)};
}

// 3 -------------------------------------------------------------------------
Outcome ep_self_consistency() {
  double worst = 0.0;
  std::string detail;
  for (int which = 0; which < 2; ++which) {
    const Dataset d = which == 0 ? synthetic::classification(100, 1, 11) : synthetic::heavy_tailed(100, 1, 12);
    const LikelihoodSpec lik = which == 0 ? LikelihoodSpec::probit() : LikelihoodSpec::student_t(0.3);
    const MatrixXd k = build_covariance(d.x, KernelSpec::squared_exponential(0.0, VectorXd::Constant(1, 0.0)));
    const EPState ep = ep_fit(d, k, lik);
    if (!ep.converged) return {false, "EP did not converge"};
    const double e = std::max(max_abs_diff(ep.posterior.mean, ep.tilted_mean),
                              max_abs_diff(ep.posterior.marginal_var, ep.tilted_var));
    worst = std::max(worst, e);
    detail += std::string(which == 0 ? "probit " : ", student-t ") + fmt("%.2e", e);
  }
  return {worst <= 1e-6, detail};
}

// 4 -------------------------------------------------------------------------
Outcome analytic_case() {
  Dataset d;
  d.x = MatrixXd::Zero(1, 1);
  d.y = VectorXd::Zero(1);
  const LikelihoodSpec lik = LikelihoodSpec::gaussian(1.0);
  std::vector<LatentMarginal> m(1);
  m[0].base = {0.0, 0.5};
  const std::vector<std::pair<double, double>> checks = {
      {training_lpd(m, d, lik)(0), -1.1216},
      {waic(m, d, lik, WaicVariant::G).lpd(0), -1.2162},
      {waic(m, d, lik, WaicVariant::V).lpd(0), -1.2466},
      {cumulant_series_loo(m, d, lik, 1).report.lpd(0), -1.1689},
      {cumulant_series_loo(m, d, lik, 2).report.lpd(0), -1.2314},
      {cumulant_series_loo(m, d, lik, 3).report.lpd(0), -1.2522},
      {gaussian_exact_loo(MatrixXd::Ones(1, 1), 1.0, d.y).lpd(0), -1.2655},
      {q_loo(m, d, lik).lpd(0), -1.2655},
  };
  double worst = 0.0;
  for (const auto& [got, want] : checks) worst = std::max(worst, std::abs(got - want));
  return {worst <= 1e-4, "max deviation " + fmt("%.2e", worst) + " over 8 values"};
}

// 5, 6 ----------------------------------------------------------------------
struct RipleyRuns {
  LooRun ep;
  LooRun la;
};

RipleyRuns ripley_runs() {
  ExperimentConfig c;
  c.dataset = "ripley";
  c.inference = InferenceMethod::EP;
  c.methods = {"exact", "ep-loo"};
  RipleyRuns r{run_loo(c, resolve_problem(c)), {}};
  c.inference = InferenceMethod::Laplace;
  c.methods = {"exact", "la-loo", "q-loo-g", "tq-loo-g"};
  r.la = run_loo(c, resolve_problem(c));
  return r;
}

Outcome ripley_band(const RipleyRuns& r) {
  const double sum = r.ep.reference.sum_lpd;
  const ComparisonRow& ep = r.ep.rows[1];
  const ComparisonRow& la = r.la.rows[1];
  const bool pass = sum >= -72.0 && sum <= -64.0 && r.ep.reference.failures.empty() && std::abs(ep.bias) <= 1.0 &&
                    ep.std <= 0.5 && std::abs(la.bias) <= 1.0 && r.la.reference.failures.empty();
  return {pass, "EP brute-force sum " + fmt("%.2f", sum) + ", EP-LOO bias " + fmt("%.3f", ep.bias) + " (" +
                    fmt("%.3f", ep.std) + "), LA brute-force sum " + fmt("%.2f", r.la.reference.sum_lpd) +
                    ", LA-LOO bias " + fmt("%.3f", la.bias) + " (" + fmt("%.3f", la.std) + ")"};
}

Outcome ripley_instability(const RipleyRuns& r) {
  const ComparisonRow& la = r.la.rows[1];
  const ComparisonRow& q = r.la.rows[2];
  const ComparisonRow& tq = r.la.rows[3];
  const bool q_bad = std::abs(q.bias) > 100.0 || q.n_failures > 0;
  const bool pass = q_bad && std::abs(tq.bias) < 20.0 && std::abs(tq.bias) > std::abs(la.bias);
  return {pass, "Q-LOO-G bias " + fmt("%.2f", q.bias) + " with " + std::to_string(q.n_failures) +
                    " divergent points, TQ-LOO-G bias " + fmt("%.2f", tq.bias) + ", LA-LOO bias " +
                    fmt("%.3f", la.bias)};
}

// 7 -------------------------------------------------------------------------
Outcome flexibility_sweep() {
  ExperimentConfig c;
  c.dataset = "synthetic-probit";
  c.n = 100;
  c.multipliers = {0.05, 0.1, 0.2, 0.35, 0.5, 0.75, 1.0, 2.0, 4.0};
  int above = 0, below = 0, violations = 0;
  std::string where;
  for (InferenceMethod m : {InferenceMethod::Laplace, InferenceMethod::EP}) {
    c.inference = m;
    const std::string cavity = m == InferenceMethod::Laplace ? "la-loo" : "ep-loo";
    c.methods = {cavity, "waic-v-g", "q-loo-g"};
    const auto rows = run_sweep(c, resolve_problem(c));
    for (double mult : c.multipliers) {
      const SweepRow* byid[3] = {nullptr, nullptr, nullptr};
      for (const SweepRow& r : rows)
        for (int k = 0; k < 3; ++k)
          if (r.multiplier == mult && r.method == c.methods[k]) byid[k] = &r;
      if (!byid[0] || !byid[1] || !byid[2] || !std::isfinite(byid[0]->p_eff_over_n)) {
        ++violations;
        continue;
      }
      if (byid[0]->p_eff_over_n <= 0.05) {
        ++below;
        continue;
      }
      ++above;
      const double base = std::abs(byid[0]->bias);
      // A divergent Q-LOO point is an unbounded error.
      const bool ok[2] = {std::abs(byid[1]->bias) > base, byid[2]->n_failures > 0 || std::abs(byid[2]->bias) > base};
      for (int k = 0; k < 2; ++k)
        if (!ok[k]) {
          ++violations;
          where += std::string(", ") + to_string(m) + " " + c.methods[k + 1] + " at x" + fmt("%g", mult);
        }
    }
  }
  // Warning threshold: a report whose p_eff/n sits just either side of 0.05.
  int threshold_errors = 0;
  for (double ratio : {0.0499, 0.0501, 0.03, 0.2}) {
    LooReport r = make_report("waic-v-g", VectorXd::Constant(100, -0.5 - ratio));
    const Diagnostics d = diagnostics(r, VectorXd::Constant(100, -0.5));
    bool warned = false;
    for (const std::string& w : d.warnings) warned = warned || w.rfind("p_eff/n", 0) == 0;
    if (warned != (ratio > 0.05)) ++threshold_errors;
  }
  const bool pass = above > 0 && below > 0 && violations == 0 && threshold_errors == 0;
  return {pass, std::to_string(above) + " sweep points above 0.05, " + std::to_string(below) + " below, " +
                    std::to_string(violations) + " ordering violations" + where + ", " + std::to_string(threshold_errors) +
                    " threshold errors"};
}

// 8 -------------------------------------------------------------------------
Outcome tq_limits(const std::vector<Corpus>& models) {
  double worst_zero = 0.0, worst_inf = 0.0;
  int compared = 0;
  for (const Corpus& m : models) {
    const LaplaceState la = laplace_fit(m.data, m.k, m.lik);
    const auto marg = gaussian_marginals(la.posterior);
    const LooReport q = q_loo(marg, m.data, m.lik);
    TruncationConfig tiny;
    tiny.fixed_c = 1e-250;
    const LooReport t0 = tq_loo(marg, m.data, m.lik, tiny);
    std::vector<bool> unstable(m.data.n(), false);
    for (int i : q.unstable) unstable[i] = true;
    for (Eigen::Index i = 0; i < m.data.n(); ++i) {
      if (q.failed(i) || unstable[i]) continue;
      worst_zero = std::max(worst_zero, std::abs(t0.lpd(i) - q.lpd(i)));
      ++compared;
    }
    TruncationConfig huge;
    huge.fixed_c = 1e250;
    const LooReport tinf = tq_loo(marg, m.data, m.lik, huge);
    worst_inf = std::max(worst_inf, max_abs_diff(tinf.lpd, training_lpd(marg, m.data, m.lik)));
  }
  return {worst_zero <= 1e-8 && worst_inf <= 1e-8,
          "c->0 max difference " + fmt("%.2e", worst_zero) + " on " + std::to_string(compared) +
              " convergent points, c->inf " + fmt("%.2e", worst_inf)};
}

// 9 -------------------------------------------------------------------------
Outcome weight_machinery() {
  std::vector<std::string> bad;
  VectorXd uni = VectorXd::Constant(100, 0.01);
  VectorXd one = VectorXd::Zero(100);
  one(0) = 1.0;
  VectorXd two = VectorXd::Zero(100);
  two(0) = two(1) = 0.5;
  if (effective_sample_size(uni) != 100.0 && std::abs(effective_sample_size(uni) - 100.0) > 1e-9) bad.push_back("ess-uniform");
  if (effective_sample_size(one) != 1.0) bad.push_back("ess-one");
  if (effective_sample_size(two) != 2.0) bad.push_back("ess-two");

  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  VectorXd lw(2000);
  for (Eigen::Index i = 0; i < lw.size(); ++i) lw(i) = std::log(std::expm1(-0.5 * std::log1p(-u(rng))) / 0.5);
  const PsisResult ps = psis_smooth(lw);
  const double khat = ps.khat.value_or(NAN);
  if (!(std::abs(khat - 0.5) <= 0.1)) bad.push_back("pareto-shape");

  std::normal_distribution<double> z;
  VectorXd dom(100);
  for (Eigen::Index i = 0; i < dom.size(); ++i) dom(i) = z(rng);
  dom(5) = 25.0;
  const PsisResult pd = psis_smooth(dom);
  bool warned = false;
  for (const std::string& w : pd.warnings) warned = warned || w.find("k-hat") != std::string::npos;
  if (!(pd.khat.value_or(0.0) > 0.7 && warned)) bad.push_back("dominant-warning");

  WeightedSampleSet single = map_samples(HyperParams{{"a"}, VectorXd::Zero(1)});
  LooReport cond = make_report("la-loo", (VectorXd(4) << -0.3, -1.7, -0.01, -4.2).finished());
  const HierarchicalLoo h = hierarchical_loo(single, {cond});
  bool same = h.report.sum_lpd == cond.sum_lpd && h.report.method == cond.method;
  for (Eigen::Index i = 0; i < cond.n(); ++i) same = same && h.report.lpd(i) == cond.lpd(i) && h.report.cpo(i) == cond.cpo(i);
  if (!same) bad.push_back("hierarchical-s1");

  std::string detail = "k-hat " + fmt("%.3f", khat) + " at S=2000, dominant case k-hat " +
                       fmt("%.2f", pd.khat.value_or(NAN));
  for (const std::string& b : bad) detail += ", failed " + b;
  return {bad.empty(), detail};
}

// 10 ------------------------------------------------------------------------
std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream s;
  s << f.rdbuf();
  return s.str();
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(GPLOO_CLI) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

Outcome determinism() {
  const fs::path dir = fs::temp_directory_path() / "gploo_acceptance_determinism";
  fs::remove_all(dir);
  const std::vector<std::string> commands = {
      "fit --data synthetic-regression -n 60 --seed 4 --hyper ccd --inference laplace",
      "loo --data synthetic-probit -n 60 --seed 4 --inference ep --methods exact,ep-loo,la-loo,q-loo-g,tq-loo-l,waic-v-g,series-g-3",
      "sweep --data synthetic-probit -n 40 --seed 4 --inference laplace --methods exact,la-loo,waic-g-g --multipliers 0.5,1,2",
  };
  int files = 0;
  for (std::size_t k = 0; k < commands.size(); ++k) {
    const fs::path a = dir / (std::to_string(k) + "a");
    const fs::path b = dir / (std::to_string(k) + "b");
    const fs::path c = dir / (std::to_string(k) + "c");
    if (run_cli(commands[k] + " --threads 1 --out " + a.string()) != 0 ||
        run_cli(commands[k] + " --threads 1 --out " + b.string()) != 0 ||
        run_cli(commands[k] + " --threads 4 --out " + c.string()) != 0)
      return {false, "command failed: " + commands[k]};
    for (const auto& e : fs::recursive_directory_iterator(a)) {
      if (!e.is_regular_file()) continue;
      const fs::path rel = fs::relative(e.path(), a);
      const std::string ref = slurp(e.path());
      if (ref != slurp(b / rel) || ref != slurp(c / rel)) return {false, "differs: " + rel.string()};
      ++files;
    }
  }
  return {files > 0, std::to_string(files) + " output files byte-identical across repeats and 1 vs 4 threads"};
}

}  // namespace

int main() {
  int failed = 0;
  auto report = [&](int id, const char* name, const std::function<Outcome()>& f) {
    Outcome o;
    try {
      o = f();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("%s %2d %s: %s\n", o.pass ? "PASS" : "FAIL", id, name, o.detail.c_str());
    std::fflush(stdout);
    failed += !o.pass;
  };
  const std::vector<Corpus> models = corpus();
  report(1, "gaussian oracle suite", gaussian_oracle_suite);
  report(2, "LA-LOO dual-route identity", [&] { return dual_route(models); });
  report(3, "EP self-consistency", ep_self_consistency);
  report(4, "analytic WAIC/cumulant case", analytic_case);
  std::optional<RipleyRuns> ripley;
  try {
    ripley = ripley_runs();
  } catch (const std::exception& e) {
    std::printf("ripley runs failed: %s\n", e.what());
  }
  report(5, "Ripley reproduction band", [&] {
    if (!ripley) return Outcome{false, "no Ripley fit"};
    return ripley_band(*ripley);
  });
  report(6, "Q-LOO / TQ-LOO instability pattern", [&] {
    if (!ripley) return Outcome{false, "no Ripley fit"};
    return ripley_instability(*ripley);
  });
  report(7, "flexibility sweep property", flexibility_sweep);
  report(8, "TQ-LOO limits", [&] { return tq_limits(models); });
  report(9, "weight machinery", weight_machinery);
  report(10, "determinism", determinism);
  std::printf("%d of 10 criteria passed\n", 10 - failed);
  return failed == 0 ? 0 : 1;
}
