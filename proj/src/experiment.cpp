#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <limits>
#include <sstream>

#include "csv.hpp"
#include "gploo/error.hpp"
#include "gploo/experiment.hpp"
#include "gploo/numeric.hpp"
#include "gploo/synthetic.hpp"

#ifndef GPLOO_DATA_DIR
#define GPLOO_DATA_DIR "data"
#endif

namespace gploo {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

[[noreturn]] void bad_config(const std::string& what) {
  throw Error(ErrorKind::InvalidInput, "config: " + what);
}

double now() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

// ---------------------------------------------------------------------------
// Config parsing

KernelSpec parse_kernel(const Json& j) {
  if (!j.is_array() || j.empty()) bad_config("kernel must be a non-empty array of terms");
  KernelSpec k;
  for (const Json& t : j) {
    KernelTerm term;
    term.kind = kernel_kind_from_string(t.at("type").get<std::string>());
    term.log_magnitude = std::log(t.value("magnitude", 1.0));
    if (term.kind == KernelKind::SquaredExponential) {
      if (t.contains("length_scales")) {
        const auto ls = t.at("length_scales").get<std::vector<double>>();
        if (ls.empty()) bad_config("length_scales is empty");
        term.log_length_scales.resize(static_cast<Eigen::Index>(ls.size()));
        for (std::size_t i = 0; i < ls.size(); ++i) term.log_length_scales(i) = std::log(ls[i]);
      } else {
        term.log_length_scales = VectorXd::Constant(1, std::log(t.value("length_scale", 1.0)));
      }
    }
    for (auto it = t.begin(); it != t.end(); ++it)
      if (it.key() != "type" && it.key() != "magnitude" && it.key() != "length_scales" &&
          it.key() != "length_scale")
        bad_config("unknown kernel field '" + it.key() + "'");
    k.terms.push_back(term);
  }
  return k;
}

LikelihoodSpec parse_likelihood(const Json& j) {
  const LikelihoodKind kind = likelihood_kind_from_string(j.at("type").get<std::string>());
  switch (kind) {
    case LikelihoodKind::Gaussian: return LikelihoodSpec::gaussian(j.value("sigma2", 0.5));
    case LikelihoodKind::Probit: return LikelihoodSpec::probit();
    case LikelihoodKind::StudentT: return LikelihoodSpec::student_t(j.value("scale", 0.3), j.value("nu", 4.0));
    case LikelihoodKind::LogLogisticCensored: return LikelihoodSpec::log_logistic(j.value("shape", 2.0));
  }
  bad_config("unknown likelihood");
}

Json kernel_json(const KernelSpec& k) {
  Json a = Json::array();
  for (const KernelTerm& t : k.terms) {
    Json j;
    j["type"] = to_string(t.kind);
    j["magnitude"] = std::exp(t.log_magnitude);
    if (t.kind == KernelKind::SquaredExponential) {
      std::vector<double> ls;
      for (Eigen::Index i = 0; i < t.log_length_scales.size(); ++i) ls.push_back(std::exp(t.log_length_scales(i)));
      j["length_scales"] = ls;
    }
    a.push_back(j);
  }
  return a;
}

Json likelihood_json(const LikelihoodSpec& l) {
  Json j;
  j["type"] = to_string(l.kind);
  switch (l.kind) {
    case LikelihoodKind::Gaussian: j["sigma2"] = std::exp(l.log_param); break;
    case LikelihoodKind::Probit: break;
    case LikelihoodKind::StudentT:
      j["scale"] = std::exp(l.log_param);
      j["nu"] = l.nu;
      break;
    case LikelihoodKind::LogLogisticCensored: j["shape"] = std::exp(l.log_param); break;
  }
  return j;
}

KernelSpec se_ard(int d, bool with_linear) {
  KernelSpec k;
  if (with_linear) {
    k.terms.push_back({KernelKind::Constant, 0.0, {}});
    k.terms.push_back({KernelKind::Linear, 0.0, {}});
  }
  k.terms.push_back({KernelKind::SquaredExponential, 0.0, VectorXd::Zero(d)});
  return k;
}

// ---------------------------------------------------------------------------
// Per-sample evaluation of LOO methods

struct MethodId {
  std::string family;  // exact, gaussian-exact, la-loo, ep-loo, q-loo, tq-loo, waic-g, waic-v, series
  bool tilted = false;
  int order = 0;
};

MethodId parse_method(const std::string& id) {
  if (id == "exact" || id == "gaussian-exact" || id == "la-loo" || id == "ep-loo") return {id};
  if (id.rfind("series-", 0) == 0 && id.size() == 10 && id[8] == '-') {
    const char m = id[7];
    const int k = id[9] - '0';
    if ((m == 'g' || m == 'l') && k >= 1 && k <= kMaxCumulantOrder) return {"series", m == 'l', k};
  }
  if (id.size() > 2 && id[id.size() - 2] == '-') {
    const std::string base = id.substr(0, id.size() - 2);
    const char m = id.back();
    if ((m == 'g' || m == 'l') && (base == "q-loo" || base == "tq-loo" || base == "waic-g" || base == "waic-v"))
      return {base, m == 'l'};
  }
  throw Error(ErrorKind::InvalidInput, "unknown LOO method '" + id + "'");
}

LooReport failed_report(const std::string& id, Eigen::Index n, const std::string& reason) {
  std::vector<PointFailure> f;
  for (Eigen::Index i = 0; i < n; ++i) f.push_back({static_cast<int>(i), reason});
  LooReport r = make_report(id, VectorXd::Constant(n, kNaN), std::move(f));
  r.warnings.push_back("method failed: " + reason);
  return r;
}

class SampleContext {
 public:
  SampleContext(const Dataset& data, ModelConfig model, const ExperimentConfig& cfg,
                const LatentFit* reuse = nullptr)
      : data_(data), model_(std::move(model)), cfg_(cfg), k_(build_covariance(data.x, model_.kernel)) {
    quad_.nodes = cfg.quad_nodes;
    model_.ep.quad_nodes = cfg.quad_nodes;
    if (reuse) {
      la_ = reuse->laplace;
      ep_ = reuse->ep;
    }
  }

  const LaplaceState& laplace() {
    if (!la_) la_ = laplace_fit(data_, k_, model_.likelihood, model_.laplace);
    return *la_;
  }

  const EPState& ep() {
    if (!ep_) ep_ = ep_fit(data_, k_, model_.likelihood, model_.ep);
    return *ep_;
  }

  const GaussianPosterior& posterior() {
    return cfg_.inference == InferenceMethod::Laplace ? laplace().posterior : ep().posterior;
  }

  std::vector<LatentMarginal> marginals(bool tilted) {
    if (!tilted) return gaussian_marginals(posterior());
    return cfg_.inference == InferenceMethod::Laplace ? tilted_marginals(laplace()) : tilted_marginals(ep());
  }

  VectorXd training() { return training_lpd(marginals(false), data_, model_.likelihood, quad_); }

  LooReport exact(std::span<const int> indices = {}) {
    BruteForceOptions o;
    o.threads = cfg_.threads;
    o.ep = model_.ep;
    o.laplace = model_.laplace;
    if (cfg_.inference == InferenceMethod::Laplace) o.laplace_warm = &laplace();
    else o.ep_warm = &ep();
    return brute_force_loo(data_, k_, model_.likelihood, cfg_.inference, indices, o);
  }

  LooReport compute(const std::string& id) {
    LooReport r;
    try {
      r = compute_raw(id);
    } catch (const std::exception& e) {
      return failed_report(id, data_.n(), e.what());
    }
    r.method = id;
    return r;
  }

  // Replaces failed points with brute-force values from `bf` (or fresh refits).
  LooReport fill_failures(LooReport r, const LooReport* bf) {
    if (r.failures.empty()) return r;
    std::vector<int> idx;
    for (const PointFailure& f : r.failures) idx.push_back(f.index);
    LooReport fresh;
    if (!bf) {
      try {
        fresh = exact(idx);
      } catch (const std::exception&) {
        return r;
      }
      bf = &fresh;
    }
    VectorXd lpd = r.lpd;
    std::vector<PointFailure> left;
    int filled = 0;
    for (const PointFailure& f : r.failures) {
      if (!bf->failed(f.index) && std::isfinite(bf->lpd(f.index))) {
        lpd(f.index) = bf->lpd(f.index);
        ++filled;
      } else {
        left.push_back(f);
      }
    }
    LooReport out = make_report(r.method, lpd, left);
    out.unstable = r.unstable;
    out.warnings = r.warnings;
    out.warnings.push_back(std::to_string(filled) + " failed point(s) recomputed by brute-force refits");
    return out;
  }

 private:
  LooReport compute_raw(const std::string& id) {
    const MethodId m = parse_method(id);
    const LikelihoodSpec& lik = model_.likelihood;
    if (m.family == "exact") return exact();
    if (m.family == "gaussian-exact") {
      if (lik.kind != LikelihoodKind::Gaussian)
        throw Error(ErrorKind::UnsupportedOperation, "gaussian-exact needs the gaussian likelihood");
      const double s2 = std::exp(lik.log_param);
      return to_report(gaussian_exact_loo(k_, s2, data_.y), data_.y, s2);
    }
    if (m.family == "la-loo") return la_loo(laplace(), data_, lik, CavityRoute::LinearResponse, quad_);
    if (m.family == "ep-loo") return ep_loo(ep(), data_, lik);
    const std::vector<LatentMarginal> marg = marginals(m.tilted);
    if (m.family == "q-loo") return q_loo(marg, data_, lik, quad_);
    if (m.family == "tq-loo") return tq_loo(marg, data_, lik, cfg_.truncation, quad_);
    if (m.family == "waic-g") return waic(marg, data_, lik, WaicVariant::G, quad_);
    if (m.family == "waic-v") return waic(marg, data_, lik, WaicVariant::V, quad_);
    return cumulant_series_loo(marg, data_, lik, m.order, quad_).report;
  }

  const Dataset& data_;
  ModelConfig model_;
  const ExperimentConfig& cfg_;
  MatrixXd k_;
  QuadOptions quad_;
  std::optional<LaplaceState> la_;
  std::optional<EPState> ep_;
};

// Comparison that degrades to NaN statistics when nothing is comparable.
ComparisonStats compare_or_nan(const LooReport& ref, const LooReport& r) {
  try {
    return compare(ref, r);
  } catch (const Error&) {
    ComparisonStats cs;
    cs.bias = cs.std = kNaN;
    cs.delta = VectorXd::Constant(r.n(), kNaN);
    return cs;
  }
}

VectorXd mix_training(const WeightedSampleSet& w, const std::vector<VectorXd>& train) {
  const VectorXd nw = w.normalized_weights();
  const Eigen::Index n = train[0].size();
  VectorXd out(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    std::vector<double> t;
    for (std::size_t s = 0; s < train.size(); ++s)
      if (nw(s) > 0.0 && std::isfinite(train[s](i))) t.push_back(std::log(nw(s)) + train[s](i));
    out(i) = t.empty() ? kNaN : log_sum_exp(t);
  }
  return out;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_csv_double(const std::string& s) {
  if (s == "NA") return kNaN;
  std::size_t pos = 0;
  const double v = std::stod(s, &pos);
  if (pos != s.size()) throw Error(ErrorKind::InvalidInput, "bad number '" + s + "'");
  return v;
}

std::filesystem::path prepare_out(const std::string& out) {
  std::filesystem::path p(out);
  std::error_code ec;
  std::filesystem::create_directories(p, ec);
  if (ec) throw Error(ErrorKind::InvalidInput, "cannot create output directory '" + out + "'");
  return p;
}

Json timings_json(const std::vector<std::pair<std::string, double>>& t) {
  Json j = Json::object();
  for (const auto& [k, v] : t) j[k] = v;
  return j;
}

Json failure_summary(const std::string& command, const Error& e) {
  Json j;
  j["schema_version"] = kSchemaVersion;
  j["command"] = command;
  j["status"] = "failed";
  j["error_kind"] = to_string(e.kind());
  j["error"] = e.what();
  return j;
}

}  // namespace

// ---------------------------------------------------------------------------

const char* to_string(HyperMode m) {
  switch (m) {
    case HyperMode::Fixed: return "fixed";
    case HyperMode::Map: return "map";
    case HyperMode::Ccd: return "ccd";
    case HyperMode::Grid: return "grid";
    case HyperMode::SampleFile: return "sample-file";
  }
  return "unknown";
}

HyperMode hyper_mode_from_string(const std::string& name) {
  if (name == "fixed") return HyperMode::Fixed;
  if (name == "map") return HyperMode::Map;
  if (name == "ccd") return HyperMode::Ccd;
  if (name == "grid") return HyperMode::Grid;
  if (name == "sample-file") return HyperMode::SampleFile;
  throw Error(ErrorKind::InvalidInput, "unknown hyperparameter mode '" + name + "'");
}

const std::vector<std::string>& method_ids() {
  static const std::vector<std::string> ids = [] {
    std::vector<std::string> v = {"exact", "gaussian-exact", "la-loo", "ep-loo"};
    for (const char* f : {"q-loo", "tq-loo", "waic-g", "waic-v"})
      for (const char* m : {"-g", "-l"}) v.push_back(std::string(f) + m);
    for (const char* m : {"g", "l"})
      for (int k = 1; k <= kMaxCumulantOrder; ++k) v.push_back(std::string("series-") + m + "-" + std::to_string(k));
    return v;
  }();
  return ids;
}

bool is_method_id(const std::string& id) {
  const auto& v = method_ids();
  return std::find(v.begin(), v.end(), id) != v.end();
}

ExperimentConfig parse_config(const Json& doc) {
  if (!doc.is_object()) bad_config("top level must be an object");
  ExperimentConfig c;
  try {
    for (auto it = doc.begin(); it != doc.end(); ++it) {
      const std::string& key = it.key();
      const Json& v = it.value();
      if (key == "dataset") c.dataset = v.get<std::string>();
      else if (key == "n") c.n = v.get<int>();
      else if (key == "d") c.d = v.get<int>();
      else if (key == "data_dir") c.data_dir = v.get<std::string>();
      else if (key == "kernel") c.kernel = parse_kernel(v);
      else if (key == "likelihood") c.likelihood = parse_likelihood(v);
      else if (key == "inference") c.inference = inference_from_string(v.get<std::string>());
      else if (key == "hyperparameters") {
        for (auto h = v.begin(); h != v.end(); ++h) {
          if (h.key() == "mode") c.hyper = hyper_mode_from_string(h.value().get<std::string>());
          else if (h.key() == "file") c.sample_file = h.value().get<std::string>();
          else if (h.key() == "grid_points") c.grid_points = h.value().get<int>();
          else if (h.key() == "half_width") c.grid_half_width = h.value().get<double>();
          else bad_config("unknown hyperparameters field '" + h.key() + "'");
        }
      } else if (key == "methods") c.methods = v.get<std::vector<std::string>>();
      else if (key == "reference") c.reference = v.get<std::string>();
      else if (key == "truncation") {
        for (auto t = v.begin(); t != v.end(); ++t) {
          if (t.key() == "c0") c.truncation.c0 = t.value().get<double>();
          else if (t.key() == "half_width") c.truncation.half_width = t.value().get<double>();
          else if (t.key() == "fixed_c") c.truncation.fixed_c = t.value().get<double>();
          else bad_config("unknown truncation field '" + t.key() + "'");
        }
      } else if (key == "quad_nodes") c.quad_nodes = v.get<int>();
      else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else if (key == "out") c.out = v.get<std::string>();
      else if (key == "threads") c.threads = v.get<int>();
      else if (key == "fallback") c.fallback = v.get<bool>();
      else if (key == "timings") c.timings = v.get<bool>();
      else if (key == "multipliers") c.multipliers = v.get<std::vector<double>>();
      else bad_config("unknown field '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    bad_config(e.what());
  }
  for (const std::string& m : c.methods)
    if (!is_method_id(m)) bad_config("unknown LOO method '" + m + "'");
  if (!is_method_id(c.reference)) bad_config("unknown reference method '" + c.reference + "'");
  if (c.quad_nodes < 11) bad_config("quad_nodes must be at least 11");
  if (c.threads < 1) bad_config("threads must be positive");
  if (c.n < 1 || c.d < 1) bad_config("n and d must be positive");
  if (c.grid_points < 2) bad_config("grid_points must be at least 2");
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  const std::string text = csv::read_file(path);
  Json doc;
  try {
    doc = Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::InvalidInput, "config '" + path + "': " + e.what());
  }
  return parse_config(doc);
}

Json to_json(const ExperimentConfig& c) {
  // Output location, thread count and timing switches do not affect results
  // and are left out so runs stay byte-comparable.
  Json j;
  j["dataset"] = c.dataset;
  if (c.dataset.rfind("synthetic-", 0) == 0) {
    j["n"] = c.n;
    j["d"] = c.d;
  }
  if (c.kernel) j["kernel"] = kernel_json(*c.kernel);
  if (c.likelihood) j["likelihood"] = likelihood_json(*c.likelihood);
  j["inference"] = to_string(c.inference);
  Json h;
  h["mode"] = to_string(c.hyper);
  if (c.hyper == HyperMode::SampleFile) h["file"] = c.sample_file;
  if (c.hyper == HyperMode::Grid) {
    h["grid_points"] = c.grid_points;
    h["half_width"] = c.grid_half_width;
  }
  j["hyperparameters"] = h;
  j["methods"] = c.methods;
  j["reference"] = c.reference;
  Json t;
  t["c0"] = c.truncation.c0;
  t["half_width"] = c.truncation.half_width;
  if (c.truncation.fixed_c) t["fixed_c"] = *c.truncation.fixed_c;
  j["truncation"] = t;
  j["quad_nodes"] = c.quad_nodes;
  j["seed"] = c.seed;
  j["fallback"] = c.fallback;
  if (!c.multipliers.empty()) j["multipliers"] = c.multipliers;
  return j;
}

Problem resolve_problem(const ExperimentConfig& c) {
  Problem p;
  p.name = c.dataset;
  const std::string dir = c.data_dir.empty() ? std::string(GPLOO_DATA_DIR) : c.data_dir;
  LikelihoodSpec lik;
  KernelSpec kernel;
  if (c.dataset == "ripley") {
    p.data = load_csv(dir + "/ripley.csv");
    lik = LikelihoodSpec::probit();
    kernel = se_ard(static_cast<int>(p.data.d()), true);
  } else if (c.dataset == "synthetic-probit") {
    p.data = synthetic::classification(c.n, c.d, c.seed);
    lik = LikelihoodSpec::probit();
    kernel = se_ard(c.d, false);
  } else if (c.dataset == "synthetic-regression") {
    p.data = synthetic::regression(c.n, c.d, c.seed);
    lik = LikelihoodSpec::gaussian(0.5);
    kernel = se_ard(c.d, false);
  } else if (c.dataset == "synthetic-student-t") {
    p.data = synthetic::heavy_tailed(c.n, c.d, c.seed);
    lik = LikelihoodSpec::student_t(0.3);
    kernel = se_ard(c.d, false);
  } else if (c.dataset == "synthetic-survival") {
    p.data = synthetic::survival(c.n, c.d, c.seed);
    lik = LikelihoodSpec::log_logistic(2.0);
    kernel = se_ard(c.d, false);
  } else if (c.dataset.rfind("synthetic-", 0) == 0) {
    bad_config("unknown synthetic dataset '" + c.dataset + "'");
  } else {
    p.data = load_csv(c.dataset);
    if (!c.likelihood) bad_config("a likelihood is required for CSV datasets");
    kernel = se_ard(static_cast<int>(p.data.d()), false);
  }
  p.model.kernel = c.kernel.value_or(kernel);
  p.model.likelihood = c.likelihood.value_or(lik);
  p.model.method = c.inference;
  p.model.ep.quad_nodes = c.quad_nodes;
  for (const KernelTerm& t : p.model.kernel.terms)
    if (t.kind == KernelKind::SquaredExponential && t.log_length_scales.size() != 1 &&
        t.log_length_scales.size() != p.data.d())
      bad_config("length_scales must have 1 or d entries");
  validate(p.data, p.model.likelihood);
  return p;
}

FitOutcome fit_model(const ExperimentConfig& c, const Problem& p) {
  FitOutcome f;
  ModelConfig m = p.model;
  m.method = c.inference;
  m.ep.quad_nodes = c.quad_nodes;
  const double t0 = now();
  if (c.hyper == HyperMode::SampleFile) {
    f.samples = load_sample_file(c.sample_file, pack(m).names);
    Eigen::Index best = 0;
    f.samples.log_weights.maxCoeff(&best);
    f.params = HyperParams{f.samples.names, f.samples.samples[best]};
  } else if (c.hyper == HyperMode::Fixed) {
    f.params = pack(m);
    f.samples = map_samples(f.params);
  } else {
    MapResult r = map_optimize(p.data, m);
    f.params = r.params;
    f.warnings.insert(f.warnings.end(), r.warnings.begin(), r.warnings.end());
    f.map = std::move(r);
    f.samples = map_samples(f.params);
    f.timings.emplace_back("map", now() - t0);
    if (c.hyper == HyperMode::Ccd || c.hyper == HyperMode::Grid) {
      const double t1 = now();
      auto lp = [&](const VectorXd& v) { return log_posterior(p.data, unpack(m, v), v); };
      const MatrixXd h = fd_hessian(lp, f.params.values);
      const Standardization st = standardize(f.params.values, -h);
      f.warnings.insert(f.warnings.end(), st.warnings.begin(), st.warnings.end());
      const int dim = static_cast<int>(f.params.size());
      if (c.hyper == HyperMode::Ccd)
        f.samples = weight_design(ccd_points(dim), st, f.params.names, lp, SampleSource::Ccd);
      else
        f.samples = weight_design(grid_points(dim, c.grid_points, c.grid_half_width), st, f.params.names, lp,
                                  SampleSource::Grid);
      f.warnings.insert(f.warnings.end(), f.samples.warnings.begin(), f.samples.warnings.end());
      f.timings.emplace_back("design", now() - t1);
    }
  }
  const double t2 = now();
  f.model = unpack(m, f.params.values);
  f.fit = fit_latent(p.data, f.model);
  f.timings.emplace_back("latent", now() - t2);
  if (f.fit.ep && !f.fit.ep->converged) f.warnings.push_back("EP did not converge");
  return f;
}

Json fit_summary(const ExperimentConfig& c, const Problem& p, const FitOutcome& f) {
  Json j;
  j["schema_version"] = kSchemaVersion;
  j["status"] = "ok";
  j["config"] = to_json(c);
  j["dataset"] = {{"name", p.name}, {"n", p.data.n()}, {"d", p.data.d()}};
  j["likelihood"] = to_string(f.model.likelihood.kind);
  j["inference"] = to_string(c.inference);
  j["hyperparameter_mode"] = to_string(c.hyper);
  j["hyperparameters"] = to_json(f.params);
  j["log_marginal"] = number(f.fit.log_marginal());
  j["log_posterior"] = number(f.fit.log_marginal() + log_prior(f.model, f.params.values));
  if (f.map) {
    j["map"] = {{"converged", f.map->converged},
                {"iterations", f.map->iterations},
                {"initial_log_posterior", number(f.map->initial_log_posterior)},
                {"log_posterior", number(f.map->log_posterior)}};
  }
  Json latent;
  if (f.fit.laplace) {
    latent["iterations"] = f.fit.laplace->iterations;
    latent["residual"] = number(f.fit.laplace->residual);
    latent["flat_sites"] = f.fit.laplace->flat_sites;
  } else if (f.fit.ep) {
    latent["iterations"] = f.fit.ep->iterations;
    latent["converged"] = f.fit.ep->converged;
    latent["max_change"] = number(f.fit.ep->max_change);
    latent["cavity_failures"] = f.fit.ep->cavity_failures;
  }
  j["latent"] = latent;
  if (f.samples.size() > 1 || f.samples.source == SampleSource::External) j["samples"] = to_json(f.samples);
  j["warnings"] = f.warnings;
  return j;
}

LooRun run_loo(const ExperimentConfig& c, const Problem& p) { return run_loo(c, p, fit_model(c, p)); }

LooRun run_loo(const ExperimentConfig& c, const Problem& p, FitOutcome fit) {
  if (c.methods.empty()) bad_config("no LOO methods requested");
  LooRun run;
  run.fit = std::move(fit);
  const WeightedSampleSet& samples = run.fit.samples;
  const std::size_t s_count = samples.size();
  const std::size_t m_count = c.methods.size();

  std::vector<LooReport> refs;
  std::vector<std::vector<LooReport>> cond(m_count);
  std::vector<VectorXd> train;
  std::vector<double> method_time(m_count, 0.0);
  double ref_time = 0.0;
  for (std::size_t s = 0; s < s_count; ++s) {
    const bool center = s_count == 1;
    SampleContext ctx(p.data, center ? run.fit.model : unpack(run.fit.model, samples.samples[s]), c,
                      center ? &run.fit.fit : nullptr);
    double t = now();
    refs.push_back(ctx.compute(c.reference));
    ref_time += now() - t;
    try {
      train.push_back(ctx.training());
    } catch (const std::exception&) {
      train.push_back(VectorXd::Constant(p.data.n(), kNaN));
    }
    for (std::size_t k = 0; k < m_count; ++k) {
      t = now();
      LooReport r = c.methods[k] == c.reference ? refs.back() : ctx.compute(c.methods[k]);
      if (c.fallback && c.methods[k] != "exact" && !r.failures.empty())
        r = ctx.fill_failures(std::move(r), c.reference == "exact" ? &refs.back() : nullptr);
      cond[k].push_back(std::move(r));
      method_time[k] += now() - t;
    }
  }
  run.timings = run.fit.timings;
  run.timings.emplace_back("reference:" + c.reference, ref_time);
  for (std::size_t k = 0; k < m_count; ++k) run.timings.emplace_back(c.methods[k], method_time[k]);

  const VectorXd train_lpd = s_count == 1 ? train[0] : mix_training(samples, train);
  auto combine = [&](std::vector<LooReport>& reps, std::optional<WeightDiagnostics>& wd) {
    if (s_count == 1) return reps[0];
    HierarchicalLoo h = hierarchical_loo(samples, reps);
    wd = loo_weight_diagnostics(samples, h);
    h.report.method = reps[0].method;
    for (const std::string& w : wd->warnings) h.report.warnings.push_back(w);
    return h.report;
  };
  std::optional<WeightDiagnostics> ref_w;
  run.reference = combine(refs, ref_w);
  for (std::size_t k = 0; k < m_count; ++k) {
    std::optional<WeightDiagnostics> wd;
    LooReport r = combine(cond[k], wd);
    const Diagnostics d = diagnostics(r, train_lpd);
    r.p_eff = d.p_eff;
    const ComparisonStats cs = compare_or_nan(run.reference, r);
    ComparisonRow row;
    row.method = c.methods[k];
    row.bias = cs.bias;
    row.std = cs.std;
    row.n_failures = static_cast<int>(r.failures.size());
    row.p_eff_over_n = d.p_eff_over_n;
    if (wd) {
      row.min_rel_ess = wd->min_relative_ess;
      if (wd->khat) row.khat_max = wd->khat_max;
    }
    run.rows.push_back(row);
    run.reports.push_back(std::move(r));
    run.diagnostics.push_back(d);
    run.weights.push_back(std::move(wd));
  }
  return run;
}

std::string comparison_csv(const std::vector<ComparisonRow>& rows) {
  std::string out = "method,bias,std,n_failures,p_eff_over_n,min_rel_ess,khat_max\n";
  for (const ComparisonRow& r : rows) {
    out += r.method + "," + csv_number(r.bias) + "," + csv_number(r.std) + "," + std::to_string(r.n_failures) +
           "," + csv_number(r.p_eff_over_n) + "," + csv_number(r.min_rel_ess) + "," +
           (r.khat_max ? csv_number(*r.khat_max) : "NA") + "\n";
  }
  return out;
}

std::vector<ComparisonRow> parse_comparison_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);
  if (line != "method,bias,std,n_failures,p_eff_over_n,min_rel_ess,khat_max")
    throw Error(ErrorKind::InvalidInput, "not a comparison CSV");
  std::vector<ComparisonRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 7) throw Error(ErrorKind::InvalidInput, "comparison row has " + std::to_string(f.size()) + " fields");
    ComparisonRow r;
    r.method = f[0];
    r.bias = parse_csv_double(f[1]);
    r.std = parse_csv_double(f[2]);
    r.n_failures = std::stoi(f[3]);
    r.p_eff_over_n = parse_csv_double(f[4]);
    r.min_rel_ess = parse_csv_double(f[5]);
    if (f[6] != "NA") r.khat_max = parse_csv_double(f[6]);
    rows.push_back(r);
  }
  return rows;
}

std::vector<SweepRow> run_sweep(const ExperimentConfig& c, const Problem& p) {
  if (c.multipliers.size() < 3) bad_config("a sweep needs at least three multipliers");
  for (std::size_t i = 0; i < c.multipliers.size(); ++i) {
    if (!(c.multipliers[i] > 0.0)) bad_config("multipliers must be positive");
    if (i > 0 && !(c.multipliers[i] > c.multipliers[i - 1])) bad_config("multipliers must be strictly ascending");
  }
  std::vector<std::string> methods;
  for (const std::string& m : c.methods)
    if (m != c.reference) methods.push_back(m);
  if (methods.empty()) bad_config("no LOO methods besides the reference");

  ExperimentConfig centered = c;
  if (centered.hyper == HyperMode::Ccd || centered.hyper == HyperMode::Grid) centered.hyper = HyperMode::Map;
  const FitOutcome f = fit_model(centered, p);

  std::vector<SweepRow> rows;
  std::optional<double> at_map;
  std::vector<double> grid = c.multipliers;
  const bool has_one = std::find(grid.begin(), grid.end(), 1.0) != grid.end();
  if (!has_one) grid.push_back(1.0);
  for (std::size_t g = 0; g < grid.size(); ++g) {
    const double mult = grid[g];
    const bool marker_only = !has_one && g + 1 == grid.size();
    ModelConfig m = f.model;
    for (KernelTerm& t : m.kernel.terms)
      if (t.kind == KernelKind::SquaredExponential) t.log_length_scales.array() += std::log(mult);
    std::vector<SweepRow> block;
    try {
      SampleContext ctx(p.data, m, c, mult == 1.0 ? &f.fit : nullptr);
      const LooReport ref = ctx.compute(c.reference);
      if (ref.failures.size() == static_cast<std::size_t>(ref.n()))
        throw Error(ErrorKind::NumericalFailure, "reference failed");
      const VectorXd train = ctx.training();
      const double peff = diagnostics(ref, train).p_eff_over_n;
      if (mult == 1.0) at_map = peff;
      if (!marker_only) {
        for (const std::string& id : methods) {
          const LooReport r = ctx.compute(id);
          const Diagnostics d = diagnostics(r, train);
          const ComparisonStats cs = compare_or_nan(ref, r);
          SweepRow row{mult, peff, id, cs.bias, cs.std, static_cast<int>(r.failures.size()), false};
          for (const std::string& w : d.warnings) row.warned = row.warned || w.rfind("p_eff/n", 0) == 0;
          block.push_back(row);
        }
      }
    } catch (const std::exception&) {
      block.clear();
      if (!marker_only)
        for (const std::string& id : methods)
          block.push_back({mult, kNaN, id, kNaN, kNaN, static_cast<int>(p.data.n()), false});
    }
    rows.insert(rows.end(), block.begin(), block.end());
  }
  rows.push_back({1.0, at_map.value_or(kNaN), "map", 0.0, 0.0, 0, false});
  return rows;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::string out = "multiplier,p_eff_over_n,method,bias,std,n_failures,warned\n";
  for (const SweepRow& r : rows)
    out += csv_number(r.multiplier) + "," + csv_number(r.p_eff_over_n) + "," + r.method + "," + csv_number(r.bias) +
           "," + csv_number(r.std) + "," + std::to_string(r.n_failures) + "," + (r.warned ? "1" : "0") + "\n";
  return out;
}

int command_fit(const ExperimentConfig& c) {
  const Problem p = resolve_problem(c);
  const std::filesystem::path out = prepare_out(c.out);
  FitOutcome f;
  try {
    f = fit_model(c, p);
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::InvalidInput) throw;
    write_json((out / "summary.json").string(), failure_summary("fit", e));
    return 1;
  }
  Json j = fit_summary(c, p, f);
  j["command"] = "fit";
  write_json((out / "summary.json").string(), j);
  if (c.timings) write_json((out / "timings.json").string(), timings_json(f.timings));
  return 0;
}

int command_loo(const ExperimentConfig& c) {
  if (c.methods.empty()) bad_config("no LOO methods requested");
  const Problem p = resolve_problem(c);
  const std::filesystem::path out = prepare_out(c.out);
  FitOutcome f;
  try {
    f = fit_model(c, p);
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::InvalidInput) throw;
    write_json((out / "summary.json").string(), failure_summary("loo", e));
    return 1;
  }
  const LooRun run = run_loo(c, p, f);
  std::filesystem::create_directories(out / "loo");
  Json methods = Json::array();
  for (std::size_t k = 0; k < run.reports.size(); ++k) {
    Json r = to_json(run.reports[k]);
    r["diagnostics"] = to_json(run.diagnostics[k]);
    if (run.weights[k]) r["weights"] = to_json(*run.weights[k]);
    Json doc;
    doc["schema_version"] = kSchemaVersion;
    doc["reference"] = c.reference;
    doc["comparison"] = {{"bias", number(run.rows[k].bias)}, {"std", number(run.rows[k].std)}};
    doc["report"] = r;
    write_json((out / "loo" / (c.methods[k] + ".json")).string(), doc);
    methods.push_back({{"method", c.methods[k]},
                       {"sum_lpd", number(run.reports[k].sum_lpd)},
                       {"bias", number(run.rows[k].bias)},
                       {"std", number(run.rows[k].std)},
                       {"n_failures", run.rows[k].n_failures},
                       {"p_eff_over_n", number(run.rows[k].p_eff_over_n)},
                       {"warnings", run.diagnostics[k].warnings}});
  }
  if (std::find(c.methods.begin(), c.methods.end(), c.reference) == c.methods.end()) {
    Json doc;
    doc["schema_version"] = kSchemaVersion;
    doc["report"] = to_json(run.reference);
    write_json((out / "loo" / ("reference-" + c.reference + ".json")).string(), doc);
  }
  Json j = fit_summary(c, p, run.fit);
  j["command"] = "loo";
  j["loo"] = {{"reference", c.reference}, {"reference_sum_lpd", number(run.reference.sum_lpd)}, {"methods", methods}};
  write_json((out / "summary.json").string(), j);
  write_text((out / "comparison.csv").string(), comparison_csv(run.rows));
  if (c.timings) write_json((out / "timings.json").string(), timings_json(run.timings));
  return 0;
}

int command_sweep(const ExperimentConfig& c) {
  const Problem p = resolve_problem(c);
  const std::filesystem::path out = prepare_out(c.out);
  const double t0 = now();
  std::vector<SweepRow> rows;
  try {
    rows = run_sweep(c, p);
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::InvalidInput) throw;
    write_json((out / "summary.json").string(), failure_summary("sweep", e));
    return 1;
  }
  write_text((out / "sweep.csv").string(), sweep_csv(rows));
  Json j;
  j["schema_version"] = kSchemaVersion;
  j["command"] = "sweep";
  j["status"] = "ok";
  j["config"] = to_json(c);
  j["rows"] = rows.size();
  write_json((out / "summary.json").string(), j);
  if (c.timings) write_json((out / "timings.json").string(), Json{{"sweep", now() - t0}});
  return 0;
}

}  // namespace gploo
