#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "gploo/latent.hpp"
#include "gploo/loo.hpp"

namespace gploo {

// ---------------------------------------------------------------------------
// Model configuration and hyperparameter vectors

/// Prior on one unconstrained (log-scale) hyperparameter.
struct ParamPrior {
  enum class Kind { Normal, Flat };
  Kind kind = Kind::Normal;
  double mean = 0.0;
  double sd = 3.0;

  double log_density(double x) const;
};

struct ModelConfig {
  KernelSpec kernel;
  LikelihoodSpec likelihood;
  InferenceMethod method = InferenceMethod::Laplace;
  LaplaceOptions laplace;
  EPOptions ep;
  /// One prior per hyperparameter, in pack() order; empty means the default
  /// weakly informative N(0, 3^2) on every log parameter.
  std::vector<ParamPrior> priors;
};

/// Hyperparameters on the unconstrained (log) scale with their names.
struct HyperParams {
  std::vector<std::string> names;
  VectorXd values;

  Eigen::Index size() const { return values.size(); }
  /// Positive (exponentiated) values and the inverse transform.
  VectorXd constrained() const;
  static HyperParams from_constrained(std::vector<std::string> names, const VectorXd& positive);
  std::optional<Eigen::Index> index_of(const std::string& name) const;
};

HyperParams pack(const ModelConfig& config);
/// Copy of `config` with the hyperparameters replaced by `values`.
ModelConfig unpack(const ModelConfig& config, const VectorXd& values);

/// A fitted latent approximation of either kind.
struct LatentFit {
  InferenceMethod method = InferenceMethod::Laplace;
  std::optional<LaplaceState> laplace;
  std::optional<EPState> ep;

  const GaussianPosterior& posterior() const;
  double log_marginal() const { return posterior().log_marginal; }
};

LatentFit fit_latent(const Dataset& data, const MatrixXd& k, const ModelConfig& config);
LatentFit fit_latent(const Dataset& data, const ModelConfig& config);

double log_prior(const ModelConfig& config, const VectorXd& values);

/// log p(y | theta, phi) + log p(theta, phi); -inf when the fit fails.
double log_posterior(const Dataset& data, const ModelConfig& config, const VectorXd& values);

// ---------------------------------------------------------------------------
// Type-II MAP

struct MapOptions {
  int max_iter = 200;
  double gtol = 1e-5;    // on the finite-difference gradient (max norm)
  double fd_step = 1e-3;
  int restarts = 2;      // fresh BFGS runs from the best point
  double max_step = 3.0; // on the log scale
  /// Names of parameters held fixed at their initial values.
  std::vector<std::string> fixed;
};

struct MaxResult {
  VectorXd x;
  double value = 0.0;
  double initial_value = 0.0;
  int iterations = 0;
  int evaluations = 0;
  bool converged = false;
  VectorXd gradient;
};

/// BFGS with central finite-difference gradients and backtracking; accepted
/// steps never decrease the objective.
MaxResult maximize(const std::function<double(const VectorXd&)>& objective, const VectorXd& x0,
                   const MapOptions& opts = {});

/// Central finite-difference Hessian.
MatrixXd fd_hessian(const std::function<double(const VectorXd&)>& objective, const VectorXd& x,
                    double step = 1e-2);

struct MapResult {
  HyperParams params;
  double log_posterior = 0.0;
  double initial_log_posterior = 0.0;
  int iterations = 0;
  bool converged = false;
  std::vector<std::string> warnings;
};

MapResult map_optimize(const Dataset& data, const ModelConfig& config, const MapOptions& opts = {});

// ---------------------------------------------------------------------------
// Weighted hyperparameter samples

enum class SampleSource { Map, Grid, Ccd, External };

const char* to_string(SampleSource s);

struct WeightedSampleSet {
  std::vector<std::string> names;
  std::vector<VectorXd> samples;  // unconstrained scale
  VectorXd log_weights;           // unnormalized
  SampleSource source = SampleSource::Map;
  std::vector<std::string> warnings;

  std::size_t size() const { return samples.size(); }
  VectorXd normalized_weights() const;
};

WeightedSampleSet map_samples(const HyperParams& map);

/// Standardization z -> center + transform * z built from the negative
/// Hessian of the log posterior at the mode (eigen-decomposition). Non-positive
/// curvature directions are clamped and reported in `warnings`.
struct Standardization {
  VectorXd center;
  MatrixXd transform;
  std::vector<std::string> warnings;
};

Standardization standardize(const VectorXd& center, const MatrixXd& neg_hessian);

struct DesignPoint {
  VectorXd z;
  double log_delta = 0.0;  // design weight before the density
};

inline constexpr double kCcdF0 = 1.1;

/// Center, 2p axial points and (fractional) factorial corners on the sphere of
/// radius f0 sqrt(p) in standardized space.
std::vector<DesignPoint> ccd_points(int p, double f0 = kCcdF0);

/// Resolution-V two-level design for p factors as rows of +-1 (full factorial
/// for p <= 4).
std::vector<std::vector<int>> fractional_factorial(int p);

/// Tensor grid with `per_dim` points over +-half_width in standardized space.
std::vector<DesignPoint> grid_points(int p, int per_dim, double half_width = 3.0);

/// Maps design points through `st` and weights each by the evaluated log
/// posterior plus its design weight. Points with a non-finite posterior are
/// dropped with a warning.
WeightedSampleSet weight_design(const std::vector<DesignPoint>& design, const Standardization& st,
                                const std::vector<std::string>& names,
                                const std::function<double(const VectorXd&)>& log_post,
                                SampleSource source);

/// Reads hyperparameter draws (unconstrained scale) from CSV: one column per
/// named hyperparameter and an optional log_weight column.
WeightedSampleSet load_sample_file(const std::string& path, const std::vector<std::string>& names);
WeightedSampleSet parse_sample_file(const std::string& text, const std::vector<std::string>& names);

// ---------------------------------------------------------------------------
// Integrating over hyperparameters

struct HierarchicalLoo {
  LooReport report;        // importance-reweighted combination
  LooReport unweighted;    // sum_s w_s p(y_i | D_-i, s)
  MatrixXd log_weights;    // n x S normalized integrated weights (-inf if excluded)
};

/// Combines per-sample conditional LOO reports: p(y_i | D_-i) =
/// sum_s w_s / sum_s [w_s / p(y_i | D_-i, s)].
HierarchicalLoo hierarchical_loo(const WeightedSampleSet& samples,
                                 const std::vector<LooReport>& conditional);

double effective_sample_size(const VectorXd& normalized_weights);

struct PsisResult {
  VectorXd log_weights;       // smoothed, same scale as the input
  std::optional<double> khat;
  int tail_size = 0;
  std::vector<std::string> warnings;
};

inline constexpr int kPsisMinSamples = 25;
inline constexpr double kKhatWarn = 0.7;

PsisResult psis_smooth(const VectorXd& log_weights);

struct GpdFit {
  double k = 0.0;
  double sigma = 0.0;
};

/// Generalized Pareto fit to exceedances (empirical Bayes, Zhang and
/// Stephens) with the weakly informative shrinkage of k towards 0.5.
GpdFit gpd_fit(std::vector<double> x);

struct WeightDiagnostics {
  VectorXd relative_ess;              // S_eff,i / S
  double min_relative_ess = 1.0;
  std::optional<VectorXd> khat;       // when S > 280 or samples are stochastic
  double khat_max = 0.0;
  std::vector<std::string> warnings;
};

inline constexpr std::size_t kKhatMinSamples = 280;

WeightDiagnostics loo_weight_diagnostics(const WeightedSampleSet& samples,
                                         const HierarchicalLoo& loo);

}  // namespace gploo
