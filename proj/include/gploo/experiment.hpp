#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "gploo/hyper.hpp"
#include "gploo/loo.hpp"
#include "gploo/report.hpp"

namespace gploo {

enum class HyperMode { Fixed, Map, Ccd, Grid, SampleFile };

const char* to_string(HyperMode m);
HyperMode hyper_mode_from_string(const std::string& name);

struct ExperimentConfig {
  /// Registry name (ripley, synthetic-probit, synthetic-regression,
  /// synthetic-student-t, synthetic-survival) or a CSV path.
  std::string dataset = "ripley";
  int n = 100;  // synthetic sizes
  int d = 1;
  std::string data_dir;  // where registry files live; empty means the built-in path
  std::optional<KernelSpec> kernel;
  std::optional<LikelihoodSpec> likelihood;
  InferenceMethod inference = InferenceMethod::EP;
  HyperMode hyper = HyperMode::Map;
  std::string sample_file;
  int grid_points = 5;
  double grid_half_width = 3.0;
  std::vector<std::string> methods;
  std::string reference = "exact";
  TruncationConfig truncation;
  int quad_nodes = kDefaultQuadNodes;
  std::uint64_t seed = 1;
  std::string out = "out";
  int threads = 1;
  /// Recompute failed points of approximate methods by brute-force refits.
  bool fallback = false;
  /// Write wall-clock timings to timings.json (not deterministic).
  bool timings = false;
  std::vector<double> multipliers;  // length-scale multipliers for sweeps
};

ExperimentConfig parse_config(const Json& doc);
ExperimentConfig load_config(const std::string& path);
Json to_json(const ExperimentConfig& c);

/// Accepted LOO method identifiers. "-g" uses the Gaussian marginals of the
/// configured approximation, "-l" the tilted (cavity times likelihood) ones.
const std::vector<std::string>& method_ids();
bool is_method_id(const std::string& id);

struct Problem {
  std::string name;
  Dataset data;
  ModelConfig model;  // starting hyperparameters
};

Problem resolve_problem(const ExperimentConfig& c);

struct FitOutcome {
  ModelConfig model;  // at the central hyperparameters
  HyperParams params;
  WeightedSampleSet samples;
  LatentFit fit;
  std::optional<MapResult> map;
  std::vector<std::string> warnings;
  std::vector<std::pair<std::string, double>> timings;  // seconds per phase
};

FitOutcome fit_model(const ExperimentConfig& c, const Problem& p);
Json fit_summary(const ExperimentConfig& c, const Problem& p, const FitOutcome& f);

struct ComparisonRow {
  std::string method;
  double bias = 0.0;
  double std = 0.0;
  int n_failures = 0;
  double p_eff_over_n = 0.0;
  double min_rel_ess = 1.0;
  std::optional<double> khat_max;
};

struct LooRun {
  FitOutcome fit;
  LooReport reference;
  std::vector<LooReport> reports;  // one per requested method, in order
  std::vector<Diagnostics> diagnostics;
  std::vector<std::optional<WeightDiagnostics>> weights;
  std::vector<ComparisonRow> rows;
  std::vector<std::pair<std::string, double>> timings;
};

LooRun run_loo(const ExperimentConfig& c, const Problem& p);
LooRun run_loo(const ExperimentConfig& c, const Problem& p, FitOutcome fit);

std::string comparison_csv(const std::vector<ComparisonRow>& rows);
std::vector<ComparisonRow> parse_comparison_csv(const std::string& text);

struct SweepRow {
  double multiplier = 1.0;
  double p_eff_over_n = 0.0;
  std::string method;
  double bias = 0.0;
  double std = 0.0;
  int n_failures = 0;
  bool warned = false;  // diagnostics flagged the method as unreliable
};

std::vector<SweepRow> run_sweep(const ExperimentConfig& c, const Problem& p);
std::string sweep_csv(const std::vector<SweepRow>& rows);

/// Command entry points: run, write outputs under c.out, return the exit code
/// (0 ok, 1 inference failure). Input errors propagate as Error(InvalidInput).
int command_fit(const ExperimentConfig& c);
int command_loo(const ExperimentConfig& c);
int command_sweep(const ExperimentConfig& c);

}  // namespace gploo
