#include <Eigen/Eigenvalues>
#include <bit>
#include <cmath>
#include <functional>

#include "csv.hpp"
#include "gploo/error.hpp"
#include "gploo/hyper.hpp"
#include "gploo/numeric.hpp"

namespace gploo {
namespace {

// All products of a non-empty subset of generator words have length >= 5.
bool resolution_v(const std::vector<unsigned>& gens) {
  const std::size_t m = gens.size();
  for (unsigned subset = 1; subset < (1u << m); ++subset) {
    unsigned base = 0;
    for (std::size_t j = 0; j < m; ++j)
      if (subset & (1u << j)) base ^= gens[j];
    if (std::popcount(base) + std::popcount(subset) < 5) return false;
  }
  return true;
}

bool search(int k, int need, unsigned from, std::vector<unsigned>& gens) {
  if (static_cast<int>(gens.size()) == need) return true;
  for (unsigned c = from; c < (1u << k); ++c) {
    if (std::popcount(c) < 4) continue;
    gens.push_back(c);
    if (resolution_v(gens) && search(k, need, c + 1, gens)) return true;
    gens.pop_back();
  }
  return false;
}

}  // namespace

const char* to_string(SampleSource s) {
  switch (s) {
    case SampleSource::Map: return "map";
    case SampleSource::Grid: return "grid";
    case SampleSource::Ccd: return "ccd";
    case SampleSource::External: return "external";
  }
  return "unknown";
}

VectorXd WeightedSampleSet::normalized_weights() const {
  std::vector<double> lw(log_weights.data(), log_weights.data() + log_weights.size());
  const double lse = log_sum_exp(lw);
  return (log_weights.array() - lse).exp();
}

WeightedSampleSet map_samples(const HyperParams& map) {
  WeightedSampleSet s;
  s.names = map.names;
  s.samples = {map.values};
  s.log_weights = VectorXd::Zero(1);
  s.source = SampleSource::Map;
  return s;
}

Standardization standardize(const VectorXd& center, const MatrixXd& neg_hessian) {
  const Eigen::Index p = center.size();
  if (neg_hessian.rows() != p || neg_hessian.cols() != p || !neg_hessian.allFinite())
    throw Error(ErrorKind::InvalidInput, "curvature matrix must be a finite p x p matrix");
  Standardization st;
  st.center = center;
  if (p == 0) return st;
  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(0.5 * (neg_hessian + neg_hessian.transpose()));
  VectorXd lambda = eig.eigenvalues();
  const double floor = std::max(1e-4, 1e-3 * lambda.maxCoeff());
  for (Eigen::Index j = 0; j < p; ++j) {
    if (!(lambda(j) >= floor)) {
      st.warnings.push_back("posterior curvature " + std::to_string(lambda(j)) +
                            " clamped to " + std::to_string(floor) + " in one direction");
      lambda(j) = floor;
    }
  }
  st.transform = eig.eigenvectors() * lambda.cwiseInverse().cwiseSqrt().asDiagonal();
  return st;
}

std::vector<std::vector<int>> fractional_factorial(int p) {
  if (p < 1 || p > 20) throw Error(ErrorKind::InvalidInput, "factorial design needs 1 <= p <= 20");
  int k = p;
  std::vector<unsigned> gens;
  if (p > 4) {
    for (k = 1; k < p; ++k) {
      gens.clear();
      if (search(k, p - k, 0, gens)) break;
    }
    if (k == p) gens.clear();
  }
  std::vector<std::vector<int>> rows;
  for (unsigned r = 0; r < (1u << k); ++r) {
    std::vector<int> row(p);
    for (int j = 0; j < k; ++j) row[j] = (r >> j) & 1u ? 1 : -1;
    for (std::size_t g = 0; g < gens.size(); ++g) {
      int v = 1;
      for (int j = 0; j < k; ++j)
        if (gens[g] & (1u << j)) v *= row[j];
      row[k + g] = v;
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<DesignPoint> ccd_points(int p, double f0) {
  if (p < 1) throw Error(ErrorKind::InvalidInput, "CCD needs at least one dimension");
  if (!(f0 > 1.0)) throw Error(ErrorKind::InvalidInput, "CCD scaling f0 must exceed 1");
  std::vector<DesignPoint> pts;
  pts.push_back({VectorXd::Zero(p), 0.0});
  const double radius = f0 * std::sqrt(static_cast<double>(p));
  for (int j = 0; j < p; ++j)
    for (double sgn : {1.0, -1.0}) {
      VectorXd z = VectorXd::Zero(p);
      z(j) = sgn * radius;
      pts.push_back({z, 0.0});
    }
  if (p > 1) {
    for (const auto& row : fractional_factorial(p)) {
      VectorXd z(p);
      for (int j = 0; j < p; ++j) z(j) = f0 * row[j];
      pts.push_back({z, 0.0});
    }
  }
  const double n = static_cast<double>(pts.size());
  const double log_delta =
      -std::log((n - 1.0) * (f0 * f0 - 1.0) * (1.0 + std::exp(-0.5 * p * f0 * f0)));
  for (std::size_t i = 1; i < pts.size(); ++i) pts[i].log_delta = log_delta;
  return pts;
}

std::vector<DesignPoint> grid_points(int p, int per_dim, double half_width) {
  if (p < 1 || per_dim < 1 || !(half_width > 0.0))
    throw Error(ErrorKind::InvalidInput, "grid needs p >= 1, points >= 1 and a positive span");
  double total = std::pow(static_cast<double>(per_dim), p);
  if (total > 1e6) throw Error(ErrorKind::InvalidInput, "grid would exceed 10^6 points");
  std::vector<double> axis(per_dim, 0.0);
  for (int k = 0; k < per_dim && per_dim > 1; ++k)
    axis[k] = -half_width + 2.0 * half_width * k / (per_dim - 1);
  std::vector<DesignPoint> pts;
  std::vector<int> idx(p, 0);
  for (;;) {
    VectorXd z(p);
    for (int j = 0; j < p; ++j) z(j) = axis[idx[j]];
    pts.push_back({z, 0.0});
    int j = 0;
    while (j < p && ++idx[j] == per_dim) idx[j++] = 0;
    if (j == p) break;
  }
  return pts;
}

WeightedSampleSet weight_design(const std::vector<DesignPoint>& design, const Standardization& st,
                                const std::vector<std::string>& names,
                                const std::function<double(const VectorXd&)>& log_post,
                                SampleSource source) {
  WeightedSampleSet s;
  s.names = names;
  s.source = source;
  s.warnings = st.warnings;
  std::vector<double> lw;
  for (const DesignPoint& d : design) {
    const VectorXd theta = st.center + st.transform * d.z;
    const double lp = log_post(theta);
    if (!std::isfinite(lp)) {
      s.warnings.push_back("design point dropped: log posterior is not finite");
      continue;
    }
    s.samples.push_back(theta);
    lw.push_back(lp + d.log_delta);
  }
  if (s.samples.empty())
    throw Error(ErrorKind::DegenerateModel, "log posterior is not finite at any design point");
  s.log_weights = Eigen::Map<VectorXd>(lw.data(), static_cast<Eigen::Index>(lw.size()));
  return s;
}

WeightedSampleSet parse_sample_file(const std::string& text, const std::vector<std::string>& names) {
  const csv::Table t = csv::parse(text);
  std::vector<int> col(names.size(), -1);
  int wcol = -1;
  for (int c = 0; c < static_cast<int>(t.header.size()); ++c) {
    const std::string& h = t.header[c];
    if (h == "log_weight") {
      wcol = c;
      continue;
    }
    bool found = false;
    for (std::size_t j = 0; j < names.size(); ++j)
      if (names[j] == h) {
        col[j] = c;
        found = true;
      }
    if (!found) csv::fail(t.header_line, "unknown hyperparameter column '" + h + "'");
  }
  for (std::size_t j = 0; j < names.size(); ++j)
    if (col[j] < 0) csv::fail(t.header_line, "missing hyperparameter column '" + names[j] + "'");
  WeightedSampleSet s;
  s.names = names;
  s.source = SampleSource::External;
  s.log_weights = VectorXd::Zero(static_cast<Eigen::Index>(t.rows.size()));
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    VectorXd v(static_cast<Eigen::Index>(names.size()));
    for (std::size_t j = 0; j < names.size(); ++j) v(j) = t.rows[r][col[j]];
    s.samples.push_back(std::move(v));
    if (wcol >= 0) s.log_weights(r) = t.rows[r][wcol];
  }
  return s;
}

WeightedSampleSet load_sample_file(const std::string& path, const std::vector<std::string>& names) {
  return parse_sample_file(csv::read_file(path), names);
}

}  // namespace gploo
