#include <cmath>
#include <random>

#include "gploo/error.hpp"
#include "gploo/synthetic.hpp"

namespace gploo::synthetic {
namespace {

MatrixXd inputs(int n, int d, std::mt19937_64& rng) {
  if (n < 1 || d < 1) throw Error(ErrorKind::InvalidInput, "synthetic data needs n >= 1 and d >= 1");
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  MatrixXd x(n, d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) x(i, j) = u(rng);
  return x;
}

}  // namespace

VectorXd latent_function(const MatrixXd& x, double amplitude) {
  const double scale = amplitude / std::sqrt(static_cast<double>(x.cols()));
  VectorXd f(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) f(i) = scale * x.row(i).array().unaryExpr([](double v) { return std::sin(1.5 * v); }).sum();
  return f;
}

Dataset classification(int n, int d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Dataset data;
  data.x = inputs(n, d, rng);
  const VectorXd f = latent_function(data.x);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  data.y.resize(n);
  for (int i = 0; i < n; ++i) data.y(i) = u(rng) < 0.5 * std::erfc(-f(i) / std::sqrt(2.0)) ? 1.0 : -1.0;
  return data;
}

Dataset regression(int n, int d, std::uint64_t seed, double noise_var) {
  std::mt19937_64 rng(seed);
  Dataset data;
  data.x = inputs(n, d, rng);
  const VectorXd f = latent_function(data.x, 1.0);
  std::normal_distribution<double> z;
  data.y.resize(n);
  for (int i = 0; i < n; ++i) data.y(i) = f(i) + std::sqrt(noise_var) * z(rng);
  return data;
}

Dataset heavy_tailed(int n, int d, std::uint64_t seed, double scale, double nu) {
  std::mt19937_64 rng(seed);
  Dataset data;
  data.x = inputs(n, d, rng);
  const VectorXd f = latent_function(data.x, 1.0);
  std::student_t_distribution<double> t(nu);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> z;
  data.y.resize(n);
  for (int i = 0; i < n; ++i) {
    double e = scale * t(rng);
    if (u(rng) < 0.05) e += 3.0 * z(rng);
    data.y(i) = f(i) + e;
  }
  return data;
}

Dataset survival(int n, int d, std::uint64_t seed, double shape) {
  std::mt19937_64 rng(seed);
  Dataset data;
  data.x = inputs(n, d, rng);
  const VectorXd f = latent_function(data.x, 0.5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::exponential_distribution<double> cens_time(1.0 / 8.0);
  data.y.resize(n);
  std::vector<bool> cens(n);
  for (int i = 0; i < n; ++i) {
    const double p = u(rng);
    // Inverse CDF of the log-logistic with median exp(f).
    const double t = std::exp(f(i)) * std::pow(p / (1.0 - p), 1.0 / shape);
    const double c = cens_time(rng);
    cens[i] = c < t;
    data.y(i) = std::max(std::min(t, c), 1e-6);
  }
  data.censored = std::move(cens);
  return data;
}

}  // namespace gploo::synthetic
