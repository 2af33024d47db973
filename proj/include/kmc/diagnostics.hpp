#pragma once

#include <cmath>
#include <vector>

#include <Eigen/Core>

#include "kmc/errors.hpp"

namespace kmc {

// Normalized empirical autocorrelation rho_0..rho_max_lag.
inline Eigen::VectorXd autocorrelation(const Eigen::VectorXd& series, int max_lag) {
  const Eigen::Index T = series.size();
  require_input(max_lag >= 1 && T > max_lag, "autocorrelation: need T > max_lag >= 1");
  const double mean = series.mean();
  const Eigen::VectorXd c = series.array() - mean;
  const double var = c.squaredNorm() / static_cast<double>(T);
  require_numeric(var > 0.0, "autocorrelation: constant series has undefined correlation");

  Eigen::VectorXd rho(max_lag + 1);
  rho[0] = 1.0;
  for (int k = 1; k <= max_lag; ++k)
    rho[k] = c.head(T - k).dot(c.tail(T - k)) / (static_cast<double>(T) * var);
  return rho;
}

struct EssReport {
  Eigen::VectorXd per_dim;
  double min_ess = 0.0;
  std::vector<int> truncation_lags;
  std::vector<bool> degenerate;  // constant dimensions, reported as ESS = T
};

// Per-dimension ESS = T / (1 + 2 sum rho_k) with Geyer initial-positive-
// sequence truncation: pair sums Gamma_m = rho_{2m} + rho_{2m+1} are
// accumulated while positive. Estimates are clamped to (0, T].
inline EssReport min_ess(const Eigen::MatrixXd& samples) {
  const Eigen::Index T = samples.rows();
  const int d = static_cast<int>(samples.cols());
  require_input(T >= 10, "min_ess: need at least 10 samples");

  EssReport report;
  report.per_dim.resize(d);
  report.truncation_lags.resize(d);
  report.degenerate.assign(d, false);

  for (int j = 0; j < d; ++j) {
    const Eigen::VectorXd c = samples.col(j).array() - samples.col(j).mean();
    const double var = c.squaredNorm() / static_cast<double>(T);
    if (!(var > 0.0)) {
      report.per_dim[j] = static_cast<double>(T);
      report.truncation_lags[j] = 0;
      report.degenerate[j] = true;
      continue;
    }
    const auto rho = [&](Eigen::Index k) {
      if (k >= T) return 0.0;
      return c.head(T - k).dot(c.tail(T - k)) / (static_cast<double>(T) * var);
    };

    double pair_total = 0.0;
    int last_lag = 0;
    for (Eigen::Index m = 0;; ++m) {
      const Eigen::Index k = 2 * m;
      if (k >= T - 1) break;
      const double gamma = rho(k) + rho(k + 1);
      if (gamma <= 0.0) break;
      pair_total += gamma;
      last_lag = static_cast<int>(k + 1);
    }
    const double tau = std::max(1.0, 2.0 * pair_total - 1.0);
    report.per_dim[j] = static_cast<double>(T) / tau;
    report.truncation_lags[j] = last_lag;
  }
  report.min_ess = report.per_dim.minCoeff();
  return report;
}

// Biased V-statistic MMD with the cubic polynomial kernel (1 + <x,y>)^3,
// square-rooted. Identical multisets give exactly zero.
inline double mmd_poly3(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y) {
  require_input(X.rows() >= 1 && Y.rows() >= 1, "mmd_poly3: need nonempty sample sets");
  require_input(X.cols() == Y.cols(), "mmd_poly3: dimension mismatch");
  const auto kernel_mean = [](const Eigen::MatrixXd& A, const Eigen::MatrixXd& B) {
    return (1.0 + (A * B.transpose()).array()).cube().mean();
  };
  const double mmd2 =
      kernel_mean(X, X) + kernel_mean(Y, Y) - 2.0 * kernel_mean(X, Y);
  return std::sqrt(std::max(0.0, mmd2));
}

inline double mean_norm(const Eigen::MatrixXd& samples) {
  require_input(samples.rows() >= 1, "mean_norm: need at least one sample");
  return samples.colwise().mean().norm();
}

inline double acceptance_rate(const std::vector<char>& flags, Eigen::Index burn_in) {
  const Eigen::Index T = static_cast<Eigen::Index>(flags.size());
  require_input(burn_in >= 0 && burn_in < T, "acceptance_rate: burn_in must be below T");
  long long accepted = 0;
  for (Eigen::Index t = burn_in; t < T; ++t) accepted += flags[t] ? 1 : 0;
  return static_cast<double>(accepted) / static_cast<double>(T - burn_in);
}

}  // namespace kmc
