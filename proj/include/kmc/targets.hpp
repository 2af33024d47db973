#pragma once

#include <cmath>
#include <functional>
#include <numbers>
#include <utility>

#include <Eigen/Core>
#include <Eigen/QR>

#include "kmc/errors.hpp"
#include "kmc/rng.hpp"

namespace kmc {

// A sampling target. At least one of log_density / estimate_log_density must
// be present; where both exist the estimate is unbiased for the unnormalised
// density (in density space, not log space).
struct Target {
  int dim = 0;
  std::function<double(const Eigen::VectorXd&)> log_density;                // exact, unnormalised
  std::function<double(const Eigen::VectorXd&, Rng&)> estimate_log_density; // log of unbiased estimate
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> gradient;          // exact grad log density
  std::function<Eigen::VectorXd(Rng&)> sample;                              // ground-truth sampler

  bool has_exact() const { return static_cast<bool>(log_density); }

  void validate() const {
    require_input(dim >= 1, "Target: dim must be positive");
    require_input(has_exact() || static_cast<bool>(estimate_log_density),
                  "Target: need log_density or estimate_log_density");
  }

  // Exact value when available, otherwise a fresh unbiased estimate.
  double log_target(const Eigen::VectorXd& x, Rng& rng) const {
    return has_exact() ? log_density(x) : estimate_log_density(x, rng);
  }
};

inline constexpr double kLog2Pi = 1.8378770664093454836;

inline Target make_standard_gaussian(int d) {
  require_input(d >= 1, "make_standard_gaussian: d must be positive");
  Target t;
  t.dim = d;
  t.log_density = [d](const Eigen::VectorXd& x) {
    return -0.5 * x.squaredNorm() - 0.5 * d * kLog2Pi;
  };
  t.gradient = [](const Eigen::VectorXd& x) -> Eigen::VectorXd { return -x; };
  t.sample = [d](Rng& rng) { return rng.normal_vec(d); };
  return t;
}

// Gaussian with covariance Q diag(lambda) Q^T: eigenvalues from Gamma(1,1),
// Q Haar-distributed via QR of a Gaussian matrix with sign-fixed R diagonal.
inline Target make_rotated_gamma_gaussian(int d, std::uint64_t seed) {
  require_input(d >= 1, "make_rotated_gamma_gaussian: d must be positive");
  Rng rng(seed);
  Eigen::VectorXd lam(d);
  for (int i = 0; i < d; ++i) lam[i] = rng.exponential();  // Gamma(1,1)

  Eigen::MatrixXd A(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) A(i, j) = rng.normal();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(A);
  Eigen::MatrixXd Q = qr.householderQ();
  const Eigen::MatrixXd R = qr.matrixQR().triangularView<Eigen::Upper>();
  for (int j = 0; j < d; ++j)
    if (R(j, j) < 0) Q.col(j) = -Q.col(j);

  const Eigen::MatrixXd prec = Q * lam.cwiseInverse().asDiagonal() * Q.transpose();
  const Eigen::MatrixXd half = Q * lam.cwiseSqrt().asDiagonal();
  const double log_norm =
      -0.5 * (d * kLog2Pi + lam.array().log().sum());

  Target t;
  t.dim = d;
  t.log_density = [prec, log_norm](const Eigen::VectorXd& x) {
    return -0.5 * x.dot(prec * x) + log_norm;
  };
  t.gradient = [prec](const Eigen::VectorXd& x) -> Eigen::VectorXd { return -(prec * x); };
  t.sample = [half, d](Rng& rng) -> Eigen::VectorXd { return half * rng.normal_vec(d); };
  return t;
}

// Multiplicative unbiased noise: pi_hat(x) = pi(x) exp(s xi - s^2/2) with
// xi ~ N(0,1), so E[pi_hat] = pi exactly.
inline Target make_noisy(const Target& base, double noise_std) {
  base.validate();
  require_input(base.has_exact(), "make_noisy: base target needs exact log density");
  require_input(noise_std >= 0.0, "make_noisy: noise_std must be nonnegative");
  Target t = base;
  const auto exact = base.log_density;
  t.log_density = nullptr;
  t.gradient = nullptr;
  t.estimate_log_density = [exact, noise_std](const Eigen::VectorXd& x, Rng& rng) {
    return exact(x) + noise_std * rng.normal() - 0.5 * noise_std * noise_std;
  };
  return t;
}

// ---------------------------------------------------------------------------
// Banana: N(0, diag(v,1,...,1)) pushed through y2 = x2 + b (x1^2 - v).
// ---------------------------------------------------------------------------

struct BananaParams {
  int d = 8;
  double b = 0.03;
  double v = 100.0;

  void validate() const {
    require_input(d >= 2, "BananaParams: d must be at least 2");
    require_input(v > 0.0, "BananaParams: v must be positive");
  }
};

inline double banana_log_density(const Eigen::VectorXd& y, const BananaParams& params) {
  params.validate();
  require_input(y.size() == params.d, "banana_log_density: dimension mismatch");
  const double y1 = y[0];
  const double m2 = params.b * (y1 * y1 - params.v);
  double out = -0.5 * y1 * y1 / params.v - 0.5 * std::log(params.v) - 0.5 * kLog2Pi;
  const double r2 = y[1] - m2;
  out += -0.5 * r2 * r2 - 0.5 * kLog2Pi;
  for (int j = 2; j < params.d; ++j) out += -0.5 * y[j] * y[j] - 0.5 * kLog2Pi;
  return out;
}

inline Eigen::VectorXd banana_grad(const Eigen::VectorXd& y, const BananaParams& params) {
  params.validate();
  require_input(y.size() == params.d, "banana_grad: dimension mismatch");
  Eigen::VectorXd g(params.d);
  const double y1 = y[0];
  const double r2 = y[1] - params.b * (y1 * y1 - params.v);
  g[0] = -y1 / params.v + 2.0 * params.b * y1 * r2;
  g[1] = -r2;
  for (int j = 2; j < params.d; ++j) g[j] = -y[j];
  return g;
}

inline Eigen::VectorXd banana_sample(const BananaParams& params, Rng& rng) {
  params.validate();
  Eigen::VectorXd y = rng.normal_vec(params.d);
  y[0] *= std::sqrt(params.v);
  y[1] += params.b * (y[0] * y[0] - params.v);
  return y;
}

inline Target make_banana(const BananaParams& params) {
  params.validate();
  Target t;
  t.dim = params.d;
  t.log_density = [params](const Eigen::VectorXd& y) { return banana_log_density(y, params); };
  t.gradient = [params](const Eigen::VectorXd& y) { return banana_grad(y, params); };
  t.sample = [params](Rng& rng) { return banana_sample(params, rng); };
  return t;
}

// ---------------------------------------------------------------------------
// ABC skew-normal and the log-normal conjugate counterexample.
// ---------------------------------------------------------------------------

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

// Skew-normal draw via the additive representation: with
// delta = alpha / sqrt(1 + ||alpha||^2),
//   y = theta + delta |z0| + (I - delta delta^T)^{1/2} z,
// which has density 2 N(y; theta, I) Phi(alpha^T (y - theta)).
inline Eigen::VectorXd skew_normal_simulate(const Eigen::VectorXd& theta,
                                            const Eigen::VectorXd& alpha, Rng& rng) {
  require_input(theta.size() == alpha.size(), "skew_normal_simulate: dimension mismatch");
  const Eigen::Index d = theta.size();
  const double a2 = alpha.squaredNorm();
  const Eigen::VectorXd delta = alpha / std::sqrt(1.0 + a2);
  const double z0 = std::abs(rng.normal());
  const Eigen::VectorXd z = rng.normal_vec(d);
  // (I - delta delta^T)^{1/2} z = z - c (delta^T z) delta with
  // c = (1 - sqrt(1 - ||delta||^2)) / ||delta||^2
  const double d2 = delta.squaredNorm();
  Eigen::VectorXd corr = z;
  if (d2 > 0.0) corr -= ((1.0 - std::sqrt(1.0 - d2)) / d2) * delta.dot(z) * delta;
  return theta + z0 * delta + corr;
}

inline double skew_normal_log_density(const Eigen::VectorXd& y, const Eigen::VectorXd& theta,
                                      const Eigen::VectorXd& alpha) {
  const Eigen::VectorXd r = y - theta;
  return std::log(2.0) - 0.5 * r.squaredNorm() - 0.5 * y.size() * kLog2Pi +
         std::log(std::max(normal_cdf(alpha.dot(r)), 1e-300));
}

struct ABCParams {
  int theta_dim = 10;
  double epsilon = 0.55;   // similarity bandwidth
  int n_lik = 10;          // simulated datasets per estimate
  int n_batch = 10;        // draws per simulated dataset (matches observed data size)
  Eigen::VectorXd alpha;   // skew direction
  Target prior;            // optional; flat when prior.dim == 0

  void validate() const {
    require_input(theta_dim >= 1, "ABCParams: theta_dim must be positive");
    require_input(epsilon > 0.0, "ABCParams: epsilon must be positive");
    require_input(n_lik >= 1, "ABCParams: n_lik must be at least 1");
    require_input(n_batch >= 1, "ABCParams: n_batch must be at least 1");
    require_input(alpha.size() == theta_dim, "ABCParams: alpha dimension mismatch");
  }
};

// log of (1/n_lik) sum_i N(y_obs_summary; mean of i-th simulated batch, eps^2 I):
// a simple Monte Carlo estimator of the ABC likelihood, unbiased in density
// space. Combined via log-sum-exp.
inline double abc_estimate_log_likelihood(const Eigen::VectorXd& theta,
                                          const Eigen::VectorXd& y_obs_summary,
                                          const ABCParams& params, Rng& rng) {
  params.validate();
  require_input(theta.size() == params.theta_dim, "abc_estimate: theta dimension mismatch");
  require_input(y_obs_summary.size() == params.theta_dim,
                "abc_estimate: summary dimension mismatch");
  const int d = params.theta_dim;
  const double eps2 = params.epsilon * params.epsilon;
  Eigen::VectorXd logs(params.n_lik);
  for (int i = 0; i < params.n_lik; ++i) {
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(d);
    for (int j = 0; j < params.n_batch; ++j)
      mean += skew_normal_simulate(theta, params.alpha, rng);
    mean /= params.n_batch;
    logs[i] = -0.5 * (y_obs_summary - mean).squaredNorm() / eps2 -
              0.5 * d * (kLog2Pi + 2.0 * std::log(params.epsilon));
  }
  const double top = logs.maxCoeff();
  return top + std::log((logs.array() - top).exp().sum() / params.n_lik);
}

inline Target make_abc_target(const ABCParams& params, const Eigen::VectorXd& y_obs_summary) {
  params.validate();
  Target t;
  t.dim = params.theta_dim;
  const bool has_prior = params.prior.dim > 0;
  if (has_prior) params.prior.validate();
  t.estimate_log_density = [params, y_obs_summary, has_prior](const Eigen::VectorXd& theta,
                                                              Rng& rng) {
    double lp = has_prior ? params.prior.log_density(theta) : 0.0;
    return lp + abc_estimate_log_likelihood(theta, y_obs_summary, params, rng);
  };
  return t;
}

// Conjugate posterior of the log-normal mean: data y_i = exp(N(mu, 1/tau)),
//   mu | y ~ N((tau0 mu0 + tau sum log y_i) / (tau0 + n tau), tau0 + n tau),
// returned as (mean, precision).
inline std::pair<double, double> lognormal_true_posterior(const Eigen::VectorXd& data,
                                                          double mu0, double tau0,
                                                          double tau) {
  require_input(tau0 > 0.0 && tau > 0.0, "lognormal_true_posterior: precisions must be positive");
  const Eigen::Index n = data.size();
  if (n == 0) return {mu0, tau0};
  require_input((data.array() > 0.0).all(), "lognormal_true_posterior: data must be positive");
  const double sum_log = data.array().log().sum();
  const double precision = tau0 + static_cast<double>(n) * tau;
  return {(tau0 * mu0 + tau * sum_log) / precision, precision};
}

// Synthetic posterior of the Gaussian-likelihood scheme: the data enter a
// Gaussian y | mu ~ N(mu_hat, var_hat + eps^2) whose moments are empirical
// estimates from n_lik simulated draws, and the grid carries the expected log
// synthetic likelihood over that simulation randomness. This is the target a
// stochastic-gradient sampler driven by the synthetic likelihood feels. As
// n_lik grows the moments converge to the maps
//   mu_G = exp(mu + 1/(2 tau)),  var_G = (exp(1/tau) - 1) exp(2 mu + 1/tau).
// Common random numbers across grid points: replicate r contributes
// mu_hat = e^mu a_r and var_hat = e^{2 mu} b_r with (a_r, b_r) drawn once, so
// the grid function is smooth and fully determined by the seed. Throws when
// boundary mass suggests grid truncation above 1e-6.
inline Eigen::VectorXd synthetic_gaussian_posterior(const Eigen::VectorXd& data,
                                                    const Eigen::VectorXd& mu_grid,
                                                    double mu0, double tau0, double tau,
                                                    double epsilon, int n_lik = 10,
                                                    int reps = 500,
                                                    std::uint64_t seed = 20150607) {
  require_input(mu_grid.size() >= 3, "synthetic_gaussian_posterior: grid too small");
  require_input(tau0 > 0.0 && tau > 0.0,
                "synthetic_gaussian_posterior: precisions must be positive");
  require_input((data.array() > 0.0).all(), "synthetic_gaussian_posterior: data must be positive");
  require_input(n_lik >= 2 && reps >= 1, "synthetic_gaussian_posterior: need n_lik >= 2, reps >= 1");

  Rng rng(seed);
  Eigen::VectorXd a(reps), b(reps);
  for (int r = 0; r < reps; ++r) {
    double m = 0.0, m2 = 0.0;
    for (int k = 0; k < n_lik; ++k) {
      const double e = std::exp(rng.normal() / std::sqrt(tau));
      m += e;
      m2 += e * e;
    }
    m /= n_lik;
    a[r] = m;
    b[r] = (m2 - n_lik * m * m) / (n_lik - 1);
  }

  const double n = static_cast<double>(data.size());
  const double sy = data.sum();
  const double sy2 = data.squaredNorm();

  const Eigen::Index g = mu_grid.size();
  Eigen::VectorXd logp(g);
  for (Eigen::Index i = 0; i < g; ++i) {
    const double mu = mu_grid[i];
    const double emu = std::exp(mu);
    double total = 0.0;
    for (int r = 0; r < reps; ++r) {
      const double m = emu * a[r];
      const double v = emu * emu * b[r] + epsilon * epsilon;
      total += -0.5 * (sy2 - 2.0 * m * sy + n * m * m) / v - 0.5 * n * std::log(v);
    }
    logp[i] = total / reps - 0.5 * tau0 * (mu - mu0) * (mu - mu0);
  }
  logp.array() -= logp.maxCoeff();
  Eigen::VectorXd mass = logp.array().exp();
  mass /= mass.sum();
  require_input(std::max(mass[0], mass[g - 1]) <= 1e-6,
                "synthetic_gaussian_posterior: grid truncates posterior mass, widen the grid");
  return mass;
}

}  // namespace kmc
