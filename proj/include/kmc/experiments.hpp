#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "kmc/diagnostics.hpp"
#include "kmc/dynamics.hpp"
#include "kmc/errors.hpp"
#include "kmc/io.hpp"
#include "kmc/parallel.hpp"
#include "kmc/rng.hpp"
#include "kmc/samplers.hpp"
#include "kmc/score_matching.hpp"
#include "kmc/targets.hpp"

namespace kmc {

// Median of pairwise squared distances over a stride-capped subsample; the
// usual bandwidth heuristic for k(x,y) = exp(-||x-y||^2 / sigma).
inline double median_heuristic_sigma(const Eigen::MatrixXd& X) {
  const Eigen::Index n = X.rows();
  if (n < 2) return 1.0;
  const Eigen::Index stride = std::max<Eigen::Index>(1, n / 256);
  std::vector<double> d2;
  for (Eigen::Index i = 0; i < n; i += stride)
    for (Eigen::Index j = i + stride; j < n; j += stride)
      d2.push_back((X.row(i) - X.row(j)).squaredNorm());
  if (d2.empty()) return 1.0;
  std::nth_element(d2.begin(), d2.begin() + d2.size() / 2, d2.end());
  return d2[d2.size() / 2] > 0.0 ? d2[d2.size() / 2] : 1.0;
}

// ---------------------------------------------------------------------------
// Trajectory study: exact vs surrogate-induced flows on the 2-D standard
// Gaussian, acceptance evaluated with the true Hamiltonian at matched starts.
// ---------------------------------------------------------------------------

struct TrajectoryStudyConfig {
  int n_train = 2000;
  int m = 500;
  double sigma = 0.0;  // <= 0 selects the median heuristic
  double lambda = 1e-4;
  int n_traj = 500;
  double eps = 0.1;
  int L = 20;
  int n_recorded = 3;
  std::uint64_t seed = 1;
};

struct TrajectoryStudyResult {
  double mean_exact = 0.0;
  double mean_surrogate = 0.0;
  Eigen::VectorXd exact_accept;
  Eigen::VectorXd surrogate_accept;
  std::vector<Trajectory> exact_recorded;
  std::vector<Trajectory> surrogate_recorded;
  double sigma_used = 0.0;
};

inline TrajectoryStudyResult trajectory_study(const TrajectoryStudyConfig& config) {
  require_input(config.n_traj >= 1 && config.n_train >= 2 && config.m >= 1,
                "trajectory_study: bad sizes");
  require_input(config.eps > 0.0 && config.L >= 1, "trajectory_study: bad leapfrog settings");
  const Target target = make_standard_gaussian(2);
  Rng rng(config.seed);

  Eigen::MatrixXd train(config.n_train, 2);
  for (int i = 0; i < config.n_train; ++i) train.row(i) = target.sample(rng);
  const double sigma =
      config.sigma > 0.0 ? config.sigma : median_heuristic_sigma(train);
  const FeatureBasis basis = sample_basis(KernelSpec{KernelFamily::Gaussian, sigma, 1.0},
                                          config.m, 2, config.seed ^ 0xF19u);
  const FiniteModel model = fit_finite_batch(train, basis, config.lambda);

  const auto exact_grad = [](const Eigen::VectorXd& q) -> Eigen::VectorXd { return -q; };
  const auto surr_grad = [&model](const Eigen::VectorXd& q) { return finite_grad(model, q); };
  const auto U = [&target](const Eigen::VectorXd& q) { return -target.log_density(q); };

  TrajectoryStudyResult result;
  result.sigma_used = sigma;
  result.exact_accept.resize(config.n_traj);
  result.surrogate_accept.resize(config.n_traj);

  for (int k = 0; k < config.n_traj; ++k) {
    const Eigen::VectorXd q = target.sample(rng);
    const Eigen::VectorXd p = rng.normal_vec(2);
    const Trajectory exact = leapfrog([&](const Eigen::VectorXd& x) { return (-exact_grad(x)).eval(); },
                                      q, p, config.eps, config.L);
    const Trajectory surr = leapfrog([&](const Eigen::VectorXd& x) { return (-surr_grad(x)).eval(); },
                                     q, p, config.eps, config.L);
    const double h0 = hamiltonian(U, q, p);
    result.exact_accept[k] =
        accept_prob(h0, hamiltonian(U, exact.positions.row(config.L),
                                    exact.momenta.row(config.L)));
    result.surrogate_accept[k] =
        accept_prob(h0, hamiltonian(U, surr.positions.row(config.L),
                                    surr.momenta.row(config.L)));
    if (k < config.n_recorded) {
      result.exact_recorded.push_back(exact);
      result.surrogate_recorded.push_back(surr);
    }
  }
  result.mean_exact = result.exact_accept.mean();
  result.mean_surrogate = result.surrogate_accept.mean();
  return result;
}

// ---------------------------------------------------------------------------
// Hypothetical acceptance benchmark over (d, n = m, trial).
// ---------------------------------------------------------------------------

struct AcceptanceBenchConfig {
  bool rotated = false;  // isotropic Gaussian + Gaussian kernel, or
                         // Gamma-eigenvalue rotated Gaussian + RQ kernel
  std::vector<int> d_grid{8};
  std::vector<int> n_grid{200, 500, 1000, 2000};
  int trials = 10;
  int n_eval = 25;
  double eps = 0.1;
  int L = 10;
  double lambda = 1e-4;
  double rq_alpha = 1.0;
  std::uint64_t seed = 1;
  unsigned threads = 0;
};

struct AcceptanceBenchRow {
  int d = 0;
  int n = 0;
  int trial = 0;
  double mean_accept = 0.0;
};

inline std::vector<AcceptanceBenchRow> acceptance_benchmark(
    const AcceptanceBenchConfig& config) {
  require_input(!config.d_grid.empty() && !config.n_grid.empty(),
                "acceptance_benchmark: grids must be nonempty");
  require_input(config.trials >= 1, "acceptance_benchmark: trials must be at least 1");

  const std::size_t cells = config.d_grid.size() * config.n_grid.size() *
                            static_cast<std::size_t>(config.trials);
  std::vector<AcceptanceBenchRow> rows(cells);
  const Rng root(config.seed);

  parallel_for(
      cells,
      [&](std::size_t idx) {
        const int trial = static_cast<int>(idx % config.trials);
        const std::size_t rest = idx / config.trials;
        const int ni = static_cast<int>(rest % config.n_grid.size());
        const int di = static_cast<int>(rest / config.n_grid.size());
        const int d = config.d_grid[di];
        const int n = config.n_grid[ni];

        Rng rng = root.fork(idx + 1);
        // rotated targets are redrawn per (d, trial), shared across the n grid
        const Target target =
            config.rotated
                ? make_rotated_gamma_gaussian(
                      d, config.seed ^ (0x5EEDu + 1009u * d + 13u * trial))
                : make_standard_gaussian(d);

        Eigen::MatrixXd train(n, d);
        for (int i = 0; i < n; ++i) train.row(i) = target.sample(rng);
        const double sigma = median_heuristic_sigma(train);
        const KernelSpec spec{config.rotated ? KernelFamily::RationalQuadratic
                                             : KernelFamily::Gaussian,
                              sigma, config.rq_alpha};
        const FeatureBasis basis =
            sample_basis(spec, n, d, config.seed ^ (idx * 2654435761ULL + 17));
        const FiniteModel model = fit_finite_batch(train, basis, config.lambda);

        const auto U = [&target](const Eigen::VectorXd& q) { return -target.log_density(q); };
        double total = 0.0;
        for (int k = 0; k < config.n_eval; ++k) {
          const Eigen::VectorXd q = target.sample(rng);
          const Eigen::VectorXd p = rng.normal_vec(d);
          const Trajectory traj =
              leapfrog([&](const Eigen::VectorXd& x) { return (-finite_grad(model, x)).eval(); },
                       q, p, config.eps, config.L);
          if (traj.diverged) continue;  // counts as zero acceptance
          total += accept_prob(hamiltonian(U, q, p),
                               hamiltonian(U, traj.positions.row(config.L),
                                           traj.momenta.row(config.L)));
        }
        rows[idx] = {d, n, trial, total / config.n_eval};
      },
      config.threads);
  return rows;
}

// Mean acceptance for one (d, n) cell.
inline double bench_cell_mean(const std::vector<AcceptanceBenchRow>& rows, int d, int n) {
  double total = 0.0;
  int count = 0;
  for (const auto& row : rows)
    if (row.d == d && row.n == n) {
      total += row.mean_accept;
      ++count;
    }
  require_input(count > 0, "bench_cell_mean: empty cell");
  return total / count;
}

// ---------------------------------------------------------------------------
// Banana study: RW / HMC / KMC finite under the 2000+200 protocol.
// ---------------------------------------------------------------------------

struct BananaStudyConfig {
  BananaParams banana{};
  std::vector<int> n_grid{200, 500, 1000, 2000};
  int seeds = 10;
  long long T = 2200;
  long long burn_in = 200;
  int L = 20;
  double hmc_target = 0.8;
  double rw_target = 0.234;
  double lambda = 1e-3;
  double sigma = 0.0;  // <= 0 selects the median heuristic during the run
  double sigma_scale = 2.0;
  bool include_lite = false;
  std::uint64_t seed = 1;
  unsigned threads = 0;
};

struct BananaRow {
  std::string sampler;
  int n = 0;  // basis size, 0 for baselines
  int seed_idx = 0;
  double acceptance = 0.0;
  double mean_norm = 0.0;
  double min_ess = 0.0;
  double eps = 0.0;
};

inline std::vector<BananaRow> banana_study(const BananaStudyConfig& config) {
  require_input(config.seeds >= 1 && config.T > config.burn_in, "banana_study: bad sizes");
  const Target target = make_banana(config.banana);
  const int d = config.banana.d;
  const int per_seed = 2 + static_cast<int>(config.n_grid.size()) * (config.include_lite ? 2 : 1);
  std::vector<BananaRow> rows(config.seeds * per_seed);
  const Rng root(config.seed);

  parallel_for(
      config.seeds,
      [&](std::size_t s) {
        Rng rng = root.fork(1000 + s);
        const Eigen::VectorXd init = rng.normal_vec(d);
        int slot = static_cast<int>(s) * per_seed;

        const auto metrics = [&](const ChainResult& chain) {
          const Eigen::MatrixXd post = chain.samples.bottomRows(config.T - config.burn_in);
          return std::tuple<double, double, double>{
              acceptance_rate(chain.accepted, config.burn_in), mean_norm(post),
              min_ess(post).min_ess};
        };

        // the 80 percent rule fixes (eps, L) for both HMC and KMC
        const double eps = tune_hmc_step(target, config.L, 0.5, 0.02, 2.0, 400,
                                         config.hmc_target, root.fork(2000 + s).next_u64(),
                                         init);

        {
          SamplerConfig hc;
          hc.algorithm = Algorithm::HMC;
          hc.hamiltonian.eps_min = hc.hamiltonian.eps_max = eps;
          hc.hamiltonian.L_min = hc.hamiltonian.L_max = config.L;
          hc.T = config.T;
          hc.burn_in = config.burn_in;
          hc.seed = root.fork(3000 + s).next_u64();
          hc.init = init;
          const auto [acc, norm, ess] = metrics(run_hmc(target, hc));
          rows[slot++] = {"hmc", 0, static_cast<int>(s), acc, norm, ess, eps};
        }
        {
          RwOptions opts;
          opts.init = init;
          opts.burn_in = config.burn_in;
          opts.initial_scale = 1.0;
          const ChainResult chain =
              run_rw(target, config.T, config.rw_target, root.fork(4000 + s).next_u64(), opts);
          const auto [acc, norm, ess] = metrics(chain);
          rows[slot++] = {"rw", 0, static_cast<int>(s), acc, norm, ess,
                          chain.proposal_meta(config.T - 1, 0)};
        }
        for (std::size_t ni = 0; ni < config.n_grid.size(); ++ni) {
          const int n = config.n_grid[ni];
          // n = m burn-in samples are collected by a drift warm-up segment
          // before the measured 2000+200 window, so the estimator trains on
          // history that has seen the support
          SamplerConfig kc;
          kc.algorithm = Algorithm::KMC_Finite;
          kc.hamiltonian.eps_min = kc.hamiltonian.eps_max = eps;
          kc.hamiltonian.L_min = kc.hamiltonian.L_max = config.L;
          kc.n_basis = n;
          kc.lambda = config.lambda;
          if (config.sigma > 0.0) {
            kc.sigma = config.sigma;
          } else {
            kc.sigma_mode = BandwidthMode::Median;
            kc.sigma_scale = config.sigma_scale;
          }
          kc.bootstrap_until = n;
          kc.T = n + config.T;
          kc.burn_in = n + config.burn_in;
          kc.seed = root.fork(5000 + 100 * s + ni).next_u64();
          kc.init = init;
          {
            const ChainResult chain = run_kmc_finite(target, kc);
            const Eigen::MatrixXd post = chain.samples.bottomRows(kc.T - kc.burn_in);
            rows[slot++] = {"kmc_finite", n, static_cast<int>(s),
                            acceptance_rate(chain.accepted, kc.burn_in), mean_norm(post),
                            min_ess(post).min_ess, eps};
          }
          if (config.include_lite) {
            SamplerConfig lc = kc;
            lc.algorithm = Algorithm::KMC_Lite;
            lc.seed = root.fork(6000 + 100 * s + ni).next_u64();
            const ChainResult chain = run_kmc_lite(target, lc);
            const Eigen::MatrixXd post = chain.samples.bottomRows(lc.T - lc.burn_in);
            rows[slot++] = {"kmc_lite", n, static_cast<int>(s),
                            acceptance_rate(chain.accepted, lc.burn_in), mean_norm(post),
                            min_ess(post).min_ess, eps};
          }
        }
      },
      config.threads);
  return rows;
}

// Mean of a row field over seeds for one (sampler, n) cell.
inline double banana_cell_mean(const std::vector<BananaRow>& rows, const std::string& sampler,
                               int n, double BananaRow::*field) {
  double total = 0.0;
  int count = 0;
  for (const auto& row : rows)
    if (row.sampler == sampler && row.n == n) {
      total += row.*field;
      ++count;
    }
  require_input(count > 0, "banana_cell_mean: empty cell");
  return total / count;
}

inline double banana_cell_se(const std::vector<BananaRow>& rows, const std::string& sampler,
                             int n, double BananaRow::*field) {
  std::vector<double> vals;
  for (const auto& row : rows)
    if (row.sampler == sampler && row.n == n) vals.push_back(row.*field);
  require_input(vals.size() >= 2, "banana_cell_se: need at least two rows");
  const double mean = std::accumulate(vals.begin(), vals.end(), 0.0) / vals.size();
  double var = 0.0;
  for (const double v : vals) var += (v - mean) * (v - mean);
  var /= vals.size() - 1;
  return std::sqrt(var / vals.size());
}

// ---------------------------------------------------------------------------
// ABC study: pseudo-marginal KMC lite vs RW on the skew-normal posterior,
// plus the log-normal counterexample table.
// ---------------------------------------------------------------------------

struct AbcFixture {
  Eigen::VectorXd theta_true;
  Eigen::VectorXd alpha;
  double epsilon = 0.55;
  int n_lik = 10;
  int n_batch = 10;
  Eigen::VectorXd y_obs_summary;
  std::uint64_t seed = 0;  // seed the observed draws came from
};

inline AbcFixture load_abc_fixture(const std::string& path) {
  std::ifstream in(path);
  require_input(in.good(), "load_abc_fixture: cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw InputError("load_abc_fixture: " + path + ": " + e.what());
  }
  AbcFixture fx;
  fx.theta_true = vec_from_json(j.at("theta_true"));
  fx.alpha = vec_from_json(j.at("alpha"));
  fx.epsilon = j.at("epsilon");
  fx.n_lik = j.at("n_lik");
  fx.n_batch = j.at("n_batch");
  fx.y_obs_summary = vec_from_json(j.at("y_obs_summary"));
  fx.seed = j.at("seed");
  return fx;
}

struct LognormalFixture {
  double mu0 = 0.0;
  double tau0 = 0.01;
  double tau = 1.0;
  double mu_true = 2.0;
  double epsilon = 0.1;
  Eigen::VectorXd data;
  std::uint64_t seed = 0;
};

inline LognormalFixture load_lognormal_fixture(const std::string& path) {
  std::ifstream in(path);
  require_input(in.good(), "load_lognormal_fixture: cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw InputError("load_lognormal_fixture: " + path + ": " + e.what());
  }
  LognormalFixture fx;
  fx.mu0 = j.at("mu0");
  fx.tau0 = j.at("tau0");
  fx.tau = j.at("tau");
  fx.mu_true = j.at("mu_true");
  fx.epsilon = j.at("epsilon");
  fx.data = vec_from_json(j.at("data"));
  fx.seed = j.at("seed");
  return fx;
}

struct AbcStudyConfig {
  std::string fixture_path;
  std::string lognormal_path;
  long long T = 5200;
  long long burn_in = 200;
  int n_lite = 500;
  double eps_min = 0.01, eps_max = 0.1;
  int L = 50;
  double lambda = 1e-2;
  double sigma = 0.0;  // <= 0 selects the median heuristic
  int max_lag = 100;
  std::uint64_t seed = 1;
};

struct AbcStudyResult {
  ChainResult kmc;
  ChainResult rw;
  Eigen::VectorXd acf_kmc;
  Eigen::VectorXd acf_rw;
  double mmd_kmc_rw = 0.0;
  double mmd_kmc_shift = 0.0;
  double mmd_rw_shift = 0.0;
  bool no_extra_bias = false;
  double true_mean = 0.0;
  double true_precision = 0.0;
  double synth_mean = 0.0;
  Eigen::VectorXd grid;
  Eigen::VectorXd synth_mass;
};

inline Eigen::MatrixXd thin_chain(const Eigen::MatrixXd& X, Eigen::Index target_rows) {
  const Eigen::Index stride = std::max<Eigen::Index>(1, X.rows() / target_rows);
  Eigen::MatrixXd out((X.rows() + stride - 1) / stride, X.cols());
  Eigen::Index k = 0;
  for (Eigen::Index i = 0; i < X.rows(); i += stride) out.row(k++) = X.row(i);
  return out.topRows(k);
}

inline AbcStudyResult abc_study(const AbcStudyConfig& config) {
  const AbcFixture fx = load_abc_fixture(config.fixture_path);
  const LognormalFixture lfx = load_lognormal_fixture(config.lognormal_path);
  const int d = static_cast<int>(fx.theta_true.size());

  ABCParams params;
  params.theta_dim = d;
  params.epsilon = fx.epsilon;
  params.n_lik = fx.n_lik;
  params.n_batch = fx.n_batch;
  params.alpha = fx.alpha;
  const Target target = make_abc_target(params, fx.y_obs_summary);

  AbcStudyResult result;
  const Eigen::VectorXd init = fx.y_obs_summary;  // start at the observed summary

  {
    SamplerConfig kc;
    kc.algorithm = Algorithm::KMC_Lite;
    kc.hamiltonian.eps_min = config.eps_min;
    kc.hamiltonian.eps_max = config.eps_max;
    kc.hamiltonian.L_min = kc.hamiltonian.L_max = config.L;
    kc.n_basis = config.n_lite;
    kc.lambda = config.lambda;
    if (config.sigma > 0.0) {
      kc.sigma = config.sigma;
    } else {
      kc.sigma_mode = BandwidthMode::Median;
    }
    kc.T = config.T;
    kc.burn_in = config.burn_in;
    kc.seed = config.seed;
    kc.init = init;
    result.kmc = run_kmc_lite(target, kc);
  }
  {
    RwOptions opts;
    opts.init = init;
    opts.burn_in = config.burn_in;
    opts.initial_scale = 0.5;
    result.rw = run_rw(target, config.T, 0.234, config.seed ^ 0xABCDEFULL, opts);
  }

  const Eigen::MatrixXd kmc_post = result.kmc.samples.bottomRows(config.T - config.burn_in);
  const Eigen::MatrixXd rw_post = result.rw.samples.bottomRows(config.T - config.burn_in);
  result.acf_kmc = autocorrelation(kmc_post.col(0), config.max_lag);
  result.acf_rw = autocorrelation(rw_post.col(0), config.max_lag);

  const Eigen::MatrixXd a = thin_chain(kmc_post.leftCols(1), 1500);
  const Eigen::MatrixXd b = thin_chain(rw_post.leftCols(1), 1500);
  Eigen::MatrixXd b_shift = b;
  b_shift.array() += 0.5;
  Eigen::MatrixXd a_shift = a;
  a_shift.array() += 0.5;
  result.mmd_kmc_rw = mmd_poly3(a, b);
  result.mmd_kmc_shift = mmd_poly3(a, b_shift);
  result.mmd_rw_shift = mmd_poly3(b, a_shift);
  result.no_extra_bias = result.mmd_kmc_rw < std::min(result.mmd_kmc_shift, result.mmd_rw_shift);

  // log-normal counterexample table
  const auto [tm, tp] = lognormal_true_posterior(lfx.data, lfx.mu0, lfx.tau0, lfx.tau);
  result.true_mean = tm;
  result.true_precision = tp;
  const double sd = 1.0 / std::sqrt(tp);
  const int g = 1601;
  result.grid.resize(g);
  const double lo = tm - 20.0 * sd, hi = tm + 60.0 * sd;
  for (int i = 0; i < g; ++i) result.grid[i] = lo + (hi - lo) * i / (g - 1);
  result.synth_mass = synthetic_gaussian_posterior(lfx.data, result.grid, lfx.mu0, lfx.tau0,
                                                   lfx.tau, lfx.epsilon);
  result.synth_mean = result.grid.dot(result.synth_mass);
  return result;
}

// ---------------------------------------------------------------------------
// Fit experiment behind `fit`: optional cross-validation, fit, objective and
// an optional gradient-MSE report against the standard normal score.
// ---------------------------------------------------------------------------

struct FitOptions {
  bool lite = true;
  int m = 300;
  double sigma = 0.0;       // > 0 fixed; 0 with cv=false: median heuristic
  double lambda = 1e-2;
  bool cv = false;          // cross-validate (sigma, lambda) on the grids
  std::vector<double> sigma_grid;
  std::vector<double> lambda_grid;
  int folds = 5;
  std::uint64_t seed = 1;
  bool reference_std_gaussian = false;  // report gradient MSE vs the N(0,1) score
};

struct FitOutcome {
  double sigma = 0.0;
  double lambda = 0.0;
  bool cv_used = false;
  Eigen::MatrixXd cv_scores;
  double objective = 0.0;
  double gradient_mse = std::numeric_limits<double>::quiet_NaN();
  std::optional<LiteModel> lite;
  std::optional<FiniteModel> finite;
};

inline FitOutcome fit_experiment(const Eigen::MatrixXd& data, const FitOptions& opts) {
  require_input(data.rows() >= 2, "fit: need at least two points");
  FitOutcome out;
  out.sigma = opts.sigma > 0.0 ? opts.sigma : median_heuristic_sigma(data);
  out.lambda = opts.lambda;

  if (opts.cv) {
    require_input(!opts.sigma_grid.empty() && !opts.lambda_grid.empty(),
                  "fit: cv requested with empty grids");
    const CvEstimator est = opts.lite ? CvEstimator::lite() : CvEstimator::finite(opts.m);
    const CVResult cv =
        cross_validate(data, opts.sigma_grid, opts.lambda_grid, opts.folds, est, opts.seed);
    out.sigma = cv.sigma;
    out.lambda = cv.lambda;
    out.cv_scores = cv.fold_scores;
    out.cv_used = true;
  }

  if (opts.lite) {
    out.lite = fit_lite(data, out.sigma, out.lambda);
    out.objective = lite_objective(*out.lite, data);
  } else {
    const FeatureBasis basis =
        sample_basis(KernelSpec{KernelFamily::Gaussian, out.sigma, 1.0}, opts.m,
                     static_cast<int>(data.cols()), opts.seed ^ 0xF17Bu);
    out.finite = fit_finite_batch(data, basis, out.lambda);
    out.objective = finite_objective(*out.finite, data);
  }

  if (opts.reference_std_gaussian) {
    const int d = static_cast<int>(data.cols());
    double mse = 0.0;
    int count = 0;
    if (d == 1) {
      for (double x = -3.0; x <= 3.0 + 1e-9; x += 0.1) {
        Eigen::VectorXd v(1);
        v << x;
        const Eigen::VectorXd g =
            opts.lite ? lite_grad(*out.lite, v) : finite_grad(*out.finite, v);
        mse += (g[0] + x) * (g[0] + x);
        ++count;
      }
    } else {
      Rng rng(opts.seed ^ 0x9EFu);
      for (int k = 0; k < 200; ++k) {
        const Eigen::VectorXd v = rng.normal_vec(d);
        const Eigen::VectorXd g =
            opts.lite ? lite_grad(*out.lite, v) : finite_grad(*out.finite, v);
        mse += (g + v).squaredNorm() / d;
        ++count;
      }
    }
    out.gradient_mse = mse / count;
  }
  return out;
}

}  // namespace kmc
