#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include <Eigen/Core>

#include "kmc/diagnostics.hpp"
#include "kmc/dynamics.hpp"
#include "kmc/errors.hpp"
#include "kmc/rng.hpp"
#include "kmc/score_matching.hpp"
#include "kmc/targets.hpp"

namespace kmc {

// stored_log_target is exactly the value computed when position was last
// accepted; for noisy targets it is recycled until the next acceptance.
struct ChainState {
  Eigen::VectorXd position;
  double stored_log_target = 0.0;
  long long iteration = 0;
};

// a_t = min(1, scale (t+1)^-exponent); exponent <= 1 keeps sum a_t divergent.
// freeze_after >= 0 forces a_t = 0 from that iteration on.
struct AdaptationSchedule {
  double exponent = 0.5;
  double scale = 1.0;
  long long freeze_after = -1;

  void validate() const {
    require_input(exponent > 0.0 && exponent <= 1.0,
                  "AdaptationSchedule: exponent must lie in (0, 1]");
    require_input(scale > 0.0 && scale <= 1.0,
                  "AdaptationSchedule: scale must lie in (0, 1]");
  }

  double a(long long t) const {
    if (freeze_after >= 0 && t >= freeze_after) return 0.0;
    return std::min(1.0, scale * std::pow(static_cast<double>(t + 1), -exponent));
  }
};

inline bool should_adapt(const AdaptationSchedule& schedule, long long t, Rng& rng) {
  schedule.validate();
  require_input(t >= 0, "should_adapt: t must be nonnegative");
  return rng.uniform01() < schedule.a(t);
}

struct ChainResult {
  Eigen::MatrixXd samples;          // T x d, state after each iteration
  std::vector<char> accepted;       // T
  std::vector<char> adapted;        // T
  std::vector<char> flagged;        // refit failures, diverged or failed proposals
  Eigen::VectorXd log_targets;      // recycled log target value after each iteration
  Eigen::MatrixXd proposal_meta;    // T x 2: (eps, L) or (step scale, 0)
};

enum class Algorithm { RW, HMC, KMC_Lite, KMC_Finite };

enum class BandwidthMode { Fixed, Median, CV };

struct SamplerConfig {
  Algorithm algorithm = Algorithm::KMC_Finite;
  HamiltonianParams hamiltonian;
  int n_basis = 500;  // lite sub-sample size n or finite feature count m
  double lambda = 1e-3;
  double sigma = 1.0;
  BandwidthMode sigma_mode = BandwidthMode::Fixed;
  double sigma_scale = 1.0;  // multiplier on the median heuristic
  bool lambda_cv = false;
  std::vector<double> sigma_grid{0.5, 2.0, 8.0, 32.0};
  std::vector<double> lambda_grid{1e-3, 1e-1};
  int cv_folds = 5;
  KernelFamily kernel_family = KernelFamily::Gaussian;
  double rq_alpha = 1.0;
  AdaptationSchedule schedule;
  std::uint64_t seed = 0;
  long long T = 1000;
  long long burn_in = 100;
  // Warm-up segment: proposals stay single-step Gaussian drifts and the
  // surrogate is not built until this iteration, so the estimator trains on a
  // history that already covers the support.
  long long bootstrap_until = 0;
  Eigen::VectorXd init;  // empty means zero vector
  bool use_lowrank = false;
  double lowrank_tol = 1e-8;
  int lowrank_max_iters = 400;
  double rw_target_accept = 0.234;

  void validate() const {
    require_input(T > 0, "SamplerConfig: T must be positive");
    require_input(burn_in >= 0 && burn_in < T, "SamplerConfig: need 0 <= burn_in < T");
    require_input(n_basis >= 1, "SamplerConfig: n_basis must be at least 1");
    require_input(lambda > 0.0 && sigma > 0.0,
                  "SamplerConfig: lambda and sigma must be positive");
    hamiltonian.validate();
    schedule.validate();
  }
};

struct ProposalOutcome {
  Eigen::VectorXd q_star;
  double extra_log_ratio = 0.0;  // kinetic-energy terms for HMC-type proposals
  double eps = 0.0;
  double steps = 0.0;
  bool failed = false;   // forces rejection, flagged
  bool adapted = false;
  bool flagged = false;
};

using ProposalFn = std::function<ProposalOutcome(const ChainState&, Rng&)>;
using PostStepFn = std::function<void(long long, bool, double)>;  // (t, accepted, accept prob)

// Generic Metropolis-Hastings with pseudo-marginal estimate recycling: the
// denominator reuses stored_log_target until the next acceptance, and a
// rejected proposal's estimate is discarded.
inline ChainResult run_mh(const Target& target, const ProposalFn& propose, long long T,
                          std::uint64_t seed, const Eigen::VectorXd& init,
                          const PostStepFn& post_step = nullptr) {
  target.validate();
  require_input(T > 0, "run_mh: T must be positive");
  require_input(init.size() == target.dim, "run_mh: init dimension mismatch");

  Rng rng(seed);
  ChainState state;
  state.position = init;
  state.stored_log_target = target.log_target(init, rng);
  require_numeric(!std::isnan(state.stored_log_target), "run_mh: NaN initial log target");

  ChainResult result;
  result.samples.resize(T, target.dim);
  result.accepted.assign(T, 0);
  result.adapted.assign(T, 0);
  result.flagged.assign(T, 0);
  result.log_targets.resize(T);
  result.proposal_meta = Eigen::MatrixXd::Zero(T, 2);

  for (long long t = 0; t < T; ++t) {
    state.iteration = t;
    bool accepted = false;
    double prob = 0.0;

    ProposalOutcome out;
    bool proposal_ok = true;
    try {
      out = propose(state, rng);
    } catch (const NumericError&) {
      proposal_ok = false;
    }

    if (proposal_ok && !out.failed) {
      const double log_star = target.log_target(out.q_star, rng);
      require_numeric(!std::isnan(log_star), "run_mh: NaN log target at proposal");
      const double log_ratio = log_star - state.stored_log_target + out.extra_log_ratio;
      prob = std::isnan(log_ratio) ? 0.0 : std::min(1.0, std::exp(log_ratio));
      if (rng.uniform01() < prob) {
        accepted = true;
        state.position = out.q_star;
        state.stored_log_target = log_star;  // recycle from here on
      }
    } else {
      result.flagged[t] = 1;
    }

    result.samples.row(t) = state.position;
    result.accepted[t] = accepted ? 1 : 0;
    result.adapted[t] = out.adapted ? 1 : 0;
    if (out.flagged) result.flagged[t] = 1;
    result.log_targets[t] = state.stored_log_target;
    result.proposal_meta(t, 0) = out.eps;
    result.proposal_meta(t, 1) = out.steps;
    if (post_step) post_step(t, accepted, prob);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Random walk baseline with burn-in-only stochastic approximation of the step
// scale toward a target acceptance rate.
// ---------------------------------------------------------------------------

struct RwOptions {
  Eigen::VectorXd init;        // empty means zero vector
  long long burn_in = 0;       // adaptation window; 0 disables adaptation
  double initial_scale = 1.0;
};

inline ChainResult run_rw(const Target& target, long long T, double target_accept,
                          std::uint64_t seed, const RwOptions& opts = {}) {
  target.validate();
  require_input(target_accept > 0.0 && target_accept < 1.0,
                "run_rw: target_accept must lie in (0, 1)");
  require_input(opts.burn_in >= 0 && opts.burn_in < T, "run_rw: need 0 <= burn_in < T");
  const Eigen::VectorXd init =
      opts.init.size() > 0 ? opts.init : Eigen::VectorXd::Zero(target.dim);

  double log_scale = std::log(opts.initial_scale);
  const long long burn_in = opts.burn_in;

  const ProposalFn propose = [&, d = target.dim](const ChainState& state,
                                                 Rng& rng) -> ProposalOutcome {
    ProposalOutcome out;
    const double scale = std::exp(log_scale);
    out.q_star = state.position + scale * rng.normal_vec(d);
    out.eps = scale;
    out.steps = 0.0;
    out.adapted = state.iteration < burn_in;
    return out;
  };
  const PostStepFn adapt = [&](long long t, bool, double prob) {
    if (t < burn_in)
      log_scale += std::pow(static_cast<double>(t + 1), -0.6) * (prob - target_accept);
  };
  return run_mh(target, propose, T, seed, init, adapt);
}

// ---------------------------------------------------------------------------
// Exact-gradient HMC baseline.
// ---------------------------------------------------------------------------

inline ChainResult run_hmc(const Target& target, const SamplerConfig& config) {
  target.validate();
  config.validate();
  require_input(static_cast<bool>(target.gradient), "run_hmc: target exposes no gradient");
  const Eigen::VectorXd init =
      config.init.size() > 0 ? config.init : Eigen::VectorXd::Zero(target.dim);

  const ProposalFn propose = [&](const ChainState& state, Rng& rng) -> ProposalOutcome {
    const Proposal prop =
        kernel_induced_proposal(target.gradient, state.position, config.hamiltonian, rng);
    ProposalOutcome out;
    out.q_star = prop.q_star;
    out.extra_log_ratio =
        0.5 * (prop.p_start.squaredNorm() - prop.p_star.squaredNorm());
    out.eps = prop.eps;
    out.steps = prop.L;
    out.failed = prop.diverged;
    return out;
  };
  return run_mh(target, propose, config.T, config.seed, init);
}

// Robbins-Monro tuning of the HMC step size toward a target acceptance rate
// (the 80% rule of the banana protocol). Returns exp(mean log eps) over the
// second half of the tuning run.
inline double tune_hmc_step(const Target& target, int L, double eps0, double eps_lo,
                            double eps_hi, long long T_tune, double target_accept,
                            std::uint64_t seed, const Eigen::VectorXd& init) {
  target.validate();
  require_input(static_cast<bool>(target.gradient), "tune_hmc_step: target exposes no gradient");
  require_input(T_tune >= 10, "tune_hmc_step: need at least 10 tuning iterations");
  require_input(eps_lo > 0.0 && eps0 >= eps_lo && eps0 <= eps_hi,
                "tune_hmc_step: need 0 < eps_lo <= eps0 <= eps_hi");

  double log_eps = std::log(eps0);
  double log_eps_sum = 0.0;
  long long tail = 0;

  const ProposalFn propose = [&](const ChainState& state, Rng& rng) -> ProposalOutcome {
    HamiltonianParams params;
    params.eps_min = params.eps_max = std::exp(log_eps);
    params.L_min = params.L_max = L;
    const Proposal prop =
        kernel_induced_proposal(target.gradient, state.position, params, rng);
    ProposalOutcome out;
    out.q_star = prop.q_star;
    out.extra_log_ratio = 0.5 * (prop.p_start.squaredNorm() - prop.p_star.squaredNorm());
    out.eps = prop.eps;
    out.steps = prop.L;
    out.failed = prop.diverged;
    return out;
  };
  const PostStepFn adapt = [&](long long t, bool, double prob) {
    log_eps += std::pow(static_cast<double>(t + 1), -0.6) * (prob - target_accept);
    log_eps = std::clamp(log_eps, std::log(eps_lo), std::log(eps_hi));
    if (t >= T_tune / 2) {
      log_eps_sum += log_eps;
      ++tail;
    }
  };
  run_mh(target, propose, T_tune, seed, init, adapt);
  return std::exp(log_eps_sum / static_cast<double>(tail));
}

// ---------------------------------------------------------------------------
// Kernel Hamiltonian Monte Carlo.
// ---------------------------------------------------------------------------

namespace detail {

// Median of pairwise squared distances over a capped, stride-subsampled set.
inline double median_sq_dist(const std::vector<Eigen::VectorXd>& points) {
  const std::size_t n = points.size();
  if (n < 2) return 1.0;
  const std::size_t cap = 256;
  const std::size_t stride = std::max<std::size_t>(1, n / cap);
  std::vector<double> d2;
  for (std::size_t i = 0; i < n; i += stride)
    for (std::size_t j = i + stride; j < n; j += stride)
      d2.push_back((points[i] - points[j]).squaredNorm());
  if (d2.empty()) return 1.0;
  std::nth_element(d2.begin(), d2.begin() + d2.size() / 2, d2.end());
  const double med = d2[d2.size() / 2];
  return med > 0.0 ? med : 1.0;
}

inline Eigen::MatrixXd rows_from(const std::vector<Eigen::VectorXd>& points,
                                 const std::vector<std::size_t>& idx) {
  Eigen::MatrixXd X(idx.size(), points.empty() ? 0 : points[0].size());
  for (std::size_t i = 0; i < idx.size(); ++i) X.row(i) = points[idx[i]];
  return X;
}

// Uniform sub-sample of {0..n-1} of given size, without replacement.
inline std::vector<std::size_t> draw_subsample(std::size_t n, std::size_t size, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = 0; i < size; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.uniform_int(0, n - 1 - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(size);
  return idx;
}

inline Eigen::MatrixXd stack_rows(const std::vector<Eigen::VectorXd>& points,
                                  std::size_t from, std::size_t to) {
  Eigen::MatrixXd X(to - from, points.empty() ? 0 : points[0].size());
  for (std::size_t i = from; i < to; ++i) X.row(i - from) = points[i];
  return X;
}

}  // namespace detail

// Minimum count of distinct visited points before the first surrogate fit;
// fitting on a history of rejection duplicates yields degenerate bandwidths
// and runaway coefficients.
inline int min_distinct_history(int d) { return std::max(16, 2 * d); }

// Pre-model proposals: a single leapfrog step under the zero surrogate, i.e.
// a Gaussian drift of scale eps. Full-length flights only start once a
// surrogate exists; with HMC-scale eps * L the bootstrap random walk would
// overshoot any target of moderate scale.
inline Proposal bootstrap_proposal(const Eigen::VectorXd& q, const HamiltonianParams& params,
                                   Rng& rng) {
  HamiltonianParams drift = params;
  drift.L_min = drift.L_max = 1;
  const auto zero = [](const Eigen::VectorXd& x) {
    return Eigen::VectorXd::Zero(x.size()).eval();
  };
  return kernel_induced_proposal(zero, q, drift, rng);
}

// Scale state of the warm-up random walk that collects burn-in samples while
// bootstrap_until is active; adapted toward the usual 23.4 percent.
struct WarmupWalk {
  double log_scale = 0.0;

  ProposalOutcome propose(const ChainState& state, Rng& rng) const {
    ProposalOutcome out;
    const double scale = std::exp(log_scale);
    out.q_star = state.position + scale * rng.normal_vec(state.position.size());
    out.eps = scale;
    out.steps = 0.0;
    return out;
  }

  void adapt(long long t, double accept_prob_value, double target) {
    log_scale += std::pow(static_cast<double>(t + 1), -0.6) * (accept_prob_value - target);
  }
};

// KMC lite (Algorithm 1, lite branch): with probability a_t re-fit the dual
// estimator on a fresh uniform sub-sample of the chain history, then propose
// along the surrogate-induced Hamiltonian flow. Before the first fit the
// zero surrogate makes proposals a Gaussian-drift random walk.
inline ChainResult run_kmc_lite(const Target& target, const SamplerConfig& config,
                                LiteModel* final_model = nullptr) {
  target.validate();
  config.validate();
  require_input(config.algorithm == Algorithm::KMC_Lite, "run_kmc_lite: wrong algorithm tag");
  const Eigen::VectorXd init =
      config.init.size() > 0 ? config.init : Eigen::VectorXd::Zero(target.dim);

  std::vector<Eigen::VectorXd> history;
  std::vector<Eigen::VectorXd> distinct;
  history.reserve(config.T);
  LiteModel model;  // empty alpha: zero surrogate
  std::optional<double> cv_sigma, cv_lambda;
  WarmupWalk warmup;
  const std::size_t min_distinct = min_distinct_history(target.dim);

  const auto grad_fn = [&model, d = target.dim](const Eigen::VectorXd& q) -> Eigen::VectorXd {
    if (model.alpha.size() == 0) return Eigen::VectorXd::Zero(d);
    return lite_grad(model, q);
  };

  const ProposalFn propose = [&](const ChainState& state, Rng& rng) -> ProposalOutcome {
    ProposalOutcome out;
    history.push_back(state.position);
    if (distinct.empty() || (state.position - distinct.back()).norm() > 0.0)
      distinct.push_back(state.position);

    const std::size_t sub_size =
        std::min<std::size_t>(config.n_basis, static_cast<std::size_t>(state.iteration));
    if (should_adapt(config.schedule, state.iteration, rng) && sub_size >= 1 &&
        distinct.size() >= min_distinct && state.iteration >= config.bootstrap_until) {
      const Eigen::MatrixXd Z =
          detail::rows_from(history, detail::draw_subsample(history.size(), sub_size, rng));

      double sigma = config.sigma;
      double lambda = config.lambda;
      if (config.sigma_mode == BandwidthMode::Median) {
        sigma = config.sigma_scale * detail::median_sq_dist(distinct);
      } else if (config.sigma_mode == BandwidthMode::CV || config.lambda_cv) {
        if (!cv_sigma) {  // resolved once, at the first adaptation event
          const Eigen::Index cap =
              std::min<Eigen::Index>(static_cast<Eigen::Index>(distinct.size()), 512);
          std::vector<std::size_t> head(cap);
          std::iota(head.begin(), head.end(), std::size_t{0});
          const CVResult cv = cross_validate(detail::rows_from(distinct, head),
                                             config.sigma_grid, config.lambda_grid,
                                             config.cv_folds, CvEstimator::lite(),
                                             config.seed ^ 0xC101ULL);
          cv_sigma = cv.sigma;
          cv_lambda = cv.lambda;
        }
        if (config.sigma_mode == BandwidthMode::CV) sigma = *cv_sigma;
        if (config.lambda_cv) lambda = *cv_lambda;
      }

      try {
        if (config.use_lowrank) {
          std::optional<Eigen::VectorXd> warm;
          if (model.alpha.size() == Z.rows()) warm = model.alpha;
          LiteFitResult fit = fit_lite_lowrank(Z, sigma, lambda, config.lowrank_tol,
                                               config.lowrank_max_iters, warm);
          model = std::move(fit.model);
          if (!fit.converged) out.flagged = true;
        } else {
          model = fit_lite(Z, sigma, lambda);
        }
        out.adapted = true;
      } catch (const NumericError&) {
        out.flagged = true;  // keep previous model
      }
    }

    if (state.iteration < config.bootstrap_until) {
      ProposalOutcome walk = warmup.propose(state, rng);
      walk.adapted = out.adapted;
      walk.flagged = out.flagged;
      return walk;
    }
    const Proposal prop =
        model.alpha.size() == 0
            ? bootstrap_proposal(state.position, config.hamiltonian, rng)
            : kernel_induced_proposal(grad_fn, state.position, config.hamiltonian, rng);
    out.q_star = prop.q_star;
    out.extra_log_ratio = 0.5 * (prop.p_start.squaredNorm() - prop.p_star.squaredNorm());
    out.eps = prop.eps;
    out.steps = prop.L;
    out.failed = prop.diverged;
    return out;
  };

  const PostStepFn post = [&](long long t, bool, double prob) {
    if (t < config.bootstrap_until)
      warmup.adapt(t, prob, config.rw_target_accept);
  };
  ChainResult result = run_mh(target, propose, config.T, config.seed, init, post);
  if (final_model) *final_model = model;
  return result;
}

// KMC finite (Algorithm 1, finite branch): with probability a_t absorb all
// not-yet-absorbed history into the running sums (rank-d per point) and
// re-solve theta, so the estimator always reflects the full chain history.
// In median-bandwidth mode the feature basis is rebuilt (and the history
// re-absorbed) when the median heuristic drifts past a factor of 3 from the
// bandwidth the basis was sampled with.
inline ChainResult run_kmc_finite(const Target& target, const SamplerConfig& config,
                                  FiniteModel* final_model = nullptr) {
  target.validate();
  config.validate();
  require_input(config.algorithm == Algorithm::KMC_Finite,
                "run_kmc_finite: wrong algorithm tag");
  const Eigen::VectorXd init =
      config.init.size() > 0 ? config.init : Eigen::VectorXd::Zero(target.dim);

  std::vector<Eigen::VectorXd> history;
  std::vector<Eigen::VectorXd> distinct;
  history.reserve(config.T);
  std::optional<FiniteModel> model;
  std::size_t absorbed = 0;
  WarmupWalk warmup;
  const std::size_t min_distinct = min_distinct_history(target.dim);

  const auto grad_fn = [&model, d = target.dim](const Eigen::VectorXd& q) -> Eigen::VectorXd {
    if (!model) return Eigen::VectorXd::Zero(d);
    return finite_grad(*model, q);
  };

  const auto make_basis = [&](double sigma) {
    const KernelSpec spec{config.kernel_family, sigma, config.rq_alpha};
    return sample_basis(spec, config.n_basis, target.dim, config.seed ^ 0xBA515ULL);
  };

  const ProposalFn propose = [&](const ChainState& state, Rng& rng) -> ProposalOutcome {
    ProposalOutcome out;
    history.push_back(state.position);
    if (distinct.empty() || (state.position - distinct.back()).norm() > 0.0)
      distinct.push_back(state.position);

    if (should_adapt(config.schedule, state.iteration, rng) && state.iteration >= 1 &&
        distinct.size() >= min_distinct && state.iteration >= config.bootstrap_until) {
      if (!model) {
        double sigma = config.sigma;
        if (config.sigma_mode == BandwidthMode::Median) {
          sigma = config.sigma_scale * detail::median_sq_dist(distinct);
        } else if (config.sigma_mode == BandwidthMode::CV) {
          const Eigen::Index cap =
              std::min<Eigen::Index>(static_cast<Eigen::Index>(distinct.size()), 512);
          std::vector<std::size_t> head(cap);
          std::iota(head.begin(), head.end(), std::size_t{0});
          const CVResult cv = cross_validate(
              detail::rows_from(distinct, head), config.sigma_grid, config.lambda_grid,
              config.cv_folds, CvEstimator::finite(std::min(config.n_basis, 256)),
              config.seed ^ 0xC102ULL);
          sigma = cv.sigma;
        }
        model = make_finite_model(make_basis(sigma), config.lambda);
      } else if (config.sigma_mode == BandwidthMode::Median) {
        const double fresh = config.sigma_scale * detail::median_sq_dist(distinct);
        const double ratio = fresh / model->basis.spec.sigma;
        if (ratio > 3.0 || ratio < 1.0 / 3.0) {
          model = make_finite_model(make_basis(fresh), config.lambda);
          absorbed = 0;  // re-absorb the full history under the new basis
        }
      }
      if (absorbed < history.size()) {
        const bool was_flagged = model->rebuild_flagged;
        finite_absorb_block(*model, detail::stack_rows(history, absorbed, history.size()));
        absorbed = history.size();
        finite_refresh(*model);
        if (model->rebuild_flagged && !was_flagged) out.flagged = true;
      }
      out.adapted = true;
    }

    if (state.iteration < config.bootstrap_until) {
      ProposalOutcome walk = warmup.propose(state, rng);
      walk.adapted = out.adapted;
      walk.flagged = out.flagged;
      return walk;
    }
    const Proposal prop =
        model ? kernel_induced_proposal(grad_fn, state.position, config.hamiltonian, rng)
              : bootstrap_proposal(state.position, config.hamiltonian, rng);
    out.q_star = prop.q_star;
    out.extra_log_ratio = 0.5 * (prop.p_start.squaredNorm() - prop.p_star.squaredNorm());
    out.eps = prop.eps;
    out.steps = prop.L;
    out.failed = prop.diverged;
    return out;
  };

  const PostStepFn post = [&](long long t, bool, double prob) {
    if (t < config.bootstrap_until)
      warmup.adapt(t, prob, config.rw_target_accept);
  };
  ChainResult result = run_mh(target, propose, config.T, config.seed, init, post);
  if (final_model && model) *final_model = *model;
  return result;
}

}  // namespace kmc
