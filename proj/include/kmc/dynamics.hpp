#pragma once

#include <cmath>
#include <functional>
#include <limits>

#include <Eigen/Core>

#include "kmc/errors.hpp"
#include "kmc/rng.hpp"

namespace kmc {

struct HamiltonianParams {
  double eps_min = 0.01;
  double eps_max = 0.1;
  int L_min = 1;
  int L_max = 10;

  void validate() const {
    require_input(eps_min > 0.0 && eps_max >= eps_min,
                  "HamiltonianParams: need 0 < eps_min <= eps_max");
    require_input(L_min >= 1 && L_max >= L_min,
                  "HamiltonianParams: need 1 <= L_min <= L_max");
  }
};

// Non-finite state or a kinetic-energy excursion beyond this marks a
// trajectory diverged.
inline constexpr double kDivergenceThreshold = 1e3;

struct Trajectory {
  Eigen::MatrixXd positions;  // (L+1) x d, row 0 is the start
  Eigen::MatrixXd momenta;    // (L+1) x d, synchronized to integer steps
  double eps = 0.0;
  int L = 0;
  bool diverged = false;
  int diverged_step = -1;
};

// H(p,q) = U(q) + ||p||^2 / 2 under identity mass.
inline double hamiltonian(const std::function<double(const Eigen::VectorXd&)>& U,
                          const Eigen::VectorXd& q, const Eigen::VectorXd& p) {
  const double u = U(q);
  require_numeric(std::isfinite(u), "hamiltonian: non-finite potential");
  return u + 0.5 * p.squaredNorm();
}

inline double accept_prob(double h_start, double h_end) {
  require_numeric(!std::isnan(h_start) && !std::isnan(h_end), "accept_prob: NaN energy");
  require_numeric(std::isfinite(h_start), "accept_prob: non-finite start energy");
  if (h_end == std::numeric_limits<double>::infinity()) return 0.0;
  return std::min(1.0, std::exp(h_start - h_end));
}

// Standard leapfrog: half momentum kick, L position steps with interleaved
// full kicks, final half kick. All synchronized intermediate states are
// recorded. A non-finite state or gradient aborts with the diverged flag set
// at the offending step; remaining rows repeat the last valid state.
inline Trajectory leapfrog(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& grad_U,
                           const Eigen::VectorXd& q0, const Eigen::VectorXd& p0,
                           double eps, int L) {
  require_input(eps > 0.0, "leapfrog: eps must be positive");
  require_input(L >= 1, "leapfrog: L must be at least 1");
  const Eigen::Index d = q0.size();

  Trajectory traj;
  traj.eps = eps;
  traj.L = L;
  traj.positions.resize(L + 1, d);
  traj.momenta.resize(L + 1, d);
  traj.positions.row(0) = q0;
  traj.momenta.row(0) = p0;

  Eigen::VectorXd q = q0;
  Eigen::VectorXd g = grad_U(q0);
  if (!g.allFinite() || !p0.allFinite() || !q0.allFinite()) {
    traj.diverged = true;
    traj.diverged_step = 0;
    for (int i = 1; i <= L; ++i) {
      traj.positions.row(i) = q0;
      traj.momenta.row(i) = p0;
    }
    return traj;
  }

  Eigen::VectorXd p_half = p0 - 0.5 * eps * g;
  for (int i = 1; i <= L; ++i) {
    q += eps * p_half;
    g = grad_U(q);
    if (!q.allFinite() || !g.allFinite()) {
      traj.diverged = true;
      traj.diverged_step = i;
      for (int j = i; j <= L; ++j) {
        traj.positions.row(j) = traj.positions.row(i - 1);
        traj.momenta.row(j) = traj.momenta.row(i - 1);
      }
      return traj;
    }
    const Eigen::VectorXd p_sync = p_half - 0.5 * eps * g;
    traj.positions.row(i) = q;
    traj.momenta.row(i) = p_sync;
    if (i < L) p_half -= eps * g;
  }
  return traj;
}

struct Proposal {
  Eigen::VectorXd q_star;
  Eigen::VectorXd p_start;  // fresh momentum p'
  Eigen::VectorXd p_star;
  double eps = 0.0;
  int L = 0;
  bool diverged = false;
};

// One proposal along the surrogate-induced flow: draws p' ~ N(0,I),
// eps ~ U[eps_min, eps_max], L ~ U{L_min..L_max}, then integrates with the
// surrogate potential U_k = -f, i.e. momentum kicks use +grad f. A diverged
// trajectory returns the start point, flagged, so the caller forces rejection.
inline Proposal kernel_induced_proposal(
    const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& grad_f,
    const Eigen::VectorXd& q, const HamiltonianParams& params, Rng& rng) {
  params.validate();
  const Eigen::Index d = q.size();

  Proposal prop;
  prop.p_start = rng.normal_vec(d);
  prop.eps = rng.uniform(params.eps_min, params.eps_max);
  prop.L = static_cast<int>(rng.uniform_int(params.L_min, params.L_max));

  const auto grad_U = [&grad_f](const Eigen::VectorXd& x) -> Eigen::VectorXd {
    return -grad_f(x);
  };
  const Trajectory traj = leapfrog(grad_U, q, prop.p_start, prop.eps, prop.L);

  // Kinetic excursion along the surrogate flow as the |dH| > threshold proxy.
  const double k0 = 0.5 * prop.p_start.squaredNorm();
  bool blew_up = traj.diverged;
  if (!blew_up) {
    for (int i = 1; i <= traj.L; ++i) {
      if (0.5 * traj.momenta.row(i).squaredNorm() - k0 > kDivergenceThreshold) {
        blew_up = true;
        break;
      }
    }
  }

  if (blew_up) {
    prop.diverged = true;
    prop.q_star = q;
    prop.p_star = prop.p_start;
    return prop;
  }
  prop.q_star = traj.positions.row(traj.L);
  prop.p_star = traj.momenta.row(traj.L);
  return prop;
}

}  // namespace kmc
