#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "kmc/errors.hpp"
#include "kmc/features.hpp"
#include "kmc/kernels.hpp"
#include "kmc/rng.hpp"

namespace kmc {

// Empirical score matching objective
//   J = (1/n) sum_x sum_l [ d2f/dx_l^2 + (1/2) (df/dx_l)^2 ],
// evaluated through caller-supplied gradient and diagonal-curvature callbacks.
inline double score_objective(
    const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& grad_f,
    const std::function<double(const Eigen::VectorXd&, int)>& lap_diag_f,
    const Eigen::MatrixXd& data) {
  require_input(data.rows() >= 1, "score_objective: data must be nonempty");
  const Eigen::Index n = data.rows();
  const int d = static_cast<int>(data.cols());
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::VectorXd x = data.row(i);
    const Eigen::VectorXd g = grad_f(x);
    require_numeric(g.allFinite(), "score_objective: non-finite gradient at point " +
                                       std::to_string(i));
    double acc = 0.5 * g.squaredNorm();
    for (int l = 0; l < d; ++l) {
      const double h = lap_diag_f(x, l);
      require_numeric(std::isfinite(h), "score_objective: non-finite curvature at point " +
                                            std::to_string(i));
      acc += h;
    }
    total += acc;
  }
  return total / static_cast<double>(n);
}

// ---------------------------------------------------------------------------
// Lite estimator: f(x) = sum_i alpha_i k(z_i, x), Gaussian kernel, dual solve
//   alpha = -(sigma/2) (C + lambda I)^{-1} b.
// ---------------------------------------------------------------------------

struct LiteModel {
  Eigen::MatrixXd Z;      // n x d basis points
  Eigen::VectorXd alpha;  // n dual coefficients
  KernelSpec spec;        // Gaussian only
  double lambda = 0.0;
};

struct LiteSystem {
  Eigen::MatrixXd C;  // n x n, symmetric PSD
  Eigen::VectorXd b;  // n
};

// Assembles b and C of the dual score matching system on Z (used as both
// basis and data):
//   b = sum_l ( (2/sigma)(K s_l + D_{s_l} K 1 - 2 D_{x_l} K x_l) - K 1 )
//   C = sum_l [D_{x_l} K - K D_{x_l}] [K D_{x_l} - D_{x_l} K]
// The commutator product collapses to three Gram-sized matrix products:
//   C = G .* K^2 - W K - (W K)^T + K diag(r) K,  W = K .* G,
// with G = Z Z^T and r the row-wise squared norms, which keeps assembly at
// O(n^3 + d n^2) instead of the naive O(d n^3).
inline LiteSystem assemble_lite_system(const Eigen::MatrixXd& Z, double sigma) {
  require_input(Z.rows() >= 1, "fit_lite: need at least one point");
  require_input(sigma > 0.0, "fit_lite: sigma must be positive");
  const Eigen::Index n = Z.rows();
  const int d = static_cast<int>(Z.cols());
  const KernelSpec spec{KernelFamily::Gaussian, sigma, 1.0};

  const Eigen::MatrixXd K = kernel_matrix(spec, Z);
  const Eigen::VectorXd r = Z.rowwise().squaredNorm();
  const Eigen::VectorXd K1 = K.rowwise().sum();
  const Eigen::MatrixXd KZ = K * Z;

  LiteSystem sys;
  sys.b = (2.0 / sigma) *
              (K * r + r.cwiseProduct(K1) -
               2.0 * (Z.array() * KZ.array()).rowwise().sum().matrix()) -
          static_cast<double>(d) * K1;

  const Eigen::MatrixXd G = Z * Z.transpose();
  const Eigen::MatrixXd W = K.cwiseProduct(G);
  const Eigen::MatrixXd WK = W * K;
  Eigen::MatrixXd C = G.cwiseProduct(K * K) - WK - WK.transpose() +
                      K * r.asDiagonal() * K;
  sys.C = 0.5 * (C + C.transpose());

  require_numeric(sys.b.allFinite() && sys.C.allFinite(),
                  "fit_lite: non-finite system entries");
  return sys;
}

inline LiteModel fit_lite(const Eigen::MatrixXd& Z, double sigma, double lambda) {
  require_input(lambda > 0.0, "fit_lite: lambda must be positive");
  LiteSystem sys = assemble_lite_system(Z, sigma);
  sys.C.diagonal().array() += lambda;
  const Eigen::LDLT<Eigen::MatrixXd> solver(sys.C);
  require_numeric(solver.info() == Eigen::Success, "fit_lite: factorization failed");

  LiteModel model;
  model.Z = Z;
  model.spec = KernelSpec{KernelFamily::Gaussian, sigma, 1.0};
  model.lambda = lambda;
  model.alpha = solver.solve((-sigma / 2.0) * sys.b);
  require_numeric(model.alpha.allFinite(), "fit_lite: non-finite solution");
  return model;
}

struct LiteFitResult {
  LiteModel model;
  bool converged = false;
  int iterations = 0;
  double residual_norm = 0.0;  // absolute CG residual at exit
  Eigen::Index rank = 0;       // incomplete Cholesky rank
};

// Low-rank path: K ~ L L^T from incomplete Cholesky, conjugate gradient on
// (C + lambda I) alpha = -(sigma/2) b. Neither K nor C is ever formed densely;
// every operator application costs O(n * rank * d). An optional warm start
// seeds CG at a previous solution.
inline LiteFitResult fit_lite_lowrank(
    const Eigen::MatrixXd& Z, double sigma, double lambda, double tol, int max_iters,
    const std::optional<Eigen::VectorXd>& warm_start = std::nullopt) {
  require_input(Z.rows() >= 1, "fit_lite_lowrank: need at least one point");
  require_input(sigma > 0.0 && lambda > 0.0,
                "fit_lite_lowrank: sigma and lambda must be positive");
  require_input(tol > 0.0, "fit_lite_lowrank: tol must be positive");
  require_input(max_iters >= 0, "fit_lite_lowrank: max_iters must be nonnegative");

  const Eigen::Index n = Z.rows();
  const int d = static_cast<int>(Z.cols());
  const KernelSpec spec{KernelFamily::Gaussian, sigma, 1.0};
  const LowRankFactor low = incomplete_cholesky(spec, Z, tol);
  const Eigen::MatrixXd& L = low.L;

  const auto kmul_vec = [&](const Eigen::VectorXd& v) -> Eigen::VectorXd {
    return L * (L.transpose() * v);
  };
  const auto kmul_mat = [&](const Eigen::MatrixXd& V) -> Eigen::MatrixXd {
    return L * (L.transpose() * V);
  };

  const Eigen::VectorXd r = Z.rowwise().squaredNorm();
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(n);
  const Eigen::VectorXd K1 = kmul_vec(ones);
  const Eigen::MatrixXd KZ = kmul_mat(Z);
  const Eigen::VectorXd b =
      (2.0 / sigma) * (kmul_vec(r) + r.cwiseProduct(K1) -
                       2.0 * (Z.array() * KZ.array()).rowwise().sum().matrix()) -
      static_cast<double>(d) * K1;
  require_numeric(b.allFinite(), "fit_lite_lowrank: non-finite right-hand side");

  // (C + lambda I) v with C = sum_l A_l A_l^T, A_l v = x_l.*(Kv) - K(x_l.*v).
  const auto apply = [&](const Eigen::VectorXd& v) -> Eigen::VectorXd {
    const Eigen::VectorXd Kv = kmul_vec(v);
    const Eigen::MatrixXd Zv = Z.array().colwise() * v.array();
    const Eigen::MatrixXd KZv = kmul_mat(Zv);
    Eigen::MatrixXd Wm = (Z.array().colwise() * Kv.array()).matrix() - KZv;
    const Eigen::MatrixXd KW = kmul_mat(Wm);
    const Eigen::MatrixXd ZW = Z.cwiseProduct(Wm);
    const Eigen::VectorXd Cv =
        -((Z.array() * KW.array()).rowwise().sum().matrix() -
          kmul_vec(ZW.rowwise().sum()));
    return Cv + lambda * v;
  };

  const Eigen::VectorXd rhs = (-sigma / 2.0) * b;
  Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
  if (warm_start && warm_start->size() == n) x = *warm_start;

  Eigen::VectorXd res = rhs - apply(x);
  Eigen::VectorXd p = res;
  double rr = res.squaredNorm();
  const double stop = tol * rhs.norm();

  Eigen::VectorXd best_x = x;
  double best_res = std::sqrt(rr);
  int it = 0;
  for (; it < max_iters && std::sqrt(rr) > stop; ++it) {
    const Eigen::VectorXd Ap = apply(p);
    const double pAp = p.dot(Ap);
    if (!(pAp > 0.0) || !std::isfinite(pAp)) break;
    const double step = rr / pAp;
    x += step * p;
    res -= step * Ap;
    const double rr_new = res.squaredNorm();
    if (std::sqrt(rr_new) < best_res) {
      best_res = std::sqrt(rr_new);
      best_x = x;
    }
    p = res + (rr_new / rr) * p;
    rr = rr_new;
  }

  LiteFitResult out;
  out.model.Z = Z;
  out.model.spec = spec;
  out.model.lambda = lambda;
  out.model.alpha = best_x;
  out.converged = best_res <= stop;
  out.iterations = it;
  out.residual_norm = best_res;
  out.rank = low.rank();
  return out;
}

inline double lite_log_density(const LiteModel& model, const Eigen::VectorXd& x) {
  require_input(x.size() == model.Z.cols(), "lite_log_density: dimension mismatch");
  if (model.alpha.size() == 0) return 0.0;
  const Eigen::VectorXd r2 = (model.Z.rowwise() - x.transpose()).rowwise().squaredNorm();
  if (model.spec.family == KernelFamily::Gaussian)
    return model.alpha.dot((-r2.array() / model.spec.sigma).exp().matrix());
  return model.alpha.dot(
      (1.0 + r2.array() / (model.spec.alpha * model.spec.sigma)).pow(-model.spec.alpha).matrix());
}

// grad f(x) = sum_i alpha_i grad_x k(x, z_i); O(n d).
inline Eigen::VectorXd lite_grad(const LiteModel& model, const Eigen::VectorXd& x) {
  require_input(x.size() == model.Z.cols(), "lite_grad: dimension mismatch");
  if (model.alpha.size() == 0) return Eigen::VectorXd::Zero(x.size());
  const Eigen::VectorXd r2 = (model.Z.rowwise() - x.transpose()).rowwise().squaredNorm();
  Eigen::VectorXd km;
  if (model.spec.family == KernelFamily::Gaussian) {
    km = (-r2.array() / model.spec.sigma).exp();
  } else {
    km = (1.0 + r2.array() / (model.spec.alpha * model.spec.sigma))
             .pow(-model.spec.alpha - 1.0);
  }
  const Eigen::VectorXd w = model.alpha.cwiseProduct(km);
  return (-2.0 / model.spec.sigma) * (x * w.sum() - model.Z.transpose() * w);
}

// Gradient and diagonal curvature in one pass (Gaussian kernel):
//   d2f/dx_l^2 = sum_i alpha_i k_i (2/sigma) [ (2/sigma)(x_l - z_il)^2 - 1 ].
inline void lite_score_parts(const LiteModel& model, const Eigen::VectorXd& x,
                             Eigen::VectorXd& grad, Eigen::VectorXd& lap_diag) {
  const int d = static_cast<int>(model.Z.cols());
  require_input(x.size() == d, "lite_score_parts: dimension mismatch");
  grad.setZero(d);
  lap_diag.setZero(d);
  if (model.alpha.size() == 0) return;
  const double s = model.spec.sigma;
  const Eigen::MatrixXd diff = (-model.Z).rowwise() + x.transpose();  // x - z_i
  const Eigen::VectorXd k = (-diff.rowwise().squaredNorm().array() / s).exp();
  const Eigen::VectorXd w = model.alpha.cwiseProduct(k);
  grad = (-2.0 / s) * (diff.transpose() * w);
  const Eigen::VectorXd weighted_sq = diff.array().square().matrix().transpose() * w;
  lap_diag = (2.0 / s) * ((2.0 / s) * weighted_sq.array() - w.sum()).matrix();
}

inline double lite_lap_diag(const LiteModel& model, const Eigen::VectorXd& x, int coord) {
  require_input(coord >= 0 && coord < model.Z.cols(), "lite_lap_diag: index out of range");
  Eigen::VectorXd g, h;
  lite_score_parts(model, x, g, h);
  return h[coord];
}

inline double lite_objective(const LiteModel& model, const Eigen::MatrixXd& data) {
  require_input(data.rows() >= 1, "lite_objective: data must be nonempty");
  double total = 0.0;
  Eigen::VectorXd g, h;
  for (Eigen::Index i = 0; i < data.rows(); ++i) {
    lite_score_parts(model, data.row(i), g, h);
    total += h.sum() + 0.5 * g.squaredNorm();
  }
  return total / static_cast<double>(data.rows());
}

// ---------------------------------------------------------------------------
// Finite estimator: f(x) = theta^T phi(x) in an m-dimensional random feature
// space; theta = (C + lambda I)^{-1} b with averaged b, C, and constant-cost
// online absorption of new points.
// ---------------------------------------------------------------------------

struct FiniteModel {
  FeatureBasis basis;
  double lambda = 1e-3;
  long long t = 0;             // absorbed point count
  Eigen::VectorXd b_sum;       // sum over points of -sum_l phi_ddot^l
  Eigen::MatrixXd C_sum;       // sum over points of sum_l phi_dot phi_dot^T (lower triangle)
  Eigen::VectorXd theta;
  Eigen::MatrixXd C_chol;      // lower factor of (C_sum/t + lambda I); empty when stale
  bool rebuild_flagged = false;
};

// Fresh state: lambda I only, theta = 0.
inline FiniteModel make_finite_model(const FeatureBasis& basis, double lambda) {
  require_input(lambda > 0.0, "FiniteModel: lambda must be positive");
  FiniteModel model;
  model.basis = basis;
  model.lambda = lambda;
  model.b_sum = Eigen::VectorXd::Zero(basis.m);
  model.C_sum = Eigen::MatrixXd::Zero(basis.m, basis.m);
  model.theta = Eigen::VectorXd::Zero(basis.m);
  model.C_chol =
      std::sqrt(lambda) * Eigen::MatrixXd::Identity(basis.m, basis.m);
  return model;
}

// Adds one point to the running sums. The rank-d increment
//   sum_l phi_dot^l (phi_dot^l)^T = (2/m) D_s (omega omega^T) D_s
// enters through a d-column rank update; the cached factor goes stale.
inline void finite_absorb(FiniteModel& model, const Eigen::VectorXd& x) {
  const FeatureBasis& basis = model.basis;
  require_input(x.size() == basis.d, "finite_update: dimension mismatch");
  const Eigen::ArrayXd angles = detail::basis_angles(basis, x);
  const double scale = detail::basis_scale(basis);
  const Eigen::ArrayXd c = angles.cos();
  const Eigen::ArrayXd s = angles.sin();
  require_numeric(c.allFinite() && s.allFinite(), "finite_update: non-finite features");

  model.b_sum += (scale * c * basis.omega_sq_sum.array()).matrix();
  const Eigen::MatrixXd U = scale * (basis.omegas.array().colwise() * s).matrix();
  model.C_sum.selfadjointView<Eigen::Lower>().rankUpdate(U);
  model.t += 1;
  model.C_chol.resize(0, 0);
}

// Rebuilds the factor of (C_sum/t + lambda I) and recomputes theta by two
// triangular solves. lambda stays outside the running sums, so it can change
// without replaying data; the factor is cached until the next absorption.
inline void finite_refresh(FiniteModel& model) {
  const Eigen::Index m = model.basis.m;
  if (model.t == 0) {
    model.theta = Eigen::VectorXd::Zero(m);
    model.C_chol = std::sqrt(model.lambda) * Eigen::MatrixXd::Identity(m, m);
    return;
  }
  if (model.C_chol.size() > 0) {
    // cached factor still valid
    Eigen::VectorXd y = model.C_chol.triangularView<Eigen::Lower>().solve(
        model.b_sum / static_cast<double>(model.t));
    model.theta = model.C_chol.transpose().triangularView<Eigen::Upper>().solve(y);
    return;
  }
  Eigen::MatrixXd M = model.C_sum.selfadjointView<Eigen::Lower>();
  M /= static_cast<double>(model.t);
  M.diagonal().array() += model.lambda;
  Eigen::LLT<Eigen::MatrixXd> llt(M);
  if (llt.info() != Eigen::Success) {
    // numerically non-PD: rebuild with escalating jitter and flag the event
    model.rebuild_flagged = true;
    double jitter = 1e-12 * (1.0 + M.diagonal().maxCoeff());
    for (int k = 0; k < 8 && llt.info() != Eigen::Success; ++k, jitter *= 10.0) {
      Eigen::MatrixXd Mj = M;
      Mj.diagonal().array() += jitter;
      llt.compute(Mj);
    }
    require_numeric(llt.info() == Eigen::Success, "finite_refresh: factorization failed");
  }
  model.C_chol = llt.matrixL();
  Eigen::VectorXd y = model.C_chol.triangularView<Eigen::Lower>().solve(
      model.b_sum / static_cast<double>(model.t));
  model.theta = model.C_chol.transpose().triangularView<Eigen::Upper>().solve(y);
  require_numeric(model.theta.allFinite(), "finite_refresh: non-finite solution");
}

inline FiniteModel finite_update(FiniteModel model, const Eigen::VectorXd& x_new) {
  finite_absorb(model, x_new);
  finite_refresh(model);
  return model;
}

// Blocked absorption of several points: same sums as repeated finite_absorb,
// accumulated through syrk-sized rank updates.
inline void finite_absorb_block(FiniteModel& model, const Eigen::MatrixXd& X) {
  const FeatureBasis& basis = model.basis;
  require_input(X.cols() == basis.d, "finite_absorb_block: dimension mismatch");
  const Eigen::Index n = X.rows();
  if (n == 0) return;
  const int d = basis.d;
  const double scale = detail::basis_scale(basis);
  const Eigen::Index block = std::max<Eigen::Index>(1, 1024 / d);
  Eigen::MatrixXd U(basis.m, block * d);
  for (Eigen::Index start = 0; start < n; start += block) {
    const Eigen::Index count = std::min(block, n - start);
    const Eigen::MatrixXd T =
        (basis.omegas * X.middleRows(start, count).transpose()).colwise() +
        basis.offsets;  // m x count
    const Eigen::ArrayXXd C = T.array().cos();
    const Eigen::ArrayXXd S = T.array().sin();
    require_numeric(C.allFinite() && S.allFinite(), "finite_absorb_block: non-finite features");
    model.b_sum += scale * (C.colwise() * basis.omega_sq_sum.array()).rowwise().sum().matrix();
    for (Eigen::Index i = 0; i < count; ++i)
      U.middleCols(i * d, d) = scale * (basis.omegas.array().colwise() * S.col(i)).matrix();
    model.C_sum.selfadjointView<Eigen::Lower>().rankUpdate(U.leftCols(count * d));
  }
  model.t += n;
  model.C_chol.resize(0, 0);
}

inline FiniteModel fit_finite_batch(const Eigen::MatrixXd& X, const FeatureBasis& basis,
                                    double lambda) {
  require_input(X.rows() >= 1, "fit_finite_batch: need at least one point");
  FiniteModel model = make_finite_model(basis, lambda);
  finite_absorb_block(model, X);
  finite_refresh(model);
  return model;
}

inline double finite_log_density(const FiniteModel& model, const Eigen::VectorXd& x) {
  return model.theta.dot(phi(model.basis, x));
}

// grad f(x) = [grad phi_x]^T theta; O(m d).
inline Eigen::VectorXd finite_grad(const FiniteModel& model, const Eigen::VectorXd& x) {
  const FeatureBasis& basis = model.basis;
  require_input(x.size() == basis.d, "finite_grad: dimension mismatch");
  const Eigen::ArrayXd s = detail::basis_angles(basis, x).sin();
  return -detail::basis_scale(basis) *
         (basis.omegas.transpose() * (model.theta.array() * s).matrix());
}

inline void finite_score_parts(const FiniteModel& model, const Eigen::VectorXd& x,
                               Eigen::VectorXd& grad, Eigen::VectorXd& lap_diag) {
  const FeatureBasis& basis = model.basis;
  require_input(x.size() == basis.d, "finite_score_parts: dimension mismatch");
  const Eigen::ArrayXd angles = detail::basis_angles(basis, x);
  const double scale = detail::basis_scale(basis);
  const Eigen::ArrayXd s = angles.sin();
  const Eigen::ArrayXd c = angles.cos();
  grad = -scale * (basis.omegas.transpose() * (model.theta.array() * s).matrix());
  lap_diag = -scale * (basis.omegas.array().square().matrix().transpose() *
                       (model.theta.array() * c).matrix());
}

inline double finite_lap_diag(const FiniteModel& model, const Eigen::VectorXd& x,
                              int coord) {
  require_input(coord >= 0 && coord < model.basis.d, "finite_lap_diag: index out of range");
  Eigen::VectorXd g, h;
  finite_score_parts(model, x, g, h);
  return h[coord];
}

inline double finite_objective(const FiniteModel& model, const Eigen::MatrixXd& data) {
  require_input(data.rows() >= 1, "finite_objective: data must be nonempty");
  double total = 0.0;
  Eigen::VectorXd g, h;
  for (Eigen::Index i = 0; i < data.rows(); ++i) {
    finite_score_parts(model, data.row(i), g, h);
    total += h.sum() + 0.5 * g.squaredNorm();
  }
  return total / static_cast<double>(data.rows());
}

// ---------------------------------------------------------------------------
// Cross-validation of (sigma, lambda) on the score matching objective.
// ---------------------------------------------------------------------------

struct CvEstimator {
  enum class Kind { Lite, Finite };
  Kind kind = Kind::Lite;
  int m = 0;  // feature count, finite only

  static CvEstimator lite() { return {Kind::Lite, 0}; }
  static CvEstimator finite(int m) { return {Kind::Finite, m}; }
};

struct CVResult {
  double sigma = 0.0;
  double lambda = 0.0;
  Eigen::MatrixXd fold_scores;  // mean validation objective, sigma index x lambda index
};

// Seeded-permutation fold assignment; ties broken by smaller lambda, then
// smaller sigma.
inline CVResult cross_validate(const Eigen::MatrixXd& data,
                               const std::vector<double>& sigma_grid,
                               const std::vector<double>& lambda_grid, int folds,
                               const CvEstimator& estimator, std::uint64_t seed) {
  require_input(folds >= 2, "cross_validate: folds must be at least 2");
  require_input(!sigma_grid.empty() && !lambda_grid.empty(),
                "cross_validate: grids must be nonempty");
  const Eigen::Index n = data.rows();
  require_input(n >= folds, "cross_validate: fold smaller than 1 point");
  const int d = static_cast<int>(data.cols());

  Rng rng(seed);
  std::vector<Eigen::Index> perm(n);
  std::iota(perm.begin(), perm.end(), Eigen::Index{0});
  for (Eigen::Index i = n - 1; i > 0; --i)
    std::swap(perm[i], perm[rng.uniform_int(0, i)]);

  std::vector<Eigen::Index> fold_start(folds + 1);
  for (int f = 0; f <= folds; ++f) fold_start[f] = f * n / folds;

  CVResult result;
  result.fold_scores = Eigen::MatrixXd::Zero(sigma_grid.size(), lambda_grid.size());

  for (std::size_t si = 0; si < sigma_grid.size(); ++si) {
    const double sigma = sigma_grid[si];
    FeatureBasis basis;
    if (estimator.kind == CvEstimator::Kind::Finite) {
      require_input(estimator.m >= 1, "cross_validate: finite estimator needs m >= 1");
      basis = sample_basis(KernelSpec{KernelFamily::Gaussian, sigma, 1.0}, estimator.m,
                           d, seed ^ (0x9E3779B97F4A7C15ULL * (si + 1)));
    }
    for (int f = 0; f < folds; ++f) {
      const Eigen::Index vn = fold_start[f + 1] - fold_start[f];
      Eigen::MatrixXd train(n - vn, d), val(vn, d);
      Eigen::Index tr = 0;
      for (Eigen::Index i = 0; i < n; ++i) {
        if (i >= fold_start[f] && i < fold_start[f + 1])
          val.row(i - fold_start[f]) = data.row(perm[i]);
        else
          train.row(tr++) = data.row(perm[i]);
      }

      if (estimator.kind == CvEstimator::Kind::Lite) {
        // b, C do not depend on lambda: assemble once per (sigma, fold)
        LiteSystem sys = assemble_lite_system(train, sigma);
        for (std::size_t li = 0; li < lambda_grid.size(); ++li) {
          Eigen::MatrixXd M = sys.C;
          M.diagonal().array() += lambda_grid[li];
          LiteModel model;
          model.Z = train;
          model.spec = KernelSpec{KernelFamily::Gaussian, sigma, 1.0};
          model.lambda = lambda_grid[li];
          model.alpha = Eigen::LDLT<Eigen::MatrixXd>(M).solve((-sigma / 2.0) * sys.b);
          result.fold_scores(si, li) += lite_objective(model, val) / folds;
        }
      } else {
        FiniteModel base = make_finite_model(basis, lambda_grid[0]);
        for (Eigen::Index i = 0; i < train.rows(); ++i) finite_absorb(base, train.row(i));
        for (std::size_t li = 0; li < lambda_grid.size(); ++li) {
          FiniteModel model = base;
          model.lambda = lambda_grid[li];
          finite_refresh(model);
          result.fold_scores(si, li) += finite_objective(model, val) / folds;
        }
      }
    }
  }

  bool found = false;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t si = 0; si < sigma_grid.size(); ++si) {
    for (std::size_t li = 0; li < lambda_grid.size(); ++li) {
      const double score = result.fold_scores(si, li);
      if (!std::isfinite(score)) continue;
      const bool better =
          score < best ||
          (score == best && (lambda_grid[li] < result.lambda ||
                             (lambda_grid[li] == result.lambda && sigma_grid[si] < result.sigma)));
      if (!found || better) {
        found = true;
        best = score;
        result.sigma = sigma_grid[si];
        result.lambda = lambda_grid[li];
      }
    }
  }
  require_numeric(found, "cross_validate: all grid scores non-finite");
  return result;
}

}  // namespace kmc
