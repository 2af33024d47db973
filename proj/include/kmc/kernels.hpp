#pragma once

#include <cmath>
#include <string>

#include <Eigen/Core>

#include "kmc/errors.hpp"

namespace kmc {

enum class KernelFamily { Gaussian, RationalQuadratic };

// Gaussian: k(x,y) = exp(-||x-y||^2 / sigma).
// Rational quadratic: k(x,y) = (1 + ||x-y||^2 / (alpha*sigma))^(-alpha),
// which recovers the Gaussian with the same sigma as alpha -> inf.
struct KernelSpec {
  KernelFamily family = KernelFamily::Gaussian;
  double sigma = 1.0;
  double alpha = 1.0;  // RQ shape, unused for Gaussian

  void validate() const {
    require_input(sigma > 0.0, "KernelSpec: sigma must be positive");
    if (family == KernelFamily::RationalQuadratic)
      require_input(alpha > 0.0, "KernelSpec: alpha must be positive");
  }
};

inline double kernel_from_sqdist(const KernelSpec& spec, double r2) {
  if (spec.family == KernelFamily::Gaussian) return std::exp(-r2 / spec.sigma);
  return std::pow(1.0 + r2 / (spec.alpha * spec.sigma), -spec.alpha);
}

inline double kernel_eval(const KernelSpec& spec, const Eigen::VectorXd& x,
                          const Eigen::VectorXd& y) {
  spec.validate();
  require_input(x.size() == y.size(), "kernel_eval: dimension mismatch");
  return kernel_from_sqdist(spec, (x - y).squaredNorm());
}

// Gradient with respect to the first argument.
// Gaussian: -(2/sigma) (x-y) k(x,y).
// RQ: -(2/sigma) (x-y) (1 + r^2/(alpha*sigma))^(-alpha-1).
inline Eigen::VectorXd kernel_grad_x(const KernelSpec& spec, const Eigen::VectorXd& x,
                                     const Eigen::VectorXd& y) {
  spec.validate();
  require_input(x.size() == y.size(), "kernel_grad_x: dimension mismatch");
  const double r2 = (x - y).squaredNorm();
  double scale;
  if (spec.family == KernelFamily::Gaussian) {
    scale = -2.0 / spec.sigma * std::exp(-r2 / spec.sigma);
  } else {
    scale = -2.0 / spec.sigma *
            std::pow(1.0 + r2 / (spec.alpha * spec.sigma), -spec.alpha - 1.0);
  }
  return scale * (x - y);
}

namespace detail {

// Pairwise squared distances, clamped at zero against cancellation.
inline Eigen::MatrixXd squared_distances(const Eigen::MatrixXd& X,
                                         const Eigen::MatrixXd& Z) {
  const Eigen::VectorXd xn = X.rowwise().squaredNorm();
  const Eigen::VectorXd zn = Z.rowwise().squaredNorm();
  Eigen::MatrixXd d2 = -2.0 * (X * Z.transpose());
  d2.colwise() += xn;
  d2.rowwise() += zn.transpose();
  return d2.cwiseMax(0.0);
}

}  // namespace detail

// Entry (i,j) = k(X.row(i), Z.row(j)).
inline Eigen::MatrixXd kernel_matrix(const KernelSpec& spec, const Eigen::MatrixXd& X,
                                     const Eigen::MatrixXd& Z) {
  spec.validate();
  require_input(X.cols() == Z.cols(), "kernel_matrix: column counts disagree");
  Eigen::MatrixXd d2 = detail::squared_distances(X, Z);
  if (spec.family == KernelFamily::Gaussian)
    return (-d2.array() / spec.sigma).exp();
  return (1.0 + d2.array() / (spec.alpha * spec.sigma)).pow(-spec.alpha);
}

// Symmetric Gram matrix of one point set: exactly symmetric, unit diagonal.
inline Eigen::MatrixXd kernel_matrix(const KernelSpec& spec, const Eigen::MatrixXd& X) {
  Eigen::MatrixXd K = kernel_matrix(spec, X, X);
  K = 0.5 * (K + K.transpose()).eval();
  K.diagonal().setOnes();
  return K;
}

struct LowRankFactor {
  Eigen::MatrixXd L;       // n x rank
  double tol = 0.0;        // requested cut-off
  double achieved = 0.0;   // max remaining diagonal of K - L L^T at exit

  Eigen::Index rank() const { return L.cols(); }
};

// Incomplete Cholesky (dual partial Gram-Schmidt) with greedy max-diagonal
// pivoting. The residual K - L L^T is PSD, so its largest entry in absolute
// value sits on the diagonal; stopping once every remaining diagonal is
// <= tol therefore bounds max_ij |K - (L L^T)_ij| by tol.
inline LowRankFactor incomplete_cholesky(const KernelSpec& spec, const Eigen::MatrixXd& X,
                                         double tol) {
  spec.validate();
  require_input(tol > 0.0, "incomplete_cholesky: tol must be positive");
  const Eigen::Index n = X.rows();

  Eigen::VectorXd d(n);
  for (Eigen::Index i = 0; i < n; ++i) d[i] = kernel_from_sqdist(spec, 0.0);
  require_numeric(d.allFinite(), "incomplete_cholesky: non-finite kernel diagonal");

  Eigen::MatrixXd L(n, std::min<Eigen::Index>(n, 16));
  Eigen::Index rank = 0;
  double remaining = d.maxCoeff();

  while (rank < n && remaining > tol) {
    Eigen::Index pivot;
    d.maxCoeff(&pivot);
    const double piv = std::sqrt(d[pivot]);

    if (rank == L.cols()) L.conservativeResize(n, std::min<Eigen::Index>(n, 2 * rank));

    // Fresh kernel column against the pivot point.
    Eigen::VectorXd col(n);
    for (Eigen::Index i = 0; i < n; ++i)
      col[i] = kernel_from_sqdist(spec, (X.row(i) - X.row(pivot)).squaredNorm());
    require_numeric(col.allFinite(), "incomplete_cholesky: non-finite kernel value");

    if (rank > 0)
      col.noalias() -= L.leftCols(rank) * L.row(pivot).head(rank).transpose();
    col /= piv;

    L.col(rank) = col;
    d -= col.cwiseProduct(col);
    d = d.cwiseMax(0.0);
    d[pivot] = 0.0;
    ++rank;
    remaining = n > 0 ? d.maxCoeff() : 0.0;
  }

  LowRankFactor out;
  out.L = L.leftCols(rank);
  out.tol = tol;
  out.achieved = n > 0 ? std::max(remaining, 0.0) : 0.0;
  return out;
}

}  // namespace kmc
