#pragma once

#include <cmath>
#include <cstdint>

#include <Eigen/Core>

#include "kmc/errors.hpp"
#include "kmc/kernels.hpp"
#include "kmc/rng.hpp"

namespace kmc {

// Random Fourier basis phi_j(x) = sqrt(2/m) cos(omega_j^T x + u_j).
// Frequencies follow the kernel's spectral measure:
//   Gaussian  k = exp(-r^2/sigma):  omega ~ N(0, (2/sigma) I)
//   RQ        k = (1 + r^2/(alpha*sigma))^(-alpha):
//             tau_j ~ Gamma(shape=alpha, rate=alpha*sigma/2), omega_j ~ N(0, tau_j I)
// so that E[phi(x)^T phi(y)] = k(x,y) in both cases.
struct FeatureBasis {
  KernelSpec spec;
  int m = 0;
  int d = 0;
  std::uint64_t seed = 0;
  Eigen::MatrixXd omegas;        // m x d
  Eigen::VectorXd offsets;       // m, each in [0, 2*pi)
  Eigen::VectorXd omega_sq_sum;  // row-wise squared norms of omegas
};

inline FeatureBasis sample_basis(const KernelSpec& spec, int m, int d,
                                 std::uint64_t seed) {
  spec.validate();
  require_input(m >= 1 && d >= 1, "sample_basis: m and d must be at least 1");

  FeatureBasis basis;
  basis.spec = spec;
  basis.m = m;
  basis.d = d;
  basis.seed = seed;
  basis.omegas.resize(m, d);
  basis.offsets.resize(m);

  Rng rng(seed);
  const double two_pi = 2.0 * std::numbers::pi;
  for (int j = 0; j < m; ++j) {
    double scale;
    if (spec.family == KernelFamily::Gaussian) {
      scale = std::sqrt(2.0 / spec.sigma);
    } else {
      const double tau = rng.gamma(spec.alpha, spec.alpha * spec.sigma / 2.0);
      scale = std::sqrt(tau);
    }
    for (int k = 0; k < d; ++k) basis.omegas(j, k) = scale * rng.normal();
    basis.offsets[j] = two_pi * rng.uniform01();
  }
  basis.omega_sq_sum = basis.omegas.rowwise().squaredNorm();
  return basis;
}

namespace detail {

inline Eigen::ArrayXd basis_angles(const FeatureBasis& basis, const Eigen::VectorXd& x) {
  require_input(x.size() == basis.d, "feature map: dimension mismatch");
  return (basis.omegas * x + basis.offsets).array();
}

inline double basis_scale(const FeatureBasis& basis) {
  return std::sqrt(2.0 / static_cast<double>(basis.m));
}

}  // namespace detail

inline Eigen::VectorXd phi(const FeatureBasis& basis, const Eigen::VectorXd& x) {
  return detail::basis_scale(basis) * detail::basis_angles(basis, x).cos();
}

// d/dx_coord of phi: entry j = -sqrt(2/m) sin(omega_j^T x + u_j) omega_{j,coord}.
inline Eigen::VectorXd phi_dot(const FeatureBasis& basis, const Eigen::VectorXd& x,
                               int coord) {
  require_input(coord >= 0 && coord < basis.d, "phi_dot: coordinate index out of range");
  const Eigen::ArrayXd s = -detail::basis_scale(basis) * detail::basis_angles(basis, x).sin();
  return (s * basis.omegas.col(coord).array()).matrix();
}

// d^2/dx_coord^2 of phi: entry j = -phi_j(x) omega_{j,coord}^2.
inline Eigen::VectorXd phi_ddot(const FeatureBasis& basis, const Eigen::VectorXd& x,
                                int coord) {
  require_input(coord >= 0 && coord < basis.d, "phi_ddot: coordinate index out of range");
  const Eigen::ArrayXd c = detail::basis_scale(basis) * detail::basis_angles(basis, x).cos();
  return (-(c * basis.omegas.col(coord).array().square())).matrix();
}

// d x m matrix whose row coord equals phi_dot(basis, x, coord).
inline Eigen::MatrixXd feature_jacobian(const FeatureBasis& basis,
                                        const Eigen::VectorXd& x) {
  const Eigen::ArrayXd s = -detail::basis_scale(basis) * detail::basis_angles(basis, x).sin();
  return (basis.omegas.array().colwise() * s).transpose();
}

}  // namespace kmc
