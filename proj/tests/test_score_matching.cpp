#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/Eigenvalues>

#include "kmc/rng.hpp"
#include "kmc/score_matching.hpp"

using namespace kmc;

namespace {

Eigen::MatrixXd random_points(Eigen::Index n, Eigen::Index d, std::uint64_t seed) {
  Rng rng(seed);
  Eigen::MatrixXd X(n, d);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < d; ++j) X(i, j) = rng.normal();
  return X;
}

// Literal transcription of the proposition's b and C, term by term. Slow but
// independent of the production assembly.
void naive_lite_system(const Eigen::MatrixXd& Z, double sigma, Eigen::MatrixXd& C,
                       Eigen::VectorXd& b) {
  const Eigen::Index n = Z.rows();
  const Eigen::Index d = Z.cols();
  Eigen::MatrixXd K(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      K(i, j) = std::exp(-(Z.row(i) - Z.row(j)).squaredNorm() / sigma);
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(n);
  C = Eigen::MatrixXd::Zero(n, n);
  b = Eigen::VectorXd::Zero(n);
  for (Eigen::Index l = 0; l < d; ++l) {
    const Eigen::VectorXd x = Z.col(l);
    const Eigen::VectorXd s = x.cwiseProduct(x);
    b += (2.0 / sigma) *
             (K * s + s.asDiagonal() * (K * ones) - 2.0 * x.asDiagonal() * (K * x)) -
         K * ones;
    const Eigen::MatrixXd D = x.asDiagonal();
    const Eigen::MatrixXd A = D * K - K * D;
    const Eigen::MatrixXd B = K * D - D * K;
    C += A * B;
  }
}

// Steepest descent with exact line search on the regularised quadratic whose
// unique minimiser is -(sigma/2) (C + lambda I)^{-1} b.
Eigen::VectorXd quadratic_minimizer_oracle(const Eigen::MatrixXd& C,
                                           const Eigen::VectorXd& b, double sigma,
                                           double lambda) {
  const Eigen::Index n = b.size();
  const double nn = static_cast<double>(n);
  Eigen::MatrixXd H = (4.0 / (nn * sigma * sigma)) * C;
  H.diagonal().array() += 4.0 * lambda / (nn * sigma * sigma);
  const Eigen::VectorXd g0 = (2.0 / (nn * sigma)) * b;
  Eigen::VectorXd a = Eigen::VectorXd::Zero(n);
  for (int it = 0; it < 200000; ++it) {
    const Eigen::VectorXd g = g0 + H * a;
    const double gg = g.squaredNorm();
    if (gg < 1e-28) break;
    a -= (gg / g.dot(H * g)) * g;
  }
  return a;
}

double std_normal_grad_mse_1d(const std::function<double(double)>& grad) {
  double mse = 0.0;
  int count = 0;
  for (double x = -3.0; x <= 3.0 + 1e-9; x += 0.1) {
    const double diff = grad(x) - (-x);
    mse += diff * diff;
    ++count;
  }
  return mse / count;
}

}  // namespace

TEST_CASE("score_objective closed forms") {
  const Eigen::MatrixXd data = random_points(25, 3, 1);

  const auto zero_grad = [](const Eigen::VectorXd& x) {
    return Eigen::VectorXd::Zero(x.size()).eval();
  };
  const auto zero_lap = [](const Eigen::VectorXd&, int) { return 0.0; };
  CHECK(score_objective(zero_grad, zero_lap, data) == 0.0);

  // f = -||x||^2/2: gradient -x, curvature -1 per coordinate
  const auto g = [](const Eigen::VectorXd& x) { return (-x).eval(); };
  const auto h = [](const Eigen::VectorXd&, int) { return -1.0; };
  const double expect = -3.0 + 0.5 * data.rowwise().squaredNorm().mean();
  CHECK(score_objective(g, h, data) == Catch::Approx(expect).epsilon(1e-12));

  const auto bad = [](const Eigen::VectorXd&, int) {
    return std::numeric_limits<double>::quiet_NaN();
  };
  CHECK_THROWS_AS(score_objective(g, bad, data), NumericError);
}

TEST_CASE("score_objective on a lite model matches finite differences") {
  const Eigen::MatrixXd Z = random_points(20, 2, 2);
  const LiteModel model = fit_lite(Z, 2.0, 0.1);

  const auto grad = [&](const Eigen::VectorXd& x) { return lite_grad(model, x); };
  const auto lap = [&](const Eigen::VectorXd& x, int l) { return lite_lap_diag(model, x, l); };
  const double fast = score_objective(grad, lap, Z);

  // brute force from finite differences of the log density
  const double h = 1e-4;
  double brute = 0.0;
  for (Eigen::Index i = 0; i < Z.rows(); ++i) {
    const Eigen::VectorXd x = Z.row(i);
    for (int l = 0; l < 2; ++l) {
      Eigen::VectorXd xp = x, xm = x;
      xp[l] += h;
      xm[l] -= h;
      const double f0 = lite_log_density(model, x);
      const double d1 =
          (lite_log_density(model, xp) - lite_log_density(model, xm)) / (2 * h);
      const double d2 = (lite_log_density(model, xp) - 2 * f0 + lite_log_density(model, xm)) /
                        (h * h);
      brute += d2 + 0.5 * d1 * d1;
    }
  }
  brute /= static_cast<double>(Z.rows());
  CHECK(std::abs(fast - brute) <= 1e-5);
}

TEST_CASE("lite system fast assembly equals the literal commutator form") {
  const Eigen::MatrixXd Z = random_points(30, 3, 3);
  const double sigma = 1.7;
  Eigen::MatrixXd C_naive;
  Eigen::VectorXd b_naive;
  naive_lite_system(Z, sigma, C_naive, b_naive);
  const LiteSystem sys = assemble_lite_system(Z, sigma);
  CHECK((sys.C - C_naive).cwiseAbs().maxCoeff() <= 1e-9);
  CHECK((sys.b - b_naive).cwiseAbs().maxCoeff() <= 1e-9);

  // C = sum_l A_l A_l^T is symmetric PSD
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sys.C);
  CHECK(eig.eigenvalues().minCoeff() >= -30 * 1e-12 * sys.C.norm());
}

TEST_CASE("fit_lite single point") {
  Eigen::MatrixXd Z(1, 3);
  Z << 0.5, -1.0, 2.0;
  const double sigma = 2.0, lambda = 0.25;
  const LiteModel model = fit_lite(Z, sigma, lambda);
  // K = [1], commutators vanish: C = 0, b = -d, alpha = -(sigma/2) b / lambda
  CHECK(model.alpha[0] == Catch::Approx(sigma * 3.0 / (2.0 * lambda)).epsilon(1e-12));
  CHECK_THROWS_AS(fit_lite(Z, sigma, 0.0), InputError);
}

TEST_CASE("fit_lite matches an independent quadratic minimizer") {
  Eigen::MatrixXd Z(3, 1);
  Z << -1.0, 0.0, 1.0;
  const double sigma = 2.0, lambda = 0.1;
  Eigen::MatrixXd C;
  Eigen::VectorXd b;
  naive_lite_system(Z, sigma, C, b);
  const Eigen::VectorXd oracle = quadratic_minimizer_oracle(C, b, sigma, lambda);
  const LiteModel model = fit_lite(Z, sigma, lambda);
  CHECK((model.alpha - oracle).cwiseAbs().maxCoeff() <= 1e-6);
}

TEST_CASE("fit_lite recovers the standard normal score after CV") {
  const Eigen::MatrixXd X = random_points(500, 1, 4);
  const CVResult cv = cross_validate(X, {256.0, 512.0, 1024.0}, {1.0, 3.0, 10.0}, 5,
                                     CvEstimator::lite(), 5);
  const LiteModel model = fit_lite(X, cv.sigma, cv.lambda);
  const double mse = std_normal_grad_mse_1d([&](double x) {
    Eigen::VectorXd v(1);
    v << x;
    return lite_grad(model, v)[0];
  });
  CHECK(mse <= 0.05);
}

TEST_CASE("fit_lite_lowrank agrees with the dense path") {
  const Eigen::MatrixXd Z = random_points(120, 2, 6);
  const double sigma = 2.5, lambda = 0.05;
  const LiteModel dense = fit_lite(Z, sigma, lambda);

  const LiteFitResult lr = fit_lite_lowrank(Z, sigma, lambda, 1e-10, 600);
  CHECK((lr.model.alpha - dense.alpha).cwiseAbs().maxCoeff() <= 1e-4);

  const LiteFitResult full = fit_lite_lowrank(Z, sigma, lambda, 1e-12, 2000);
  CHECK(full.converged);
  CHECK((full.model.alpha - dense.alpha).cwiseAbs().maxCoeff() <= 1e-6);
}

TEST_CASE("fit_lite_lowrank degenerate budget and warm start") {
  const Eigen::MatrixXd Z = random_points(40, 2, 7);
  const double sigma = 2.0, lambda = 0.1;

  const LiteFitResult none = fit_lite_lowrank(Z, sigma, lambda, 1e-10, 0);
  CHECK_FALSE(none.converged);
  CHECK(none.model.alpha.cwiseAbs().maxCoeff() == 0.0);
  // reported residual is ||rhs|| = (sigma/2) ||b||, with b from the factored kernel
  Eigen::MatrixXd C_naive;
  Eigen::VectorXd b_naive;
  naive_lite_system(Z, sigma, C_naive, b_naive);
  CHECK(none.residual_norm ==
        Catch::Approx((sigma / 2.0) * b_naive.norm()).epsilon(1e-6));

  const LiteModel dense = fit_lite(Z, sigma, lambda);
  const LiteFitResult warm =
      fit_lite_lowrank(Z, sigma, lambda, 1e-8, 0, std::make_optional(dense.alpha));
  CHECK(warm.converged);  // hot start at the solution needs no iterations
}

TEST_CASE("lite_grad basics, consistency, tail decay") {
  const Eigen::MatrixXd Z = random_points(50, 3, 8);
  LiteModel model = fit_lite(Z, 2.0, 0.1);

  {
    LiteModel zero = model;
    zero.alpha.setZero();
    Rng rng(9);
    CHECK(lite_grad(zero, rng.normal_vec(3)).norm() == 0.0);
    CHECK(lite_log_density(zero, rng.normal_vec(3)) == 0.0);
  }

  {
    // single basis point, alpha = 1: log density is the kernel itself
    LiteModel single;
    single.Z = Z.topRows(1);
    single.alpha = Eigen::VectorXd::Ones(1);
    single.spec = model.spec;
    single.lambda = 0.1;
    Rng rng(10);
    const Eigen::VectorXd x = rng.normal_vec(3);
    CHECK(lite_log_density(single, x) ==
          Catch::Approx(kernel_eval(model.spec, Z.row(0), x)).epsilon(1e-14));
  }

  Rng rng(11);
  for (int k = 0; k < 5; ++k) {
    const Eigen::VectorXd x = rng.normal_vec(3);
    const Eigen::VectorXd g = lite_grad(model, x);
    const double h = 1e-5;
    for (int l = 0; l < 3; ++l) {
      Eigen::VectorXd xp = x, xm = x;
      xp[l] += h;
      xm[l] -= h;
      const double fd =
          (lite_log_density(model, xp) - lite_log_density(model, xm)) / (2 * h);
      CHECK(std::abs(g[l] - fd) <= 1e-6);
    }
  }

  // Prop. 3 premise: gradients die off away from the basis points
  const double sep = 10.0 * std::sqrt(model.spec.sigma);
  Eigen::VectorXd far = Eigen::VectorXd::Zero(3);
  far[0] = Z.col(0).maxCoeff() + sep;
  CHECK(lite_grad(model, far).norm() < 1e-6);
}

TEST_CASE("fit_finite_batch symbolic single-point oracle") {
  // m = 2, omega = [(1), (2)], u = 0, one data point x = 0, lambda = 1.
  // sin(0) = 0 kills C; b = -phi(0) .* omega^2 entrywise.
  FeatureBasis basis;
  basis.spec = KernelSpec{KernelFamily::Gaussian, 1.0, 1.0};
  basis.m = 2;
  basis.d = 1;
  basis.omegas.resize(2, 1);
  basis.omegas << 1.0, 2.0;
  basis.offsets = Eigen::VectorXd::Zero(2);
  basis.omega_sq_sum = basis.omegas.rowwise().squaredNorm();

  const Eigen::MatrixXd X = Eigen::MatrixXd::Zero(1, 1);
  const FiniteModel model = fit_finite_batch(X, basis, 1.0);

  const double scale = std::sqrt(2.0 / 2.0);  // = 1
  Eigen::VectorXd b_expected(2);
  b_expected << scale * 1.0, scale * 4.0;
  CHECK((model.b_sum - b_expected).cwiseAbs().maxCoeff() <= 1e-15);
  CHECK((model.theta - b_expected / 1.0).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("fit_finite_batch recovers the standard normal score") {
  const Eigen::MatrixXd X = random_points(2000, 1, 12);
  const FeatureBasis basis =
      sample_basis(KernelSpec{KernelFamily::Gaussian, 128.0, 1.0}, 300, 1, 13);
  const FiniteModel model = fit_finite_batch(X, basis, 1e-5);
  const double mse = std_normal_grad_mse_1d([&](double x) {
    Eigen::VectorXd v(1);
    v << x;
    return finite_grad(model, v)[0];
  });
  CHECK(mse <= 0.05);
}

TEST_CASE("huge lambda shrinks theta") {
  const Eigen::MatrixXd X = random_points(200, 2, 14);
  const FeatureBasis basis =
      sample_basis(KernelSpec{KernelFamily::Gaussian, 2.0, 1.0}, 50, 2, 15);
  const FiniteModel model = fit_finite_batch(X, basis, 1e9);
  const Eigen::VectorXd b = model.b_sum / static_cast<double>(model.t);
  CHECK(model.theta.norm() <= b.norm() / 1e9 * (1.0 + 1e-10));
}

TEST_CASE("online updates equal the batch fit under any insertion order") {
  const Eigen::MatrixXd X = random_points(5, 3, 16);
  const FeatureBasis basis =
      sample_basis(KernelSpec{KernelFamily::Gaussian, 3.0, 1.0}, 40, 3, 17);
  const double lambda = 1e-2;
  const FiniteModel batch = fit_finite_batch(X, basis, lambda);

  FiniteModel online = make_finite_model(basis, lambda);
  for (Eigen::Index i = 0; i < X.rows(); ++i)
    online = finite_update(std::move(online), X.row(i));
  CHECK((online.theta - batch.theta).cwiseAbs().maxCoeff() <= 1e-8);

  const std::vector<Eigen::Index> order{3, 0, 4, 1, 2};
  FiniteModel shuffled = make_finite_model(basis, lambda);
  for (const Eigen::Index i : order)
    shuffled = finite_update(std::move(shuffled), X.row(i));
  CHECK((shuffled.theta - batch.theta).cwiseAbs().maxCoeff() <= 1e-8);
}

TEST_CASE("absorbing a duplicate repeats the same rank-d increment") {
  const FeatureBasis basis =
      sample_basis(KernelSpec{KernelFamily::Gaussian, 2.0, 1.0}, 30, 2, 18);
  Rng rng(19);
  const Eigen::VectorXd x = rng.normal_vec(2);

  FiniteModel model = make_finite_model(basis, 1e-2);
  const Eigen::MatrixXd c0 = model.C_sum;
  finite_absorb(model, x);
  const Eigen::MatrixXd c1 = model.C_sum;
  finite_absorb(model, x);
  const Eigen::MatrixXd c2 = model.C_sum;
  CHECK(((c2 - c1) - (c1 - c0)).cwiseAbs().maxCoeff() <= 1e-13);
}

TEST_CASE("finite_grad basics and finite differences") {
  const FeatureBasis basis =
      sample_basis(KernelSpec{KernelFamily::Gaussian, 1.5, 1.0}, 60, 2, 20);
  FiniteModel model = fit_finite_batch(random_points(100, 2, 21), basis, 1e-2);

  {
    FiniteModel zero = model;
    zero.theta.setZero();
    Rng rng(22);
    CHECK(finite_grad(zero, rng.normal_vec(2)).norm() == 0.0);
  }

  Rng rng(23);
  const Eigen::VectorXd x = rng.normal_vec(2);
  const Eigen::VectorXd g = finite_grad(model, x);
  const double h = 1e-5;
  for (int l = 0; l < 2; ++l) {
    Eigen::VectorXd xp = x, xm = x;
    xp[l] += h;
    xm[l] -= h;
    const double fd =
        (finite_log_density(model, xp) - finite_log_density(model, xm)) / (2 * h);
    CHECK(std::abs(g[l] - fd) <= 1e-6);
  }

  // d = 1, m = 1 closed form
  FeatureBasis b1;
  b1.spec = KernelSpec{KernelFamily::Gaussian, 1.0, 1.0};
  b1.m = 1;
  b1.d = 1;
  b1.omegas.resize(1, 1);
  b1.omegas << 1.3;
  b1.offsets.resize(1);
  b1.offsets << 0.4;
  b1.omega_sq_sum = b1.omegas.rowwise().squaredNorm();
  FiniteModel m1 = make_finite_model(b1, 1.0);
  m1.theta.resize(1);
  m1.theta << 0.7;
  Eigen::VectorXd xv(1);
  xv << 0.2;
  const double expect = 0.7 * (-std::sqrt(2.0) * std::sin(1.3 * 0.2 + 0.4) * 1.3);
  CHECK(finite_grad(m1, xv)[0] == Catch::Approx(expect).epsilon(1e-14));
}

TEST_CASE("PSD and regularization-path invariants") {
  const Eigen::MatrixXd Z = random_points(40, 2, 24);
  const LiteSystem sys = assemble_lite_system(Z, 2.0);
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sys.C);
  CHECK(eig.eigenvalues().minCoeff() >= -40 * 1e-12 * sys.C.norm());

  const FeatureBasis basis =
      sample_basis(KernelSpec{KernelFamily::Gaussian, 2.0, 1.0}, 30, 2, 25);
  FiniteModel fm = make_finite_model(basis, 1e-2);
  for (Eigen::Index i = 0; i < Z.rows(); ++i) finite_absorb(fm, Z.row(i));
  const Eigen::MatrixXd C_full = fm.C_sum.selfadjointView<Eigen::Lower>();
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig2(C_full);
  CHECK(eig2.eigenvalues().minCoeff() >= -30 * 1e-12 * C_full.norm());

  // ||alpha_lambda|| and ||theta_lambda|| are non-increasing along a lambda ladder
  double prev_alpha = std::numeric_limits<double>::infinity();
  double prev_theta = std::numeric_limits<double>::infinity();
  for (const double lam : {1e-4, 1e-2, 1e0, 1e2}) {
    const double na = fit_lite(Z, 2.0, lam).alpha.norm();
    CHECK(na <= prev_alpha * (1.0 + 1e-12));
    prev_alpha = na;
    FiniteModel m = fm;
    m.lambda = lam;
    m.C_chol.resize(0, 0);
    finite_refresh(m);
    const double nt = m.theta.norm();
    CHECK(nt <= prev_theta * (1.0 + 1e-12));
    prev_theta = nt;
  }
}

TEST_CASE("fitted objective does not exceed the zero model's") {
  const Eigen::MatrixXd Z = random_points(60, 2, 26);
  const LiteModel lite = fit_lite(Z, 2.0, 1e-2);
  CHECK(lite_objective(lite, Z) <= 0.0 + 1e-12);  // zero model scores exactly 0

  const FeatureBasis basis =
      sample_basis(KernelSpec{KernelFamily::Gaussian, 2.0, 1.0}, 40, 2, 27);
  const FiniteModel fin = fit_finite_batch(Z, basis, 1e-2);
  CHECK(finite_objective(fin, Z) <= 0.0 + 1e-12);
}

TEST_CASE("cross_validate contract") {
  const Eigen::MatrixXd X = random_points(120, 1, 28);

  const CVResult single = cross_validate(X, {3.0}, {0.5}, 4, CvEstimator::lite(), 1);
  CHECK(single.sigma == 3.0);
  CHECK(single.lambda == 0.5);

  const std::vector<double> sigmas{0.5, 2.0, 8.0, 32.0};
  const std::vector<double> lambdas{1e-3, 1e-1};
  const CVResult cv = cross_validate(X, sigmas, lambdas, 5, CvEstimator::lite(), 2);
  double best = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < cv.fold_scores.rows(); ++i)
    for (Eigen::Index j = 0; j < cv.fold_scores.cols(); ++j)
      best = std::min(best, cv.fold_scores(i, j));
  const std::size_t si =
      std::find(sigmas.begin(), sigmas.end(), cv.sigma) - sigmas.begin();
  const std::size_t li =
      std::find(lambdas.begin(), lambdas.end(), cv.lambda) - lambdas.begin();
  CHECK(cv.fold_scores(si, li) == best);

  // selected model is no worse than the grid-worst model on fresh data
  Eigen::Index wi = 0, wj = 0;
  cv.fold_scores.maxCoeff(&wi, &wj);
  const LiteModel chosen = fit_lite(X, cv.sigma, cv.lambda);
  const LiteModel worst = fit_lite(X, sigmas[wi], lambdas[wj]);
  const auto mse = [&](const LiteModel& m) {
    return std_normal_grad_mse_1d([&](double x) {
      Eigen::VectorXd v(1);
      v << x;
      return lite_grad(m, v)[0];
    });
  };
  CHECK(mse(chosen) <= mse(worst) + 1e-12);

  CHECK_THROWS_AS(cross_validate(X, {}, lambdas, 5, CvEstimator::lite(), 1), InputError);
  CHECK_THROWS_AS(cross_validate(X.topRows(3), sigmas, lambdas, 5, CvEstimator::lite(), 1),
                  InputError);
}

TEST_CASE("cross_validate drives the finite estimator too") {
  const Eigen::MatrixXd X = random_points(2000, 1, 30);
  const CVResult cv = cross_validate(X, {64.0, 128.0, 256.0}, {1e-6, 1e-5}, 5,
                                     CvEstimator::finite(300), 31);
  const FeatureBasis basis = sample_basis(
      KernelSpec{KernelFamily::Gaussian, cv.sigma, 1.0}, 300, 1, 32);
  const FiniteModel model = fit_finite_batch(X, basis, cv.lambda);
  const double mse = std_normal_grad_mse_1d([&](double x) {
    Eigen::VectorXd v(1);
    v << x;
    return finite_grad(model, v)[0];
  });
  CHECK(mse <= 0.05);
}
