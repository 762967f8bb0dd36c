#include "doctest.h"

#include <cmath>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SVD>

#include "ipsampler/rng.hpp"
#include "ipsampler/spectral.hpp"
#include "ipsampler/stats.hpp"

using namespace ips;

namespace {

Eigen::MatrixXd random_matrix(int n, CounterRng& rng, double scale = 1.0) {
  Eigen::MatrixXd A(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) A(i, j) = scale * rng.normal();
  return A;
}

// Independent oracle: singular values via Jacobi SVD, not via A^T A.
Eigen::VectorXd svd_singular_values(const Eigen::MatrixXd& A) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(A);
  return svd.singularValues();
}

double kappa_oracle(const Eigen::MatrixXd& L) {
  Eigen::VectorXd sv = svd_singular_values(L);
  double acc = 0.0;
  for (int i = 0; i < sv.size(); ++i) acc += std::pow(sv[0] / sv[i], 4.0);
  return std::pow(acc, 0.25);
}

}  // namespace

TEST_CASE("schatten norm on a diagonal matrix matches the closed form") {
  Eigen::MatrixXd A = Eigen::Vector2d(3.0, 4.0).asDiagonal();
  // (3^4 + 4^4)^{1/4} = 337^{1/4}
  CHECK(schatten_norm(A, 4.0) == doctest::Approx(std::pow(337.0, 0.25)).epsilon(1e-12));
  CHECK(schatten_norm(A, 4.0) == doctest::Approx(4.284572294953817).epsilon(1e-9));
}

TEST_CASE("schatten norm agrees with the SVD oracle on random matrices") {
  CounterRng rng(101, {0});
  for (int trial = 0; trial < 30; ++trial) {
    int n = 2 + static_cast<int>(rng.uniform_index(10));
    Eigen::MatrixXd A = random_matrix(n, rng);
    Eigen::VectorXd sv = svd_singular_values(A);
    for (double k : {1.0, 2.0, 4.0, 7.5}) {
      double expect = 0.0;
      for (int i = 0; i < n; ++i) expect += std::pow(sv[i], k);
      expect = std::pow(expect, 1.0 / k);
      CHECK(schatten_norm(A, k) == doctest::Approx(expect).epsilon(1e-9));
    }
    // k = 2 is the Frobenius norm.
    CHECK(schatten_norm(A, 2.0) == doctest::Approx(A.norm()).epsilon(1e-10));
  }
}

TEST_CASE("schatten norm input validation") {
  Eigen::MatrixXd A = Eigen::MatrixXd::Identity(3, 3);
  CHECK_THROWS_AS(schatten_norm(A, 0.5), InvalidArgumentError);
  A(1, 1) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(schatten_norm(A, 2.0), InvalidArgumentError);
}

TEST_CASE("kappa of diag(2,1)") {
  Eigen::MatrixXd L = Eigen::Vector2d(2.0, 1.0).asDiagonal();
  double expect = 2.0 * std::pow(1.0 + 1.0 / 16.0, 0.25);
  CHECK(kappa(L) == doctest::Approx(expect).epsilon(1e-13));
}

TEST_CASE("kappa of the identity is exactly N^{1/4}") {
  Eigen::MatrixXd I = Eigen::MatrixXd::Identity(40, 40);
  CHECK(std::abs(kappa(I) - std::pow(40.0, 0.25)) < 1e-12);
}

TEST_CASE("kappa is scale invariant and matches the SVD oracle") {
  CounterRng rng(202, {0});
  for (int trial = 0; trial < 30; ++trial) {
    int n = 2 + static_cast<int>(rng.uniform_index(10));
    Eigen::MatrixXd L = random_matrix(n, rng) + 3.0 * Eigen::MatrixXd::Identity(n, n);
    double k1 = kappa(L);
    CHECK(k1 == doctest::Approx(kappa_oracle(L)).epsilon(1e-8));
    CHECK(kappa(Eigen::MatrixXd(2.5 * L)) == doctest::Approx(k1).epsilon(1e-10));
    CHECK(kappa(Eigen::MatrixXd(1e-3 * L)) == doctest::Approx(k1).epsilon(1e-10));
    // Floor: kappa >= N^{1/4}, equality only for equal singular values.
    CHECK(k1 >= std::pow(static_cast<double>(n), 0.25) * (1.0 - 1e-12));
  }
}

TEST_CASE("kappa rejects singular factors") {
  Eigen::MatrixXd L = Eigen::MatrixXd::Zero(3, 3);
  L(0, 0) = 1.0;
  L(1, 1) = 1.0;
  CHECK_THROWS_AS(kappa(L), SingularMatrixError);
}

TEST_CASE("cholesky of a small SPD matrix is exact") {
  Eigen::MatrixXd C(2, 2);
  C << 4.0, 2.0, 2.0, 5.0;
  CholeskyResult res = cholesky_factor(C);
  Eigen::MatrixXd expect(2, 2);
  expect << 2.0, 0.0, 1.0, 2.0;
  CHECK((res.factor.matrix() - expect).cwiseAbs().maxCoeff() < 1e-14);
  CHECK(res.jitter == 0.0);
  CHECK(res.escalations == 0);
  CHECK(res.factor.lower_triangular());
}

TEST_CASE("cholesky jitter rescues semidefinite matrices and is recorded") {
  // Rank-one PSD matrix, so plain Cholesky must fail and jitter must kick in.
  Eigen::VectorXd v(4);
  v << 1.0, -2.0, 0.5, 3.0;
  Eigen::MatrixXd C = v * v.transpose();
  CholeskyResult res = cholesky_factor(C);
  CHECK(res.jitter > 0.0);
  CHECK(res.escalations <= 8);
  Eigen::MatrixXd recon = res.factor.matrix() * res.factor.matrix().transpose();
  Eigen::MatrixXd target = C + res.jitter * Eigen::MatrixXd::Identity(4, 4);
  double rel = (recon - target).norm() / target.norm();
  CHECK(rel < 1e-8);
}

TEST_CASE("cholesky reports genuinely indefinite matrices with the worst eigenvalue") {
  Eigen::MatrixXd C = Eigen::Vector2d(1.0, -1e-3).asDiagonal();
  try {
    cholesky_factor(C);
    FAIL("expected NotPositiveDefiniteError");
  } catch (const NotPositiveDefiniteError& e) {
    CHECK(e.most_negative_eigenvalue() == doctest::Approx(-1e-3).epsilon(1e-9));
  }
  Eigen::MatrixXd asym(2, 2);
  asym << 1.0, 0.5, -0.5, 1.0;
  CHECK_THROWS_AS(cholesky_factor(asym), InvalidArgumentError);
}

TEST_CASE("sample covariance factor uses divisor S-1") {
  // Draws 0, 1, 2 in one dimension: mean 1, sample variance (1+0+1)/2 = 1.
  SampleMatrix draws(3, 1);
  draws << 0.0, 1.0, 2.0;
  SpectralFactor f = sample_covariance_factor(draws);
  CHECK(f.matrix()(0, 0) == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("sample covariance factor of ample standard normal draws is near identity") {
  CounterRng rng(303, {0});
  SampleMatrix draws(1000, 8);
  for (int s = 0; s < 1000; ++s)
    for (int j = 0; j < 8; ++j) draws(s, j) = rng.normal();
  SpectralFactor f = sample_covariance_factor(draws);
  const Eigen::VectorXd& sv = f.singular_values();
  CHECK(sv[0] < 1.25);
  CHECK(sv[sv.size() - 1] > 0.8);
}

TEST_CASE("sample covariance factor rejects degenerate inputs") {
  SampleMatrix too_few(3, 4);
  too_few.setRandom();
  CHECK_THROWS_AS(sample_covariance_factor(too_few), RankDeficiencyError);

  // Plenty of draws but all copies of two rows: rank 2 < N = 3.
  SampleMatrix collinear(12, 3);
  for (int s = 0; s < 12; ++s) {
    collinear.row(s) = (s % 2 == 0) ? Eigen::RowVector3d(1.0, 2.0, 3.0)
                                    : Eigen::RowVector3d(-1.0, 0.5, 2.0);
  }
  CHECK_THROWS_AS(sample_covariance_factor(collinear), RankDeficiencyError);
}

TEST_CASE("diagonal stddev factor and its chi-square scale concentration") {
  CounterRng rng(404, {0});
  // With S = 1000 the relative error of a standard deviation estimate is about
  // 1/sqrt(2S), so every entry should sit well inside [0.9, 1.1]. Repeat a few
  // trials to make the frequency statement meaningful.
  int trials = 50;
  int all_inside = 0;
  for (int t = 0; t < trials; ++t) {
    SampleMatrix draws(1000, 8);
    for (int s = 0; s < 1000; ++s)
      for (int j = 0; j < 8; ++j) draws(s, j) = rng.normal();
    SpectralFactor d = diagonal_stddev_factor(draws);
    bool inside = true;
    for (int j = 0; j < 8; ++j) {
      double v = d.matrix()(j, j);
      if (v < 0.9 || v > 1.1) inside = false;
    }
    if (inside) ++all_inside;
  }
  CHECK(all_inside >= trials - 1);  // > 0.99 probability per trial in theory
}

TEST_CASE("diagonal stddev factor flags constant dimensions") {
  SampleMatrix draws(10, 3);
  draws.setRandom();
  draws.col(1).setConstant(2.5);
  try {
    diagonal_stddev_factor(draws);
    FAIL("expected DegenerateDimensionError");
  } catch (const DegenerateDimensionError& e) {
    CHECK(e.dimension() == 1);
  }
}

TEST_CASE("inverse Wishart kappa asymptote") {
  // N = 64, omega = 4: 64^{1/4} * 1.25^{1/4} / (1 - 1/2) = 5.9811...
  double v = inverse_wishart_kappa_asymptote(64, 4.0);
  double oracle = std::pow(64.0, 0.25) * std::pow(1.25, 0.25) / 0.5;
  CHECK(v == doctest::Approx(oracle).epsilon(1e-13));
  CHECK(v == doctest::Approx(5.98).epsilon(2e-3));

  // Monotone decreasing in omega toward the N^{1/4} floor.
  double prev = inverse_wishart_kappa_asymptote(64, 1.5);
  for (double w : {2.0, 4.0, 10.0, 100.0, 1e4}) {
    double cur = inverse_wishart_kappa_asymptote(64, w);
    CHECK(cur < prev);
    prev = cur;
  }
  double inf = std::numeric_limits<double>::infinity();
  CHECK(inverse_wishart_kappa_asymptote(64, inf) ==
        doctest::Approx(std::pow(64.0, 0.25)).epsilon(1e-13));
  CHECK_THROWS_AS(inverse_wishart_kappa_asymptote(64, 1.0), InvalidArgumentError);
  CHECK_THROWS_AS(inverse_wishart_kappa_asymptote(64, 0.5), InvalidArgumentError);
}

TEST_CASE("kappa of a sample factor from ample draws approaches the floor") {
  CounterRng rng(505, {0});
  SampleMatrix draws(10000, 4);
  for (int s = 0; s < 10000; ++s)
    for (int j = 0; j < 4; ++j) draws(s, j) = rng.normal();
  double k = kappa(sample_covariance_factor(draws));
  double floor4 = std::pow(4.0, 0.25);
  CHECK(k >= floor4 * (1.0 - 1e-12));
  CHECK(k <= 1.1 * floor4);
}

TEST_CASE("preconditioned kappa distribution does not depend on the true covariance") {
  CounterRng rng1(606, {0}), rng2(606, {1});
  int N = 6, S = 40, trials = 400;
  std::vector<double> base = sample_kappa_after_preconditioning(N, S, trials, rng1);
  Eigen::VectorXd scales(N);
  for (int i = 0; i < N; ++i) scales[i] = std::sqrt(static_cast<double>(i + 1));
  Eigen::MatrixXd Ltrue = scales.asDiagonal();
  std::vector<double> other =
      sample_kappa_after_preconditioning(N, S, trials, rng2, &Ltrue);
  CHECK(ks_two_sample_pvalue(base, other) > 0.01);
  for (double k : base) CHECK(k >= std::pow(static_cast<double>(N), 0.25) * (1 - 1e-12));
}

TEST_CASE("power iteration matches the dense eigensolver") {
  Eigen::MatrixXd D = Eigen::Vector3d(3.0, 1.0, 0.2).asDiagonal();
  CHECK(largest_eigenvalue_power_iteration(D) == doctest::Approx(3.0).epsilon(1e-5));

  CounterRng rng(707, {0});
  for (int trial = 0; trial < 10; ++trial) {
    int n = 3 + static_cast<int>(rng.uniform_index(8));
    Eigen::MatrixXd A = random_matrix(n, rng);
    Eigen::MatrixXd C = A * A.transpose() + Eigen::MatrixXd::Identity(n, n);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(C);
    double expect = es.eigenvalues().maxCoeff();
    CHECK(largest_eigenvalue_power_iteration(C) == doctest::Approx(expect).epsilon(1e-4));
  }
}

TEST_CASE("pooled covariance removes per-chain means") {
  CounterRng rng(808, {0});
  // Two chains, same unit covariance, wildly different means. Pooling without
  // mean removal would inflate the top eigenvalue by the mean separation.
  SampleMatrix a(500, 3), b(500, 3);
  for (int s = 0; s < 500; ++s)
    for (int j = 0; j < 3; ++j) {
      a(s, j) = rng.normal() + 10.0;
      b(s, j) = rng.normal() - 10.0;
    }
  Eigen::MatrixXd C = pooled_covariance({a, b});
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(C);
  CHECK(es.eigenvalues().maxCoeff() < 1.5);
  CHECK(es.eigenvalues().minCoeff() > 0.6);
}
