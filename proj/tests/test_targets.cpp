#include "doctest.h"

#include <cmath>
#include <memory>
#include <vector>

#include <Eigen/Dense>

#include "ipsampler/bimodal.hpp"
#include "ipsampler/gaussian_model.hpp"
#include "ipsampler/gradient_check.hpp"
#include "ipsampler/grid_sampler.hpp"
#include "ipsampler/mathutil.hpp"
#include "ipsampler/stats.hpp"
#include "ipsampler/transforms.hpp"

using namespace ips;

namespace {

std::vector<Eigen::VectorXd> random_points(int count, int dim, double scale,
                                           CounterRng& rng) {
  std::vector<Eigen::VectorXd> pts;
  pts.reserve(count);
  for (int i = 0; i < count; ++i) pts.push_back(scale * rng.normal_vector(dim));
  return pts;
}

double gaussian_log_pdf(const Eigen::VectorXd& x, const Eigen::VectorXd& mean,
                        const Eigen::MatrixXd& cov) {
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  Eigen::VectorXd d = x - mean;
  Eigen::VectorXd w = llt.matrixL().solve(d);
  double logdet = 0.0;
  for (Eigen::Index i = 0; i < cov.rows(); ++i)
    logdet += std::log(llt.matrixL()(i, i));
  return -0.5 * w.squaredNorm() - logdet - 0.5 * x.size() * std::log(2.0 * kPi);
}

}  // namespace

TEST_CASE("squared exponential kernel is SPD across parameter ranges") {
  Eigen::VectorXd grid(40);
  for (int i = 0; i < 40; ++i) grid[i] = i / 39.0;
  for (double tau : {0.05, 0.3, 3.0}) {
    for (double delta : {1e-6, 1e-3}) {
      Eigen::MatrixXd K = squared_exponential_kernel(grid, tau, delta);
      CHECK((K - K.transpose()).cwiseAbs().maxCoeff() == 0.0);
      CHECK(K(0, 0) == doctest::Approx(1.0 + delta));
      Eigen::LLT<Eigen::MatrixXd> llt(K);
      CHECK(llt.info() == Eigen::Success);
    }
  }
  CHECK_THROWS_AS(squared_exponential_kernel(grid, 0.0, 1e-3), InvalidArgumentError);
  CHECK_THROWS_AS(squared_exponential_kernel(grid, 0.3, 0.0), InvalidArgumentError);
}

TEST_CASE("gaussian problem gradients match finite differences") {
  auto prob = GaussianLinearProblem::smoothing_demo(8, 16, 0.3, 1e-3, 0.1, 99);
  CounterRng rng(1, {0});
  auto pts = random_points(100, 16, 1.0, rng);
  GradientCheckResult res = check_gradient(*prob, pts);
  CHECK(res.pass);
  CHECK(res.max_rel_error < 1e-5);
}

TEST_CASE("gaussian posterior density is consistent with the closed form moments") {
  auto prob = GaussianLinearProblem::smoothing_demo(5, 9, 0.25, 1e-3, 0.2, 7);
  GaussianPosterior post = prob->posterior();
  // Log density differences computed from prior*likelihood must equal those of
  // N(mean, covariance); this checks mean and covariance together.
  CounterRng rng(2, {0});
  Eigen::VectorXd x0 = post.mean;
  double base_model = prob->log_density(x0);
  double base_gauss = gaussian_log_pdf(x0, post.mean, post.covariance);
  for (int t = 0; t < 20; ++t) {
    Eigen::VectorXd x = post.mean + rng.normal_vector(9);
    double d_model = prob->log_density(x) - base_model;
    double d_gauss = gaussian_log_pdf(x, post.mean, post.covariance) - base_gauss;
    CHECK(d_model == doctest::Approx(d_gauss).epsilon(1e-8));
  }
}

TEST_CASE("exact posterior sampler reproduces the posterior covariance") {
  auto prob = GaussianLinearProblem::smoothing_demo(4, 6, 0.3, 1e-3, 0.15, 31);
  GaussianPosterior post = prob->posterior();
  CounterRng rng(3, {0});
  const int S = 100000;
  Eigen::MatrixXd draws(S, 6);
  for (int s = 0; s < S; ++s) draws.row(s) = post.sample(rng).transpose();
  Eigen::RowVectorXd mean = draws.colwise().mean();
  Eigen::MatrixXd X = draws.rowwise() - mean;
  Eigen::MatrixXd emp = (X.transpose() * X) / (S - 1.0);
  for (int i = 0; i < 6; ++i) {
    for (int j = 0; j <= i; ++j) {
      double se = std::sqrt((post.covariance(i, i) * post.covariance(j, j) +
                             post.covariance(i, j) * post.covariance(i, j)) /
                            S);
      CHECK(std::abs(emp(i, j) - post.covariance(i, j)) < 5.0 * se);
    }
  }
}

TEST_CASE("low rank smoothing posterior is badly conditioned") {
  auto prob = GaussianLinearProblem::smoothing_demo(20, 40, 0.3, 1e-3, 0.01, 1);
  GaussianPosterior post = prob->posterior();
  double k = kappa(post.factor);
  CHECK(k > 10.0 * std::pow(40.0, 0.25));
}

TEST_CASE("prior whitening helps for long correlation lengths") {
  auto prob = GaussianLinearProblem::smoothing_demo(20, 40, 0.3, 1e-3, 1.0, 1);
  double k_x = kappa(prob->posterior().factor);
  double k_z = kappa(cholesky_factor(prob->reparameterized_covariance()).factor);
  CHECK(k_z < k_x);
}

TEST_CASE("reparameterized density equals the pushforward of the posterior") {
  auto prob = GaussianLinearProblem::smoothing_demo(4, 7, 0.3, 1e-3, 0.3, 5);
  auto rep = prob->reparameterized_by_prior();
  // The whitened density must be N(L^{-1} m, reparameterized covariance) up to
  // a constant; check log density differences and the gradient.
  GaussianPosterior post = prob->posterior();
  Eigen::MatrixXd cz = prob->reparameterized_covariance();
  Eigen::VectorXd mz = prob->prior_factor().solve(post.mean);
  CounterRng rng(4, {0});
  double base_model = rep->log_density(mz);
  double base_gauss = gaussian_log_pdf(mz, mz, cz);
  for (int t = 0; t < 10; ++t) {
    Eigen::VectorXd z = mz + rng.normal_vector(7);
    double d_model = rep->log_density(z) - base_model;
    double d_gauss = gaussian_log_pdf(z, mz, cz) - base_gauss;
    CHECK(d_model == doctest::Approx(d_gauss).epsilon(1e-8));
  }
  auto pts = random_points(30, 7, 1.0, rng);
  CHECK(check_gradient(*rep, pts).pass);
}

TEST_CASE("conjugate model: tempering modes agree at T = 1") {
  CounterRng rng(5, {0});
  Eigen::MatrixXd B(3, 3);
  B.setZero();
  B.diagonal() << 0.8, 0.5, 0.3;
  B(1, 0) = 0.2;
  Eigen::MatrixXd Gamma = B * B.transpose();
  Eigen::VectorXd mu(3);
  mu << 1.0, -0.5, 0.2;
  ConjugateGaussianModel model(mu, Gamma);
  auto a = model.tempered_moments(1.0, TemperingMode::kPosterior);
  auto b = model.tempered_moments(1.0, TemperingMode::kLikelihood);
  CHECK((a.mean - b.mean).norm() < 1e-12);
  CHECK((a.covariance - b.covariance).norm() < 1e-12);
  // T = inf in likelihood mode recovers the prior.
  auto c = model.tempered_moments(std::numeric_limits<double>::infinity(),
                                  TemperingMode::kLikelihood);
  CHECK(c.mean.norm() == 0.0);
  CHECK((c.covariance - Eigen::MatrixXd::Identity(3, 3)).norm() == 0.0);
  CHECK_THROWS_AS(model.tempered_moments(std::numeric_limits<double>::infinity(),
                                         TemperingMode::kPosterior),
                  InvalidArgumentError);
}

TEST_CASE("conjugate model: exact tempered draws match the tempered covariance") {
  Eigen::MatrixXd Gamma = Eigen::Vector2d(0.5, 2.0).asDiagonal();
  Eigen::VectorXd mu(2);
  mu << 2.0, -1.0;
  ConjugateGaussianModel model(mu, Gamma);
  CounterRng rng(6, {0});
  for (TemperingMode mode : {TemperingMode::kPosterior, TemperingMode::kLikelihood}) {
    auto mom = model.tempered_moments(4.0, mode);
    const int S = 40000;
    Eigen::MatrixXd draws(S, 2);
    for (int s = 0; s < S; ++s)
      draws.row(s) = model.sample_tempered(4.0, mode, rng).transpose();
    Eigen::RowVectorXd mean = draws.colwise().mean();
    Eigen::MatrixXd X = draws.rowwise() - mean;
    Eigen::MatrixXd emp = (X.transpose() * X) / (S - 1.0);
    for (int i = 0; i < 2; ++i) {
      CHECK(std::abs(mean[i] - mom.mean[i]) <
            5.0 * std::sqrt(mom.covariance(i, i) / S));
      for (int j = 0; j <= i; ++j) {
        double se = std::sqrt((mom.covariance(i, i) * mom.covariance(j, j) +
                               mom.covariance(i, j) * mom.covariance(i, j)) /
                              S);
        CHECK(std::abs(emp(i, j) - mom.covariance(i, j)) < 5.0 * se);
      }
    }
  }
}

TEST_CASE("analytic potential moments satisfy the specific heat identity") {
  // Var[q(X(T))] = -T^2 d/dT E[q(X(T))] for both tempering modes. Analytic
  // moments with centered differences in T, so this validates the formulas
  // before any sampling enters.
  Eigen::MatrixXd B(4, 4);
  B.setZero();
  B.diagonal() << 1.0, 0.7, 0.4, 0.2;
  B(2, 0) = 0.3;
  B(3, 1) = -0.1;
  Eigen::MatrixXd Gamma = B * B.transpose();
  CounterRng rng(7, {0});
  Eigen::VectorXd mu = rng.normal_vector(4);
  ConjugateGaussianModel model(mu, Gamma);
  for (TemperingMode mode : {TemperingMode::kPosterior, TemperingMode::kLikelihood}) {
    for (double T : {1.0, 2.0, 5.0}) {
      double h = 1e-4 * T;
      double e_hi = model.expected_potential(model.tempered_moments(T + h, mode), mode);
      double e_lo = model.expected_potential(model.tempered_moments(T - h, mode), mode);
      double lhs = model.variance_potential(model.tempered_moments(T, mode), mode);
      double rhs = -T * T * (e_hi - e_lo) / (2.0 * h);
      CHECK(lhs == doctest::Approx(rhs).epsilon(1e-5));
    }
  }
}

TEST_CASE("bimodal problem: gradients, symmetry, tail stability") {
  BimodalMixtureProblem prob(10, 5, 0.25);
  CounterRng rng(8, {0});
  auto pts = random_points(100, 10, 1.2, rng);
  CHECK(check_gradient(prob, pts).pass);

  Eigen::VectorXd x = rng.normal_vector(10);
  CHECK(prob.log_density(x) == doctest::Approx(prob.log_density(-x)).epsilon(1e-12));

  Eigen::VectorXd far = Eigen::VectorXd::Constant(10, 1e3);
  LogDensityValue v = prob.eval(far);
  CHECK(std::isfinite(v.value));
  CHECK(v.gradient.allFinite());
}

TEST_CASE("grid inverse cdf reproduces a standard normal") {
  GridInverseCdf g([](double x) { return -0.5 * x * x; }, -9.0, 9.0);
  CHECK(g.quantile(0.5) == doctest::Approx(0.0).epsilon(1e-8));
  CHECK(g.quantile(0.975) == doctest::Approx(1.959963984540054).epsilon(1e-4));
  CounterRng rng(9, {0});
  std::vector<double> draws(20000);
  for (auto& d : draws) d = g.sample(rng);
  CHECK(ks_test_pvalue(draws, [](double x) { return normal_cdf(x); }) > 0.01);
}

TEST_CASE("coordinate sampler splits sign mass evenly and respects tempering") {
  BimodalCoordinateSampler cold(6, 3, 0.5, 1.0, TemperingMode::kLikelihood);
  CounterRng rng(10, {0});
  int pos = 0;
  const int S = 20000;
  double mean_abs = 0.0;
  for (int s = 0; s < S; ++s) {
    Eigen::VectorXd x = cold.sample(rng);
    if (x[0] > 0) ++pos;
    mean_abs += std::abs(x[0]);
  }
  mean_abs /= S;
  double frac = static_cast<double>(pos) / S;
  CHECK(std::abs(frac - 0.5) < 0.02);
  CHECK(mean_abs > 0.5);  // mass concentrated away from the origin

  // Unconstrained coordinates are prior draws.
  std::vector<double> tail(20000);
  for (auto& d : tail) d = cold.sample(rng)[5];
  CHECK(ks_test_pvalue(tail, [](double x) { return normal_cdf(x); }) > 0.01);
}

TEST_CASE("tempered largest scale closed forms") {
  // Likelihood tempering at T = 1/sigma^2 halves the constrained variance.
  double s = tempered_bimodal_largest_scale(0.1, 100.0, TemperingMode::kLikelihood, 5, 5);
  CHECK(s == doctest::Approx(std::sqrt(0.5)).epsilon(1e-12));
  // With free coordinates the prior scale 1 dominates.
  CHECK(tempered_bimodal_largest_scale(0.1, 100.0, TemperingMode::kLikelihood, 6, 5) ==
        doctest::Approx(1.0).epsilon(1e-12));
  // Posterior tempering inflates free coordinates to sqrt(T).
  CHECK(tempered_bimodal_largest_scale(0.1, 9.0, TemperingMode::kPosterior, 6, 5) ==
        doctest::Approx(3.0).epsilon(1e-12));
}

TEST_CASE("escape barrier oracle matches the asymptotic expansion") {
  for (double sigma : {0.2, 0.3, 0.4}) {
    double s2 = sigma * sigma;
    double expansion = std::log(2.0) - 0.5 / s2 + 0.5 / (1.0 + s2);
    CHECK(bimodal_escape_log_ratio(sigma) == doctest::Approx(expansion).epsilon(1e-3));
  }
  // The barrier steepens rapidly as sigma shrinks.
  CHECK(bimodal_escape_log_ratio(0.1) < bimodal_escape_log_ratio(0.3) - 30.0);
}

TEST_CASE("pushforward through the identity is the base density") {
  auto base = std::make_shared<StandardNormalTarget>(3);
  auto map = std::make_shared<LinearMap>(Eigen::MatrixXd::Identity(3, 3));
  PushforwardTarget push(base, map);
  CounterRng rng(11, {0});
  for (int t = 0; t < 5; ++t) {
    Eigen::VectorXd z = rng.normal_vector(3);
    LogDensityValue a = push.eval(z);
    LogDensityValue b = base->eval(z);
    CHECK(a.value == doctest::Approx(b.value).epsilon(1e-14));
    CHECK((a.gradient - b.gradient).norm() < 1e-14);
  }
}

TEST_CASE("linear map rejects singular matrices at construction") {
  Eigen::MatrixXd S(2, 2);
  S << 1.0, 2.0, 2.0, 4.0;
  CHECK_THROWS_AS(LinearMap{S}, SingularMatrixError);
}

TEST_CASE("coordinatewise exp pushforward gives the lognormal in closed form") {
  auto base = std::make_shared<StandardNormalTarget>(2);
  auto expmap = std::make_shared<CoordinatewiseMap>(
      2, [](double z) { return std::exp(z); }, [](double z) { return std::exp(z); },
      [](double z) { return std::exp(z); });
  PushforwardTarget push(base, expmap);
  CounterRng rng(12, {0});
  for (int t = 0; t < 5; ++t) {
    Eigen::VectorXd z = rng.normal_vector(2);
    // log g(z) = sum_i [ -exp(2 z_i)/2 + z_i ] up to the base normalizer.
    double expect = 0.0;
    for (int i = 0; i < 2; ++i) expect += -0.5 * std::exp(2.0 * z[i]) + z[i];
    CHECK(push.eval(z).value == doctest::Approx(expect).epsilon(1e-12));
  }
  auto pts = random_points(40, 2, 0.7, rng);
  CHECK(check_gradient(push, pts).pass);
}

TEST_CASE("coordinatewise map reports a vanishing Jacobian at the point") {
  CoordinatewiseMap cube(
      1, [](double z) { return z * z * z; }, [](double z) { return 3.0 * z * z; },
      [](double z) { return 6.0 * z; });
  Eigen::VectorXd zero = Eigen::VectorXd::Zero(1);
  CHECK_THROWS_AS(cube.log_abs_det_jacobian(zero), SingularMatrixError);
  Eigen::VectorXd ok = Eigen::VectorXd::Constant(1, 0.5);
  CHECK(cube.log_abs_det_jacobian(ok) == doctest::Approx(std::log(0.75)).epsilon(1e-12));
}
