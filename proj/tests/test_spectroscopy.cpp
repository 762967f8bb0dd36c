#include <cmath>
#include <memory>
#include <sstream>
#include <vector>

#include <Eigen/Dense>

#include "doctest.h"
#include "ipsampler/gradient_check.hpp"
#include "ipsampler/mathutil.hpp"
#include "ipsampler/remc.hpp"
#include "ipsampler/rng.hpp"
#include "ipsampler/spectroscopy.hpp"

using namespace ips;

namespace {

// Small instances keep the forward model cheap without changing its shape.
SpectroscopyConfig small_shell() {
  SpectroscopyConfig c;
  c.geometry = SpectroscopyGeometry::kShell;
  c.grid_size = 16;
  c.chord_count = 6;
  c.radial_knots = 8;
  c.frequency_count = 21;
  return c;
}

SpectroscopyConfig small_slab() {
  SpectroscopyConfig c;
  c.geometry = SpectroscopyGeometry::kSlab;
  c.grid_size = 16;
  c.chord_count = 6;
  c.frequency_count = 21;
  return c;
}

std::vector<Eigen::VectorXd> prior_points(const SpectroscopyProblem& problem, int count,
                                          std::uint64_t seed) {
  CounterRng rng(seed, {9});
  std::vector<Eigen::VectorXd> out;
  for (int i = 0; i < count; ++i) out.push_back(rng.normal_vector(problem.dimension()));
  return out;
}

}  // namespace

TEST_CASE("chord weights integrate to the chord length through the domain") {
  SpectroscopyProblem problem{SpectroscopyConfig{}};
  const Eigen::MatrixXd weights = problem.integration_matrix();
  REQUIRE(weights.rows() == 20);
  CHECK(weights.minCoeff() >= 0.0);
  for (int m = 0; m < weights.rows(); ++m) {
    CHECK(weights.row(m).sum() == doctest::Approx(2.0).epsilon(1e-6));
  }

  // Integrating the indicator of a centered disk reproduces the classic
  // chord-length law 2 sqrt(R^2 - b^2) up to grid resolution.
  const double radius = 0.8;
  const int grid = problem.config().grid_size;
  Eigen::VectorXd disk(grid * grid);
  for (int iy = 0; iy < grid; ++iy) {
    for (int ix = 0; ix < grid; ++ix) {
      const double x = -1.0 + (ix + 0.5) * 2.0 / grid;
      const double y = -1.0 + (iy + 0.5) * 2.0 / grid;
      disk[iy * grid + ix] = x * x + y * y < radius * radius ? 1.0 : 0.0;
    }
  }
  const Eigen::VectorXd integrals = problem.integrate_image(disk);
  for (int m = 0; m < problem.chord_count(); ++m) {
    // The discretized chord runs along the center of the grid row holding its
    // offset, so that is the height the chord-length law applies at.
    const double b = problem.impact_parameters()[m];
    const double cell = 2.0 / grid;
    const double snapped = -1.0 + (std::floor((b + 1.0) / cell) + 0.5) * cell;
    const double expected = snapped * snapped < radius * radius
                                ? 2.0 * std::sqrt(radius * radius - snapped * snapped)
                                : 0.0;
    CHECK(std::abs(integrals[m] - expected) < 2.5 * cell);
  }
}

TEST_CASE("latent dimensions follow the parameterization") {
  CHECK(SpectroscopyProblem{small_shell()}.dimension() == 3 * 8 + 2);
  CHECK(SpectroscopyProblem{small_slab()}.dimension() == 3 * 6);

  SpectroscopyConfig bad = small_shell();
  bad.frequency_count = 1;
  CHECK_THROWS_AS(SpectroscopyProblem{bad}, InvalidArgumentError);
  bad = small_shell();
  bad.noise_floor = 0.0;
  CHECK_THROWS_AS(SpectroscopyProblem{bad}, InvalidArgumentError);
  bad = small_shell();
  bad.impact_parameters = {0.1, 0.1, 0.2, 0.3, 0.4, 0.5};
  CHECK_THROWS_AS(SpectroscopyProblem{bad}, InvalidArgumentError);
}

TEST_CASE("vanishing amplitude drives all predictions to zero") {
  SpectroscopyProblem problem{small_shell()};
  Eigen::VectorXd x = Eigen::VectorXd::Zero(problem.dimension());
  x.segment(0, 8).setConstant(-8.0);  // amplitude latent far into softplus tail
  const Eigen::MatrixXd signal = problem.predict(x);
  CHECK(signal.cwiseAbs().maxCoeff() < 1e-3);
  // The same configuration with neutral amplitude produces real signal.
  Eigen::VectorXd neutral = Eigen::VectorXd::Zero(problem.dimension());
  CHECK(problem.predict(neutral).cwiseAbs().maxCoeff() > 1.0);
}

TEST_CASE("a resting species peaks exactly at the rest-frame line center") {
  SpectroscopyProblem problem{small_shell()};  // 21 frequencies, middle is nu0 = 1
  const Eigen::MatrixXd signal = problem.constant_species_signal(0.7, 4e-4, 0.0);
  Eigen::Index peak_row = 0;
  signal.col(0).maxCoeff(&peak_row);
  CHECK(problem.frequencies()[peak_row] == doctest::Approx(1.0));
  // Doppler blueshifted species peaks at a higher measured frequency.
  const Eigen::MatrixXd moving = problem.constant_species_signal(0.7, 4e-4, 0.03);
  Eigen::Index moved_row = 0;
  moving.col(0).maxCoeff(&moved_row);
  CHECK(problem.frequencies()[moved_row] > 1.0);
  CHECK_THROWS_AS(problem.constant_species_signal(0.7, 4e-4, 1.0), UnphysicalVelocityError);
}

TEST_CASE("with no proportional noise the likelihood is the fixed-variance Gaussian") {
  SpectroscopyConfig config = small_slab();
  config.noise_proportional = 0.0;
  SpectroscopyProblem problem{config};
  CounterRng rng(41, {3});
  const Eigen::VectorXd x_true = rng.normal_vector(problem.dimension());
  const Eigen::MatrixXd y = simulate_measurements(problem, x_true, 7);
  const Eigen::VectorXd x = rng.normal_vector(problem.dimension());

  const auto eval = problem.log_likelihood(x, y);
  const Eigen::MatrixXd predicted = problem.predict(x);
  CHECK((eval.predicted - predicted).cwiseAbs().maxCoeff() == 0.0);
  const double sigma2 = config.noise_floor * config.noise_floor;
  double expected = 0.0;
  for (Eigen::Index j = 0; j < y.rows(); ++j) {
    for (Eigen::Index m = 0; m < y.cols(); ++m) {
      const double r = y(j, m) - predicted(j, m);
      expected += -0.5 * r * r / sigma2 - 0.5 * std::log(2.0 * kPi * sigma2);
    }
  }
  CHECK(eval.value == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("analytic gradients match finite differences in both geometries") {
  for (const SpectroscopyConfig& config : {small_shell(), small_slab()}) {
    auto problem = std::make_shared<SpectroscopyProblem>(config);
    CounterRng rng(5, {11});
    const Eigen::MatrixXd y =
        simulate_measurements(*problem, rng.normal_vector(problem->dimension()), 19);
    SpectroscopyTarget target(problem, y);
    const auto points = prior_points(*problem, 20, 23);
    const GradientCheckResult res = check_gradient(target, points);
    CHECK(res.pass);
    CHECK(res.max_rel_error < 1e-5);
  }
}

TEST_CASE("relabeling chords together with their data leaves the likelihood alone") {
  SpectroscopyConfig base = small_shell();
  base.impact_parameters = {-0.7, -0.35, -0.1, 0.2, 0.45, 0.8};
  SpectroscopyConfig permuted = base;
  const std::vector<int> order{3, 0, 5, 1, 4, 2};
  permuted.impact_parameters.clear();
  for (int m : order) permuted.impact_parameters.push_back(base.impact_parameters[m]);

  SpectroscopyProblem problem_a{base}, problem_b{permuted};
  CounterRng rng(77, {2});
  const Eigen::VectorXd x = rng.normal_vector(problem_a.dimension());
  const Eigen::MatrixXd y = simulate_measurements(problem_a, x, 3);
  Eigen::MatrixXd y_permuted(y.rows(), y.cols());
  for (int m = 0; m < y.cols(); ++m) y_permuted.col(m) = y.col(order[m]);

  const double ll_a = problem_a.log_likelihood(x, y).value;
  const double ll_b = problem_b.log_likelihood(x, y_permuted).value;
  CHECK(ll_b == doctest::Approx(ll_a).epsilon(1e-10));
}

TEST_CASE("superluminal velocities are refused") {
  SpectroscopyConfig config = small_slab();
  config.velocity_scale = 1.0;
  SpectroscopyProblem problem{config};
  Eigen::VectorXd x = Eigen::VectorXd::Zero(problem.dimension());
  x.segment(12, 6).setConstant(5.0);  // velocity latent block
  CHECK_THROWS_AS(problem.predict(x), UnphysicalVelocityError);
}

TEST_CASE("measurement CSVs round-trip bit for bit") {
  SpectroscopyProblem problem{small_slab()};
  CounterRng rng(15, {4});
  const Eigen::MatrixXd y =
      simulate_measurements(problem, rng.normal_vector(problem.dimension()), 99);
  std::ostringstream os;
  write_measurements_csv(y, os);
  std::istringstream is(os.str());
  const Eigen::MatrixXd back = read_measurements_csv(is);
  REQUIRE(back.rows() == y.rows());
  REQUIRE(back.cols() == y.cols());
  CHECK((back - y).cwiseAbs().maxCoeff() == 0.0);

  std::istringstream bad("frequency_index,chord_index,value\n0,0,1.0\n");
  CHECK_THROWS_AS(read_measurements_csv(bad), InvalidArgumentError);

  // Same seed, same data; a different seed must move the noise.
  const Eigen::VectorXd x_true = rng.normal_vector(problem.dimension());
  CHECK((simulate_measurements(problem, x_true, 5) -
         simulate_measurements(problem, x_true, 5))
            .cwiseAbs()
            .maxCoeff() == 0.0);
  CHECK((simulate_measurements(problem, x_true, 5) -
         simulate_measurements(problem, x_true, 6))
            .cwiseAbs()
            .maxCoeff() > 0.0);
}

TEST_CASE("two-peak data shows two resolved peaks above the noise floor") {
  SpectroscopyConfig config = small_slab();
  config.frequency_count = 81;
  SpectroscopyProblem problem{config};
  const double v0 = 0.03;
  const Eigen::MatrixXd y = two_peak_measurements(problem, v0, 12);
  const Eigen::VectorXd mean_spectrum = y.rowwise().mean();

  // Strongest channels sit near the Doppler-shifted centers nu0 / (1 -+ v0),
  // and the midpoint between them dips well below the peaks.
  Eigen::Index up = 0, down = 0;
  const int half = static_cast<int>(mean_spectrum.size()) / 2;
  mean_spectrum.head(half).maxCoeff(&down);
  mean_spectrum.tail(mean_spectrum.size() - half).maxCoeff(&up);
  up += half;
  const double nu_down = problem.frequencies()[down];
  const double nu_up = problem.frequencies()[up];
  CHECK(std::abs(nu_down - 1.0 / (1.0 + v0)) < 0.01);
  CHECK(std::abs(nu_up - 1.0 / (1.0 - v0)) < 0.01);
  const double peak_level = std::min(mean_spectrum[down], mean_spectrum[up]);
  CHECK(peak_level > 10.0 * config.noise_floor);
  CHECK(mean_spectrum[(down + up) / 2] < 0.6 * peak_level);
}

TEST_CASE("velocity mode sign tracks the emission-weighted flow direction") {
  SpectroscopyProblem problem{small_slab()};
  Eigen::VectorXd x = Eigen::VectorXd::Zero(problem.dimension());
  x.segment(12, 6).setConstant(1.0);
  CHECK(velocity_mode_sign(problem, x) == 1);
  x.segment(12, 6).setConstant(-1.0);
  CHECK(velocity_mode_sign(problem, x) == -1);
  x.segment(12, 6).setZero();
  CHECK(velocity_mode_sign(problem, x) == 0);
}

TEST_CASE("replica exchange hops between the Doppler modes of two-peak data") {
  SpectroscopyConfig config;
  config.geometry = SpectroscopyGeometry::kSlab;
  config.grid_size = 16;
  config.chord_count = 4;
  config.frequency_count = 16;
  config.noise_floor = 5.0;
  auto problem = std::make_shared<SpectroscopyProblem>(config);
  auto target = std::make_shared<SpectroscopyTarget>(problem,
                                                     two_peak_measurements(*problem, 0.03, 44));

  // Sign flips happen freely above T of about 16 but must ride swaps down to
  // the target rung, and that transport time grows like the square of the
  // ladder length. A short ladder over a modest data set keeps the round trip
  // well inside the sampling window; schedule adaptation evens out the edge
  // rates, which a bare geometric ladder leaves badly unbalanced at the cold
  // end.
  RemcOptions opts;
  opts.temperatures.clear();
  const int rungs = 10;
  for (int k = 0; k < rungs; ++k)
    opts.temperatures.push_back(std::pow(64.0, k / double(rungs - 1)));
  opts.copies = 2;
  opts.seed = 19;
  opts.adapt_sweeps = 3;
  opts.rounds_per_sweep = 150;
  opts.adapt_temperatures = true;
  opts.threads = 4;
  const RemcResult res = run_remc(target, opts, 800);

  int positive = 0, negative = 0;
  for (int c = 0; c < res.samples.chain_count(); ++c) {
    const auto chain = res.samples.chain(c);
    for (Eigen::Index s = 0; s < chain.rows(); ++s) {
      const int sign = velocity_mode_sign(*problem, chain.row(s).transpose());
      positive += sign > 0;
      negative += sign < 0;
    }
  }
  const int total = positive + negative;
  REQUIRE(total > 0);
  CHECK(positive > total / 10);
  CHECK(negative > total / 10);
}
