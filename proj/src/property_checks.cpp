#include "ipsampler/property_checks.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <ostream>
#include <vector>

#include <Eigen/Dense>

#include "ipsampler/bimodal.hpp"
#include "ipsampler/diagnostics.hpp"
#include "ipsampler/errors.hpp"
#include "ipsampler/gaussian_model.hpp"
#include "ipsampler/gradient_check.hpp"
#include "ipsampler/remc.hpp"
#include "ipsampler/rng.hpp"
#include "ipsampler/spectral.hpp"
#include "ipsampler/spectroscopy.hpp"
#include "ipsampler/target.hpp"

namespace ips {

namespace {

constexpr double kSlack = 1e-9;  // relative headroom for exact inequalities

// Square matrix with normal entries inside band |i-j| <= half_width, zero
// outside, a diagonal boost for invertibility, then unit L2 rows. The Gram
// matrix AA^T of such a factor is exactly banded, which pins down the sparsity
// count K the bounds refer to.
Eigen::MatrixXd banded_unit_row_factor(int n, int half_width, CounterRng& rng) {
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = std::max(0, i - half_width); j <= std::min(n - 1, i + half_width); ++j) {
      a(i, j) = rng.normal();
    }
    a(i, i) += 2.0;
    a.row(i) /= a.row(i).norm();
  }
  return a;
}

int max_row_nonzeros(const Eigen::MatrixXd& m) {
  int k = 0;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    int row = 0;
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if (m(i, j) != 0.0) ++row;
    }
    k = std::max(k, row);
  }
  return k;
}

double spectral_norm_of(const Eigen::MatrixXd& m) {
  return m.jacobiSvd().singularValues()[0];
}

PropertyResult make_result(std::string name, int instances, int violations,
                           double allowed_rate, double statistic, double threshold) {
  PropertyResult r;
  r.name = std::move(name);
  r.instances = instances;
  r.violations = violations;
  r.allowed_violation_rate = allowed_rate;
  r.statistic = statistic;
  r.threshold = threshold;
  r.pass = violations <= static_cast<int>(allowed_rate * instances + 1e-9);
  return r;
}

// Random SPD covariance with heterogeneous scales, its lower Cholesky factor,
// and the standard-deviation diagonal.
struct FactorInstance {
  Eigen::MatrixXd C;
  Eigen::MatrixXd L;
  Eigen::VectorXd stddev;
};

FactorInstance random_spd_instance(int n, CounterRng& rng) {
  Eigen::MatrixXd x(n, 2 * n);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) x(i, j) = rng.normal();
  }
  Eigen::MatrixXd c = x * x.transpose() / (2.0 * n);
  c += 0.05 * Eigen::MatrixXd::Identity(n, n);
  Eigen::VectorXd scale(n);
  for (int i = 0; i < n; ++i) scale[i] = std::exp(rng.uniform(-1.5, 1.5));
  c = scale.asDiagonal() * c * scale.asDiagonal();
  FactorInstance inst;
  inst.C = c;
  inst.L = cholesky_factor(c).factor.matrix();
  inst.stddev = c.diagonal().cwiseSqrt();
  return inst;
}

FactorInstance banded_spd_instance(int n, int factor_half_width, CounterRng& rng) {
  Eigen::MatrixXd b = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = std::max(0, i - factor_half_width); j <= i; ++j) b(i, j) = rng.normal();
    b(i, i) += 1.5;
  }
  FactorInstance inst;
  inst.C = b * b.transpose();
  inst.L = cholesky_factor(inst.C).factor.matrix();
  inst.stddev = inst.C.diagonal().cwiseSqrt();
  return inst;
}

// Smallest kappa(G^{-1} L) seen over random diagonal candidates plus a greedy
// multiplicative refinement from the standard-deviation diagonal. This is an
// upper bound on the optimum, which is the direction that makes the
// near-optimality check harder, not easier.
double best_diagonal_kappa(const Eigen::MatrixXd& L, const Eigen::VectorXd& stddev,
                           CounterRng& rng) {
  const int n = static_cast<int>(L.rows());
  Eigen::VectorXd best = stddev;
  double best_kappa = kappa(Eigen::MatrixXd(best.cwiseInverse().asDiagonal() * L));
  for (int c = 0; c < 24; ++c) {
    Eigen::VectorXd g(n);
    for (int i = 0; i < n; ++i) g[i] = stddev[i] * std::exp(0.6 * rng.normal());
    const double k = kappa(Eigen::MatrixXd(g.cwiseInverse().asDiagonal() * L));
    if (k < best_kappa) {
      best_kappa = k;
      best = g;
    }
  }
  const double steps[] = {0.8, 0.9, 1.1, 1.25};
  for (int pass = 0; pass < 2; ++pass) {
    for (int i = 0; i < n; ++i) {
      for (double s : steps) {
        Eigen::VectorXd g = best;
        g[i] *= s;
        const double k = kappa(Eigen::MatrixXd(g.cwiseInverse().asDiagonal() * L));
        if (k < best_kappa) {
          best_kappa = k;
          best = g;
        }
      }
    }
  }
  return best_kappa;
}

double sq(double v) { return v * v; }

void csv_escape_free_row(std::ostream& os, const std::string& suite,
                         const PropertyResult& r) {
  char buf[128];
  os << suite << ',' << r.name << ',' << r.instances << ',' << r.violations << ',';
  std::snprintf(buf, sizeof(buf), "%.17g", r.allowed_violation_rate);
  os << buf << ',';
  std::snprintf(buf, sizeof(buf), "%.17g", r.statistic);
  os << buf << ',';
  std::snprintf(buf, sizeof(buf), "%.17g", r.threshold);
  os << buf << ',' << (r.pass ? 1 : 0) << '\n';
}

}  // namespace

std::vector<PropertyResult> check_preconditioning_bounds(int instances,
                                                         std::uint64_t seed) {
  if (instances < 1) {
    throw InvalidArgumentError("check_preconditioning_bounds: instances must be >= 1");
  }
  std::vector<PropertyResult> out;

  // Scaling a factor by a non-negative diagonal cannot shrink its fourth
  // Schatten norm below the smallest scale times the original norm.
  {
    CounterRng rng(seed, {1});
    int violations = 0;
    double worst = 1e300;
    for (int t = 0; t < instances; ++t) {
      const int n = 2 + static_cast<int>(rng.uniform() * 15.0);
      Eigen::MatrixXd a(n, n);
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) a(i, j) = rng.normal();
      }
      Eigen::VectorXd g(n);
      for (int i = 0; i < n; ++i) {
        g[i] = rng.uniform() < 0.1 ? 0.0 : std::abs(rng.normal());
      }
      const double lhs = schatten_norm(a * g.asDiagonal(), 4.0);
      const double rhs = schatten_norm(a, 4.0) * g.minCoeff();
      const double margin = lhs - rhs;
      worst = std::min(worst, margin);
      if (margin < -kSlack * std::max(1.0, rhs)) ++violations;
    }
    out.push_back(make_result("schatten-scaling-lower-bound", instances, violations, 0.0,
                              worst, 0.0));
  }

  // Row-normalized factor with a K-sparse Gram matrix has spectral norm at
  // most sqrt(K).
  {
    CounterRng rng(seed, {2});
    int violations = 0;
    double worst_ratio = 0.0;
    for (int t = 0; t < instances; ++t) {
      const int n = 3 + static_cast<int>(rng.uniform() * 14.0);
      const int hw = static_cast<int>(rng.uniform() * n);
      const Eigen::MatrixXd a = banded_unit_row_factor(n, hw, rng);
      const int k = max_row_nonzeros(a * a.transpose());
      const double ratio = spectral_norm_of(a) / std::sqrt(static_cast<double>(k));
      worst_ratio = std::max(worst_ratio, ratio);
      if (ratio > 1.0 + kSlack) ++violations;
    }
    out.push_back(make_result("unit-row-spectral-bound", instances, violations, 0.0,
                              worst_ratio, 1.0));
  }

  // For a row-normalized factor, no diagonal rescaling can improve the
  // condition functional by more than sqrt(K).
  {
    CounterRng rng(seed, {3});
    int violations = 0;
    double worst_ratio = 0.0;
    int t = 0;
    int guard = 0;
    while (t < instances && guard < 20 * instances) {
      ++guard;
      const int n = 3 + static_cast<int>(rng.uniform() * 14.0);
      const int hw = 1 + static_cast<int>(rng.uniform() * (n - 1));
      const Eigen::MatrixXd a = banded_unit_row_factor(n, hw, rng);
      Eigen::VectorXd g(n);
      for (int i = 0; i < n; ++i) g[i] = std::exp(rng.uniform(-2.0, 2.0));
      double kappa_a = 0.0, kappa_ga = 0.0;
      try {
        kappa_a = kappa(a);
        kappa_ga = kappa(Eigen::MatrixXd(g.cwiseInverse().asDiagonal() * a));
      } catch (const SingularMatrixError&) {
        continue;  // nearly singular draw, not a counterexample candidate
      }
      const int k = max_row_nonzeros(a * a.transpose());
      const double ratio = kappa_a / (std::sqrt(static_cast<double>(k)) * kappa_ga);
      worst_ratio = std::max(worst_ratio, ratio);
      if (ratio > 1.0 + kSlack) ++violations;
      ++t;
    }
    out.push_back(make_result("equilibrated-near-optimality", t, violations, 0.0,
                              worst_ratio, 1.0));
  }

  // Diagonally dominant covariance: the standard-deviation diagonal brings
  // the condition functional within sqrt((1+delta)/(1-delta)) of the
  // isotropic floor n^{1/4}.
  {
    CounterRng rng(seed, {4});
    int violations = 0;
    double worst_ratio = 0.0;
    int t = 0;
    int guard = 0;
    while (t < instances && guard < 20 * instances) {
      ++guard;
      const int n = 2 + static_cast<int>(rng.uniform() * 15.0);
      Eigen::MatrixXd e = Eigen::MatrixXd::Zero(n, n);
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < i; ++j) {
          e(i, j) = rng.normal();
          e(j, i) = e(i, j);
        }
      }
      const double target_sum = rng.uniform(0.05, 0.85);
      double max_row = 0.0;
      for (int i = 0; i < n; ++i) max_row = std::max(max_row, e.row(i).cwiseAbs().sum());
      if (max_row > 0.0) e *= target_sum / max_row;
      Eigen::VectorXd d(n);
      for (int i = 0; i < n; ++i) d[i] = std::exp(rng.uniform(-0.7, 0.7));
      Eigen::MatrixXd c = d.cwiseSqrt().asDiagonal() *
                          (Eigen::MatrixXd::Identity(n, n) + e) *
                          d.cwiseSqrt().asDiagonal();
      double delta = 0.0;
      for (int i = 0; i < n; ++i) {
        double row = 0.0;
        for (int j = 0; j < n; ++j) {
          if (j != i) row += std::abs(c(i, j));
        }
        delta = std::max(delta, row / c(i, i));
      }
      if (delta >= 0.95) continue;  // heterogeneity pushed past the hypothesis
      const Eigen::MatrixXd l = cholesky_factor(c).factor.matrix();
      const Eigen::VectorXd stddev = c.diagonal().cwiseSqrt();
      const double lhs = kappa(Eigen::MatrixXd(stddev.cwiseInverse().asDiagonal() * l));
      const double bound = std::pow(static_cast<double>(n), 0.25) *
                           std::sqrt((1.0 + delta) / (1.0 - delta));
      const double ratio = lhs / bound;
      worst_ratio = std::max(worst_ratio, ratio);
      if (ratio > 1.0 + kSlack) ++violations;
      ++t;
    }
    out.push_back(make_result("dominant-diagonal-bound", t, violations, 0.0, worst_ratio,
                              1.0));
  }

  // The standard-deviation diagonal is within sqrt(N) of the best diagonal
  // preconditioner (sqrt(K) when the covariance is K-sparse per row). The
  // comparison uses the best candidate a search can find, which only makes
  // the inequality harder to satisfy.
  {
    CounterRng rng(seed, {5});
    int violations_dense = 0, violations_banded = 0;
    double worst_dense = 0.0, worst_banded = 0.0;
    const int half = std::max(1, instances / 2);
    for (int t = 0; t < half; ++t) {
      const int n = 2 + static_cast<int>(rng.uniform() * 15.0);
      const FactorInstance inst = random_spd_instance(n, rng);
      const double lhs =
          kappa(Eigen::MatrixXd(inst.stddev.cwiseInverse().asDiagonal() * inst.L));
      const double best = best_diagonal_kappa(inst.L, inst.stddev, rng);
      const double ratio = lhs / (std::sqrt(static_cast<double>(n)) * best);
      worst_dense = std::max(worst_dense, ratio);
      if (ratio > 1.0 + kSlack) ++violations_dense;
    }
    for (int t = 0; t < half; ++t) {
      const int n = 6 + static_cast<int>(rng.uniform() * 11.0);
      const FactorInstance inst = banded_spd_instance(n, 1, rng);
      const int k = max_row_nonzeros(inst.C);
      const double lhs =
          kappa(Eigen::MatrixXd(inst.stddev.cwiseInverse().asDiagonal() * inst.L));
      const double best = best_diagonal_kappa(inst.L, inst.stddev, rng);
      const double ratio = lhs / (std::sqrt(static_cast<double>(k)) * best);
      worst_banded = std::max(worst_banded, ratio);
      if (ratio > 1.0 + kSlack) ++violations_banded;
    }
    out.push_back(make_result("stddev-diagonal-near-best-dense", half, violations_dense,
                              0.0, worst_dense, 1.0));
    out.push_back(make_result("stddev-diagonal-near-best-banded", half, violations_banded,
                              0.0, worst_banded, 1.0));
  }

  return out;
}

std::vector<PropertyResult> check_variance_tail_bounds(int instances, std::uint64_t seed) {
  if (instances < 1) {
    throw InvalidArgumentError("check_variance_tail_bounds: instances must be >= 1");
  }
  std::vector<PropertyResult> out;

  // Tail of the biased variance estimate of standard normals around 1: the
  // observed exceedance frequency must stay below 3 exp(-S eps^2 / 25) at
  // every probed (S, eps) pair.
  {
    CounterRng rng(seed, {11});
    const int pairs_s[] = {50, 100, 200, 400};
    const double pairs_eps[] = {1.0, 0.8, 0.6, 0.5};
    int violations = 0;
    double worst_ratio = 0.0;
    for (int p = 0; p < 4; ++p) {
      const int s = pairs_s[p];
      const double eps = pairs_eps[p];
      const double bound = 3.0 * std::exp(-s * eps * eps / 25.0);
      int exceed = 0;
      for (int t = 0; t < instances; ++t) {
        double sum = 0.0, sumsq = 0.0;
        for (int i = 0; i < s; ++i) {
          const double z = rng.normal();
          sum += z;
          sumsq += z * z;
        }
        const double delta = sumsq / s - 1.0 - sq(sum / s);
        if (std::abs(delta) >= eps) ++exceed;
      }
      const double freq = static_cast<double>(exceed) / instances;
      const double allowance = bound + 3.0 * std::sqrt(bound / instances);
      worst_ratio = std::max(worst_ratio, freq / bound);
      if (freq > allowance) ++violations;
    }
    out.push_back(
        make_result("variance-estimate-tail", 4 * instances, violations, 0.0, worst_ratio,
                    1.0));
  }

  // Preconditioning with sample standard deviations: with the sample count
  // the tail bound asks for, the condition functional degrades by more than
  // sqrt((1+eps)/(1-eps)) in at most a fraction p of instances.
  {
    CounterRng rng(seed, {12});
    const double eps = 0.5;
    const double p_budget = 0.1;
    int violations = 0;
    double worst_ratio = 0.0;
    for (int t = 0; t < instances; ++t) {
      const int n = 4 + 4 * (t % 4);  // 4, 8, 12, 16
      const int s = static_cast<int>(
          std::ceil(25.0 / (eps * eps) * std::log(3.0 * n / p_budget)));
      const FactorInstance inst = random_spd_instance(n, rng);
      Eigen::VectorXd sum = Eigen::VectorXd::Zero(n);
      Eigen::VectorXd sumsq = Eigen::VectorXd::Zero(n);
      for (int draw = 0; draw < s; ++draw) {
        const Eigen::VectorXd x = inst.L * rng.normal_vector(n);
        sum += x;
        sumsq += x.cwiseProduct(x);
      }
      const Eigen::VectorXd var_hat =
          sumsq / s - (sum / s).cwiseProduct(sum / s);  // biased, matching the bound
      const Eigen::VectorXd d_hat = var_hat.cwiseSqrt();
      const double with_true =
          kappa(Eigen::MatrixXd(inst.stddev.cwiseInverse().asDiagonal() * inst.L));
      const double with_sample =
          kappa(Eigen::MatrixXd(d_hat.cwiseInverse().asDiagonal() * inst.L));
      const double tolerance = std::sqrt((1.0 + eps) / (1.0 - eps));
      const double ratio = with_sample / (with_true * tolerance);
      worst_ratio = std::max(worst_ratio, ratio);
      if (ratio > 1.0 + kSlack) ++violations;
    }
    out.push_back(make_result("sample-stddev-tolerance", instances, violations, p_budget,
                              worst_ratio, 1.0));
  }

  return out;
}

std::vector<PropertyResult> check_gradient_suite(int points, std::uint64_t seed) {
  if (points < 1) {
    throw InvalidArgumentError("check_gradient_suite: points must be >= 1");
  }
  std::vector<PropertyResult> out;
  const double tol = 1e-5;

  auto run_split = [&](const std::string& name, const SplitTarget& target,
                       std::uint64_t stream) {
    CounterRng rng(seed, {21, stream});
    std::vector<Eigen::VectorXd> pts;
    pts.reserve(points);
    for (int i = 0; i < points; ++i) pts.push_back(rng.normal_vector(target.dimension()));
    const GradientCheckResult res = check_gradient(target, pts, 1e-5, tol);
    out.push_back(make_result(name, res.points, res.pass ? 0 : 1, 0.0, res.max_rel_error,
                              tol));
  };

  {
    SpectroscopyConfig config;
    config.geometry = SpectroscopyGeometry::kShell;
    config.grid_size = 16;
    config.chord_count = 6;
    config.knot_count = 8;
    config.frequency_count = 21;
    auto problem = std::make_shared<SpectroscopyProblem>(config);
    SpectroscopyTarget target(problem, simulate_measurements(*problem, 404));
    run_split("shell-emission-gradients", target, 1);
  }
  {
    SpectroscopyConfig config;
    config.geometry = SpectroscopyGeometry::kSlab;
    config.grid_size = 16;
    config.chord_count = 6;
    config.frequency_count = 21;
    auto problem = std::make_shared<SpectroscopyProblem>(config);
    SpectroscopyTarget target(problem, simulate_measurements(*problem, 405));
    run_split("slab-emission-gradients", target, 2);
  }
  {
    auto problem = GaussianLinearProblem::smoothing_demo(8, 16, 0.3, 1e-3, 0.1, 99);
    run_split("smoothing-posterior-gradients", *problem, 3);
  }
  {
    BimodalMixtureProblem problem(6, 3, 0.1);
    run_split("bimodal-mixture-gradients", problem, 4);
  }
  {
    Eigen::VectorXd mu(3);
    mu << 1.5, -0.7, 0.4;
    Eigen::MatrixXd gamma(3, 3);
    gamma << 0.9, 0.2, -0.1, 0.2, 0.7, 0.15, -0.1, 0.15, 1.2;
    ConjugateGaussianModel model(std::move(mu), std::move(gamma));
    run_split("conjugate-gaussian-gradients", model, 5);
  }
  return out;
}

std::vector<PropertyResult> check_swap_suite(std::uint64_t seed) {
  std::vector<PropertyResult> out;

  Eigen::VectorXd mu(3);
  mu << 1.5, -0.7, 0.4;
  Eigen::MatrixXd gamma(3, 3);
  gamma << 0.9, 0.2, -0.1, 0.2, 0.7, 0.15, -0.1, 0.15, 1.2;
  auto model = std::make_shared<ConjugateGaussianModel>(mu, gamma);

  // Swap acceptance between exactly-sampled replicas equals twice the
  // probability that the colder draw has the smaller potential.
  {
    const int n = 200000;
    double worst_sigmas = 0.0;
    int violations = 0;
    int stream = 0;
    for (TemperingMode mode : {TemperingMode::kLikelihood, TemperingMode::kPosterior}) {
      const double t_cold = 1.0, t_hot = 6.0;
      CounterRng rng_a(seed, {31, static_cast<std::uint64_t>(stream)});
      CounterRng rng_b(seed, {32, static_cast<std::uint64_t>(stream)});
      ++stream;
      const double beta_gap = 1.0 / t_cold - 1.0 / t_hot;
      auto potential = [&](const Eigen::VectorXd& x) {
        return mode == TemperingMode::kLikelihood
                   ? model->log_likelihood(x)
                   : model->log_prior(x) + model->log_likelihood(x);
      };
      double accept_sum = 0.0, accept_sumsq = 0.0;
      for (int i = 0; i < n; ++i) {
        const Eigen::VectorXd xc = model->sample_tempered(t_cold, mode, rng_a);
        const Eigen::VectorXd xh = model->sample_tempered(t_hot, mode, rng_a);
        const double a = std::min(1.0, std::exp(beta_gap * (potential(xh) - potential(xc))));
        accept_sum += a;
        accept_sumsq += a * a;
      }
      double order_sum = 0.0;
      for (int i = 0; i < n; ++i) {
        const Eigen::VectorXd xc = model->sample_tempered(t_cold, mode, rng_b);
        const Eigen::VectorXd xh = model->sample_tempered(t_hot, mode, rng_b);
        if (potential(xc) < potential(xh)) order_sum += 1.0;
      }
      const double accept = accept_sum / n;
      const double order = 2.0 * order_sum / n;
      const double var_a = accept_sumsq / n - accept * accept;
      const double p = order_sum / n;
      const double se =
          std::sqrt(var_a / n + 4.0 * p * (1.0 - p) / n);
      const double sigmas = std::abs(accept - order) / se;
      worst_sigmas = std::max(worst_sigmas, sigmas);
      if (sigmas > 3.0) ++violations;
    }
    out.push_back(make_result("swap-rate-order-statistic-identity", 2, violations, 0.0,
                              worst_sigmas, 3.0));
  }

  // Fluctuation identity for the tempered potential: its variance equals
  // -T^2 times the temperature derivative of its mean. The variance side is
  // Monte Carlo over exact draws, the derivative side comes from the closed
  // form moments.
  {
    const int n = 400000;
    double worst_rel = 0.0;
    int violations = 0;
    int stream = 0;
    for (TemperingMode mode : {TemperingMode::kLikelihood, TemperingMode::kPosterior}) {
      for (double t : {2.0, 8.0}) {
        CounterRng rng(seed, {33, static_cast<std::uint64_t>(stream)});
        ++stream;
        double sum = 0.0, sumsq = 0.0;
        for (int i = 0; i < n; ++i) {
          const Eigen::VectorXd x = model->sample_tempered(t, mode, rng);
          const double u = mode == TemperingMode::kLikelihood
                               ? model->log_likelihood(x)
                               : model->log_prior(x) + model->log_likelihood(x);
          sum += u;
          sumsq += u * u;
        }
        const double var_mc = sumsq / n - sq(sum / n);
        const double h = 1e-4 * t;
        const double e_hi =
            model->expected_potential(model->tempered_moments(t + h, mode), mode);
        const double e_lo =
            model->expected_potential(model->tempered_moments(t - h, mode), mode);
        const double slope_side = -t * t * (e_hi - e_lo) / (2.0 * h);
        const double rel = std::abs(var_mc / slope_side - 1.0);
        worst_rel = std::max(worst_rel, rel);
        if (rel > 0.02) ++violations;
      }
    }
    out.push_back(make_result("potential-variance-temperature-slope", 4, violations, 0.0,
                              worst_rel, 0.02));
  }

  // Deterministic even-odd swap parity round-trips faster than coin-flip
  // parity on the same ladder, and matches its predicted rate.
  {
    const std::vector<double> temps = {1.0, 2.5, 6.3, 16.0, 40.0, 100.0};
    auto run_scheme = [&](SwapScheme scheme, std::uint64_t s) {
      TemperatureLadder ladder;
      ladder.temperatures = temps;
      ladder.mode = TemperingMode::kLikelihood;
      ladder.step_sizes.assign(temps.size(), 0.0);
      ladder.swap_attempts.assign(temps.size() - 1, 0);
      ladder.swap_accepts.assign(temps.size() - 1, 0);
      ReplicaSystem sys(model, ladder, 2, s);
      sys.initialize_from_prior();
      IndexProcessLog log;
      log.replicas = sys.replica_count();
      log.copies = sys.copies();
      const long long rounds = 2000;
      for (long long r = 0; r < rounds; ++r) {
        sys.explore_exact([&](int rung, int, CounterRng& rng) {
          return model->sample_tempered(sys.ladder().temperatures[rung],
                                        TemperingMode::kLikelihood, rng);
        });
        sys.swap_round(scheme);
        log.rung_of_walker.push_back(sys.walker_rungs());
      }
      const SwapStatistics stats = summarize_swaps(sys.ladder());
      return round_trip_rate(log, scheme, stats.gamma_hat);
    };
    const RoundTripStats deo = run_scheme(SwapScheme::kDeo, seed + 1);
    const RoundTripStats seo = run_scheme(SwapScheme::kSeo, seed + 2);
    const double rel = std::abs(deo.rate_per_round / deo.predicted_rate - 1.0);
    int violations = 0;
    if (rel > 0.25) ++violations;
    if (!(deo.rate_per_round > seo.rate_per_round)) ++violations;
    out.push_back(make_result("even-odd-round-trip-advantage", 2, violations, 0.0, rel,
                              0.25));
  }

  return out;
}

std::vector<PropertyResult> check_ess_suite(std::uint64_t seed) {
  std::vector<PropertyResult> out;
  const int chains = 4;
  const int dim = 3;

  // Independent draws: the effective count converges to the total.
  {
    const int sizes[] = {250, 1000, 4000};
    double err[3] = {0.0, 0.0, 0.0};
    const int reps = 6;
    for (int si = 0; si < 3; ++si) {
      for (int rep = 0; rep < reps; ++rep) {
        CounterRng rng(seed, {41, static_cast<std::uint64_t>(si), static_cast<std::uint64_t>(rep)});
        std::vector<Eigen::MatrixXd> draws(chains, Eigen::MatrixXd(sizes[si], dim));
        for (auto& m : draws) {
          for (Eigen::Index i = 0; i < m.rows(); ++i) {
            for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = rng.normal();
          }
        }
        const EssResult res = effective_sample_size(draws);
        const double total = static_cast<double>(chains) * sizes[si];
        err[si] += std::abs(res.mean_ess / total - 1.0) / reps;
      }
    }
    int violations = 0;
    if (!(err[2] < err[0])) ++violations;
    if (!(err[2] < 0.1)) ++violations;
    out.push_back(make_result("iid-ess-consistency", 3 * reps, violations, 0.0, err[2],
                              0.1));
  }

  // Anti-correlated chains push the estimator above the total; the cap at
  // 1.5x the draw count must hold it there.
  {
    CounterRng rng(seed, {42});
    const int s = 2000;
    const double phi = -0.9;
    std::vector<Eigen::MatrixXd> draws(chains, Eigen::MatrixXd(s, dim));
    for (auto& m : draws) {
      for (Eigen::Index j = 0; j < dim; ++j) {
        double x = rng.normal();
        for (int i = 0; i < s; ++i) {
          m(i, j) = x;
          x = phi * x + std::sqrt(1.0 - phi * phi) * rng.normal();
        }
      }
    }
    const EssResult res = effective_sample_size(draws);
    const double total = static_cast<double>(chains) * s;
    const double max_ratio = res.ess.maxCoeff() / total;
    int violations = max_ratio > 1.5 + 1e-12 ? 1 : 0;
    out.push_back(make_result("ess-cap-binds", 1, violations, 0.0, max_ratio, 1.5));
  }

  // Scale reduction grows strictly with artificial separation of the chain
  // means.
  {
    CounterRng rng(seed, {43});
    const int s = 500;
    std::vector<Eigen::MatrixXd> base(chains, Eigen::MatrixXd(s, dim));
    for (auto& m : base) {
      for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = rng.normal();
      }
    }
    const double seps[] = {0.0, 0.25, 0.5, 1.0};
    double prev = 0.0;
    int violations = 0;
    double final_rhat = 0.0;
    for (int k = 0; k < 4; ++k) {
      std::vector<Eigen::MatrixXd> shifted = base;
      for (int c = 0; c < chains; ++c) {
        shifted[c].array() += seps[k] * c;
      }
      const RhatResult res = split_rhat(shifted);
      if (k > 0 && !(res.max_rhat > prev)) ++violations;
      prev = res.max_rhat;
      final_rhat = res.max_rhat;
    }
    out.push_back(make_result("rhat-separation-monotone", 4, violations, 0.0, final_rhat,
                              0.0));
  }

  return out;
}

std::vector<PropertyResult> run_check_suite(const std::string& suite, int instances,
                                            std::uint64_t seed) {
  if (suite == "lemmas") {
    std::vector<PropertyResult> out = check_preconditioning_bounds(instances, seed);
    std::vector<PropertyResult> tails = check_variance_tail_bounds(instances, seed);
    out.insert(out.end(), tails.begin(), tails.end());
    return out;
  }
  if (suite == "gradients") return check_gradient_suite(100, seed);
  if (suite == "swaps") return check_swap_suite(seed);
  if (suite == "ess") return check_ess_suite(seed);
  throw ConfigError("check: unknown suite \"" + suite +
                    "\"; valid suites are lemmas, gradients, swaps, ess");
}

bool all_pass(const std::vector<PropertyResult>& results) {
  for (const PropertyResult& r : results) {
    if (!r.pass) return false;
  }
  return true;
}

void write_check_csv(const std::string& suite, const std::vector<PropertyResult>& results,
                     std::ostream& os) {
  os << "# schema: check_results v1\n";
  os << "suite,property,instances,violations,allowed_violation_rate,statistic,threshold,"
        "pass\n";
  for (const PropertyResult& r : results) {
    csv_escape_free_row(os, suite, r);
  }
}

}  // namespace ips
