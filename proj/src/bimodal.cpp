#include "ipsampler/bimodal.hpp"

#include <cmath>
#include <limits>

#include "ipsampler/mathutil.hpp"

namespace ips {

namespace {

// Mixture term for one constrained coordinate, with soft weights for the
// gradient. Stable for |x| far into the tails.
struct MixtureTerm {
  double log_value;
  double dlog_dx;
};

MixtureTerm mixture_term(double x, double sigma) {
  double inv_var = 1.0 / (sigma * sigma);
  double a = -0.5 * (x - 1.0) * (x - 1.0) * inv_var;
  double b = -0.5 * (x + 1.0) * (x + 1.0) * inv_var;
  double lse = log_sum_exp(a, b);
  double wa = std::exp(a - lse);
  double wb = std::exp(b - lse);
  double grad = wa * (-(x - 1.0) * inv_var) + wb * (-(x + 1.0) * inv_var);
  return {lse, grad};
}

}  // namespace

BimodalMixtureProblem::BimodalMixtureProblem(int N, int M, double sigma)
    : N_(N), M_(M), sigma_(sigma) {
  if (N < 1 || M < 0 || M > N) {
    throw InvalidArgumentError("BimodalMixtureProblem: need 0 <= M <= N, N >= 1");
  }
  if (!(sigma > 0.0)) {
    throw InvalidArgumentError("BimodalMixtureProblem: sigma must be > 0");
  }
}

LogDensityValue BimodalMixtureProblem::eval_prior(const Eigen::VectorXd& x) const {
  require_dimension(x, "BimodalMixtureProblem");
  return {-0.5 * x.squaredNorm(), -x};
}

LogDensityValue BimodalMixtureProblem::eval_likelihood(const Eigen::VectorXd& x) const {
  require_dimension(x, "BimodalMixtureProblem");
  LogDensityValue out;
  out.value = 0.0;
  out.gradient = Eigen::VectorXd::Zero(N_);
  for (int m = 0; m < M_; ++m) {
    MixtureTerm t = mixture_term(x[m], sigma_);
    out.value += t.log_value;
    out.gradient[m] = t.dlog_dx;
  }
  return out;
}

Eigen::VectorXd BimodalMixtureProblem::sample_prior(CounterRng& rng) const {
  return rng.normal_vector(N_);
}

double bimodal_coordinate_log_density(double x, double sigma, double temperature,
                                      TemperingMode mode, bool constrained) {
  double prior = -0.5 * x * x;
  double lik = constrained ? mixture_term(x, sigma).log_value : 0.0;
  if (mode == TemperingMode::kPosterior) {
    if (std::isinf(temperature)) {
      throw InvalidArgumentError(
          "bimodal_coordinate_log_density: posterior tempering needs finite T");
    }
    return (prior + lik) / temperature;
  }
  if (std::isinf(temperature)) return prior;
  return prior + lik / temperature;
}

BimodalCoordinateSampler::BimodalCoordinateSampler(int N, int M, double sigma,
                                                   double temperature, TemperingMode mode)
    : N_(N), M_(M) {
  // The hottest posterior-tempered coordinates have standard deviation
  // sqrt(T); make the grid wide enough for either mode.
  double spread = 1.0;
  if (mode == TemperingMode::kPosterior && std::isfinite(temperature)) {
    spread = std::sqrt(temperature);
  }
  double range = 8.0 * spread + 3.0;
  auto make = [&](bool constrained) {
    return std::make_shared<GridInverseCdf>(
        [=](double x) {
          return bimodal_coordinate_log_density(x, sigma, temperature, mode, constrained);
        },
        -range, range, 8193);
  };
  constrained_ = make(true);
  unconstrained_ = make(false);
}

Eigen::VectorXd BimodalCoordinateSampler::sample(CounterRng& rng) const {
  Eigen::VectorXd x(N_);
  for (int i = 0; i < N_; ++i) {
    x[i] = (i < M_) ? constrained_->sample(rng) : unconstrained_->sample(rng);
  }
  return x;
}

double tempered_bimodal_largest_scale(double sigma, double temperature,
                                      TemperingMode mode, int N, int M) {
  if (N < 1 || M < 0 || M > N) {
    throw InvalidArgumentError("tempered_bimodal_largest_scale: need 0 <= M <= N");
  }
  double s2 = sigma * sigma;
  double constrained_var, unconstrained_var;
  if (mode == TemperingMode::kPosterior) {
    if (std::isinf(temperature)) {
      throw InvalidArgumentError(
          "tempered_bimodal_largest_scale: posterior tempering needs finite T");
    }
    constrained_var = temperature * s2 / (1.0 + s2);
    unconstrained_var = temperature;
  } else {
    constrained_var = std::isinf(temperature)
                          ? 1.0
                          : temperature * s2 / (1.0 + temperature * s2);
    unconstrained_var = 1.0;
  }
  double v = (M < N) ? std::max(constrained_var, unconstrained_var) : constrained_var;
  return std::sqrt(v);
}

double bimodal_escape_log_ratio(double sigma) {
  auto logpi = [&](double x) {
    return -0.5 * x * x + mixture_term(x, sigma).log_value;
  };
  // Golden-section maximization of the positive mode on [0, 2].
  double a = 0.0, b = 2.0;
  const double phi = 0.6180339887498949;
  double c = b - phi * (b - a);
  double d = a + phi * (b - a);
  for (int it = 0; it < 200; ++it) {
    if (logpi(c) > logpi(d)) {
      b = d;
    } else {
      a = c;
    }
    c = b - phi * (b - a);
    d = a + phi * (b - a);
    if (b - a < 1e-12) break;
  }
  double mode = 0.5 * (a + b);
  return logpi(0.0) - logpi(mode);
}

double bimodal_normal_log_density(double x, double sigma) {
  double inv_var = 1.0 / (sigma * sigma);
  double a = -0.5 * (x - 1.0) * (x - 1.0) * inv_var;
  double b = -0.5 * (x + 1.0) * (x + 1.0) * inv_var;
  return log_sum_exp(a, b) - std::log(2.0);
}

}  // namespace ips
