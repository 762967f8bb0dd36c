#pragma once

#include <limits>

#include <Eigen/Core>

#include "ipsampler/errors.hpp"
#include "ipsampler/rng.hpp"

namespace ips {

struct LogDensityValue {
  double value = 0.0;
  Eigen::VectorXd gradient;
  // Untempered components, populated by split targets and the tempering
  // wrapper so replica-exchange swaps can re-temper a cached evaluation
  // without touching the model again. NaN when not applicable.
  double prior_value = std::numeric_limits<double>::quiet_NaN();
  double likelihood_value = std::numeric_limits<double>::quiet_NaN();
};

// Unnormalized log density with gradient. eval() is the primitive so that
// implementations can share work between the value and the gradient.
class TargetDensity {
 public:
  virtual ~TargetDensity() = default;
  virtual Eigen::Index dimension() const = 0;
  virtual LogDensityValue eval(const Eigen::VectorXd& x) const = 0;

  virtual double log_density(const Eigen::VectorXd& x) const { return eval(x).value; }
  virtual Eigen::VectorXd gradient(const Eigen::VectorXd& x) const {
    return eval(x).gradient;
  }

 protected:
  void require_dimension(const Eigen::VectorXd& x, const char* who) const {
    if (x.size() != dimension()) {
      throw InvalidArgumentError(std::string(who) + ": point has wrong dimension");
    }
  }
};

enum class TemperingMode {
  kPosterior,   // temper the whole posterior, requires finite temperatures
  kLikelihood,  // temper only the likelihood, T = inf degrades to the prior
};

// A posterior split into prior and likelihood terms, which is what tempering
// and replica exchange need. The plain eval() is their sum.
class SplitTarget : public TargetDensity {
 public:
  virtual LogDensityValue eval_prior(const Eigen::VectorXd& x) const = 0;
  virtual LogDensityValue eval_likelihood(const Eigen::VectorXd& x) const = 0;
  virtual Eigen::VectorXd sample_prior(CounterRng& rng) const = 0;

  virtual double log_prior(const Eigen::VectorXd& x) const { return eval_prior(x).value; }
  virtual double log_likelihood(const Eigen::VectorXd& x) const {
    return eval_likelihood(x).value;
  }

  LogDensityValue eval(const Eigen::VectorXd& x) const override {
    LogDensityValue p = eval_prior(x);
    LogDensityValue l = eval_likelihood(x);
    LogDensityValue out;
    out.prior_value = p.value;
    out.likelihood_value = l.value;
    out.value = p.value + l.value;
    out.gradient = std::move(p.gradient);
    out.gradient += l.gradient;
    return out;
  }
};

// Standard normal in N dimensions; the simplest target and the default prior.
class StandardNormalTarget : public SplitTarget {
 public:
  explicit StandardNormalTarget(Eigen::Index n) : n_(n) {
    if (n < 1) throw InvalidArgumentError("StandardNormalTarget: dimension must be >= 1");
  }
  Eigen::Index dimension() const override { return n_; }
  LogDensityValue eval_prior(const Eigen::VectorXd& x) const override {
    require_dimension(x, "StandardNormalTarget");
    return {-0.5 * x.squaredNorm(), -x};
  }
  LogDensityValue eval_likelihood(const Eigen::VectorXd& x) const override {
    return {0.0, Eigen::VectorXd::Zero(x.size())};
  }
  Eigen::VectorXd sample_prior(CounterRng& rng) const override {
    return rng.normal_vector(n_);
  }

 private:
  Eigen::Index n_;
};

}  // namespace ips
