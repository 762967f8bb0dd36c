#pragma once

// Bimodal toy posterior: standard normal prior in N dimensions, and for the
// first M coordinates a likelihood that cannot tell +1 from -1:
//   p(y|x) ∝ prod_{m<M} [ exp(-(x_m-1)^2/(2 sigma^2)) + exp(-(x_m+1)^2/(2 sigma^2)) ].
// Each constrained coordinate has two modes; 2^M modes in total. The density
// factorizes over coordinates, so tempered marginals can be sampled exactly
// and serve as oracles for the replica machinery.

#include <memory>

#include "ipsampler/grid_sampler.hpp"
#include "ipsampler/target.hpp"

namespace ips {

class BimodalMixtureProblem : public SplitTarget {
 public:
  BimodalMixtureProblem(int N, int M, double sigma);

  Eigen::Index dimension() const override { return N_; }
  int constrained_count() const { return M_; }
  double mixture_sigma() const { return sigma_; }

  LogDensityValue eval_prior(const Eigen::VectorXd& x) const override;
  LogDensityValue eval_likelihood(const Eigen::VectorXd& x) const override;
  Eigen::VectorXd sample_prior(CounterRng& rng) const override;

 private:
  int N_, M_;
  double sigma_;
};

// Unnormalized log density of one coordinate of the tempered problem.
// Constrained coordinates carry the mixture likelihood, unconstrained ones are
// pure prior. Posterior tempering raises everything to 1/T; likelihood
// tempering leaves the prior alone (T = inf allowed there).
double bimodal_coordinate_log_density(double x, double sigma, double temperature,
                                      TemperingMode mode, bool constrained);

// Exact sampler for one replica of the tempered bimodal problem, coordinate by
// coordinate on a tabulated inverse CDF.
class BimodalCoordinateSampler {
 public:
  BimodalCoordinateSampler(int N, int M, double sigma, double temperature,
                           TemperingMode mode);
  Eigen::VectorXd sample(CounterRng& rng) const;

 private:
  int N_, M_;
  std::shared_ptr<GridInverseCdf> constrained_;
  std::shared_ptr<GridInverseCdf> unconstrained_;
};

// Largest standard deviation of the tempered problem with the mixture replaced
// by a single mode (the closed-form scale used for trajectory length choices).
double tempered_bimodal_largest_scale(double sigma, double temperature,
                                      TemperingMode mode, int N, int M);

// log pi(0) - log pi(mode) for one constrained coordinate of the untempered
// posterior: the density drop a trajectory must cross to switch sign. The mode
// location is found numerically, so this is oracle-grade for any sigma.
double bimodal_escape_log_ratio(double sigma);

// Same barrier for the two-component normal mixture 0.5 N(-1, s^2) + 0.5 N(1, s^2)
// (no prior), whose escape rates scale like exp(-1/(2 s^2)).
double bimodal_normal_log_density(double x, double sigma);

}  // namespace ips
