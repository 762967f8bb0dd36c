#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/LU>

#include "ipsampler/rng.hpp"
#include "ipsampler/samples.hpp"
#include "ipsampler/target.hpp"

namespace ips {

struct LeapfrogResult {
  Eigen::VectorXd position;
  Eigen::VectorXd momentum;
  LogDensityValue final_eval;
  double energy_error = 0.0;  // H(end) - H(start)
  bool divergent = false;
  int gradient_evals = 0;
};

// Kick-drift-kick integration of Hamilton's equations for
// H(x, xi) = -log pi(x) + |xi|^2 / 2. Passing the evaluation at the starting
// point saves one gradient call; callers that keep chains warm should do so.
LeapfrogResult leapfrog(const TargetDensity& target, const Eigen::VectorXd& position,
                        const Eigen::VectorXd& momentum, double step_size, int steps,
                        const LogDensityValue* initial_eval = nullptr,
                        double divergence_threshold = 1000.0);

// A set of chains advanced in lockstep. Each chain owns a counter-based RNG
// stream keyed by (seed, chain index, replica index) so runs are reproducible
// regardless of how chains are scheduled across threads.
//
// Positions live in a sampling space related to the original coordinates by
// x = F z when a transform F is installed (the caller pairs this with a
// pushforward of the target through the same map). Without a transform the
// two spaces coincide.
class ChainBatch {
 public:
  ChainBatch(int chains, Eigen::Index dim, std::uint64_t seed, std::uint64_t replica = 0);

  int chains() const { return static_cast<int>(rngs_.size()); }
  Eigen::Index dim() const { return dim_; }
  std::uint64_t seed() const { return seed_; }
  std::uint64_t replica() const { return replica_; }

  CounterRng& rng(int chain) { return rngs_.at(chain); }

  const Eigen::VectorXd& position(int chain) const { return positions_.at(chain); }
  void set_position(int chain, const Eigen::VectorXd& z);
  // Set a chain's location given original-space coordinates; converts through
  // the installed transform if any.
  void set_original_position(int chain, const Eigen::VectorXd& x);
  Eigen::MatrixXd positions() const;

  void install_transform(const Eigen::MatrixXd& factor);
  void clear_transform();
  bool has_transform() const { return transform_.size() > 0; }
  const Eigen::MatrixXd& transform() const { return transform_; }
  Eigen::VectorXd to_original(const Eigen::VectorXd& z) const;
  Eigen::VectorXd from_original(const Eigen::VectorXd& x) const;
  Eigen::MatrixXd original_positions() const;

  // Draw every chain's start from the prior of a split target (original
  // coordinates), using that chain's own stream.
  void initialize_from_prior(const SplitTarget& target);

  // Cached density evaluation at the current position, keyed by the target
  // it was computed against. Samplers use this to avoid re-evaluating the
  // start point of every trajectory. prepare_cache must be called (from one
  // thread) before chains read or write their slots concurrently; it drops
  // stale entries when the target changed.
  void prepare_cache(const TargetDensity& target);
  const LogDensityValue* cached_eval(int chain, const TargetDensity& target) const;
  void store_eval(int chain, const TargetDensity& target, LogDensityValue eval);
  void invalidate_cache();
  // Drop one chain's entry, for callers that moved a single position (say, a
  // replica swap) and want the rest of the batch to stay warm.
  void invalidate_chain_cache(int chain);

  // Counters accumulated across all transitions run on this batch.
  long long transitions = 0;
  long long accepted = 0;
  long long divergences = 0;
  long long gradient_evals = 0;

 private:
  Eigen::Index dim_;
  std::uint64_t seed_;
  std::uint64_t replica_;
  std::vector<CounterRng> rngs_;
  std::vector<Eigen::VectorXd> positions_;
  Eigen::MatrixXd transform_;
  Eigen::PartialPivLU<Eigen::MatrixXd> transform_lu_;
  std::vector<LogDensityValue> cache_;
  std::vector<char> cache_valid_;
  const TargetDensity* cache_key_ = nullptr;
};

struct TransitionStats {
  double mean_accept_prob = 0.0;  // mean over chains of min(1, e^{-dH})
  int accepted = 0;
  int divergent = 0;
};

// One HMC update of every chain: fresh momentum, a leapfrog trajectory of
// `leapfrogs` steps at `step_size`, Metropolis correction. Chains are
// independent so they may be advanced on up to `threads` workers.
TransitionStats hmc_transition(const TargetDensity& target, ChainBatch& batch,
                               double step_size, int leapfrogs, int threads = 1,
                               double divergence_threshold = 1000.0);

struct StepSizeOptions {
  double target_accept = 0.9;
  double tolerance = 0.05;      // acceptable band around the target
  int iterations = 500;
  int window = 100;             // trailing window for the convergence check
  double learning_exponent = 0.6;
  double initial_step = 0.1;
  bool bracket_first = true;  // coarse doubling search before the refinement
  double min_step = 1e-9;
  double max_step = 1e3;
  int leapfrogs = 5;
  double divergence_threshold = 1000.0;
};

struct StepSizeResult {
  double step_size = 0.0;
  double windowed_accept = 0.0;
  bool converged = false;
  std::string warning;
  std::vector<double> step_trace;
  std::vector<double> accept_trace;
};

// Stochastic approximation on log step size with gain t^{-learning_exponent},
// driving the cross-chain acceptance toward the target. An optional coarse
// bracket (doubling or halving until the acceptance crosses the target) runs
// first so a poor initial_step does not eat the whole iteration budget. The
// step size is clamped to [min_step, max_step]; on targets where acceptance never drops
// (say, one that is flat) it simply climbs to the ceiling and the result
// carries a warning instead of pretending to have converged.
StepSizeResult adapt_step_size(const TargetDensity& target, ChainBatch& batch,
                               const StepSizeOptions& opts = {}, int threads = 1);

// Advance all chains `draws` times, appending every post-transition position
// (original coordinates) to `out` when it is non-null.
TransitionStats hmc_run(const TargetDensity& target, ChainBatch& batch, double step_size,
                        int leapfrogs, int draws, SampleTensor* out, int threads = 1,
                        double divergence_threshold = 1000.0);

}  // namespace ips
