#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "ipsampler/diagnostics.hpp"
#include "ipsampler/hmc.hpp"
#include "ipsampler/samples.hpp"
#include "ipsampler/target.hpp"

namespace ips {

// Density raised to 1/T. Posterior mode tempers everything; likelihood mode
// leaves the prior alone, so T = inf degrades exactly to the prior.
// Evaluations carry the untempered prior/likelihood values with them, which
// is what lets swap moves re-temper cached states for free.
std::shared_ptr<const TargetDensity> tempered_density(
    std::shared_ptr<const SplitTarget> target, double temperature, TemperingMode mode);

enum class SwapScheme {
  kDeo,  // deterministic even-odd edge alternation
  kSeo,  // parity chosen by a fair coin each round
};

// Temperatures with per-rung step sizes and per-edge swap counters. Rung r
// swaps with rung r+1 across edge r (0-based everywhere).
struct TemperatureLadder {
  std::vector<double> temperatures;  // 1 = T_0 < ... < T_{R-1} <= inf
  TemperingMode mode = TemperingMode::kLikelihood;
  std::vector<double> step_sizes;        // 0 for an exact-sampling rung
  std::vector<long long> swap_attempts;  // per edge
  std::vector<long long> swap_accepts;

  int replica_count() const { return static_cast<int>(temperatures.size()); }
  int edge_count() const { return std::max(0, replica_count() - 1); }

  // Enforces ordering, T_0 = 1, finite ceiling under posterior tempering,
  // and counter consistency. Throws InvalidArgumentError on violation.
  void validate() const;

  void reset_counters();
  // Empirical per-edge swap probability; requires at least one attempt per edge.
  std::vector<double> edge_rates() const;
};

// Per-edge rates with the derived schedule numbers: gamma is the schedule
// inefficiency sum (1-p)/p, lambda the barrier discretization sum (1-p).
struct SwapStatistics {
  std::vector<double> edge_rates;
  double gamma_hat = 0.0;
  double lambda_hat = 0.0;
  long long round_trips = 0;
  double round_trip_rate = 0.0;
};

SwapStatistics summarize_swaps(const TemperatureLadder& ladder);

// Rung occupied by each walker after every swap round. A walker is the label
// that rides along with a position when swaps exchange positions between
// rungs; walker w starts on rung w in every copy.
struct IndexProcessLog {
  int replicas = 0;
  int copies = 0;
  std::vector<Eigen::MatrixXi> rung_of_walker;  // per round, copies x replicas

  long long rounds() const { return static_cast<long long>(rung_of_walker.size()); }
};

// Round trips per the three-leg definition: a walker completes a trip when it
// has touched the hottest rung, then the coldest, then its starting rung
// again. The rate aggregates trips across all walkers of a copy per round;
// predictions are 1/(2+2gamma) for DEO and 1/(2R+2gamma) for SEO.
RoundTripStats round_trip_rate(const IndexProcessLog& log, SwapScheme scheme,
                               double gamma_hat);

// One system: R tempered replicas of the target advanced in lockstep over
// `copies` independent copies, positions exchanged by swap rounds. Chain c of
// rung r draws from the stream keyed (seed, c, r), so a single-rung system is
// stream-identical to a plain ChainBatch.
class ReplicaSystem {
 public:
  ReplicaSystem(std::shared_ptr<const SplitTarget> target, TemperatureLadder ladder,
                int copies, std::uint64_t seed);

  int replica_count() const { return ladder_.replica_count(); }
  int copies() const { return copies_; }
  const TemperatureLadder& ladder() const { return ladder_; }
  TemperatureLadder& ladder() { return ladder_; }
  const ChainBatch& rung(int r) const { return rungs_.at(r); }
  ChainBatch& rung(int r) { return rungs_.at(r); }
  const TargetDensity& rung_density(int r) const { return *tempered_.at(r); }

  // Replace the temperatures (same count), rebuilding the tempered densities
  // and dropping warm evaluations; positions stay where they are.
  void set_temperatures(const std::vector<double>& temperatures);

  void initialize_from_prior();

  // One HMC transition per finite-temperature rung with the shared leapfrog
  // count; an infinite rung redraws from the prior instead. Rungs advance
  // concurrently on up to `threads` workers.
  void explore(int leapfrogs, int threads = 1);

  // Exact-sampling exploration for oracle studies: `draw(rung, copy, rng)`
  // replaces every position. Costs one density evaluation per slot to warm
  // the swap caches.
  using ExactRungSampler =
      std::function<Eigen::VectorXd(int rung, int copy, CounterRng& rng)>;
  void explore_exact(const ExactRungSampler& draw);

  // Walker currently on rung r of copy c, and each walker's rung.
  int walker_at(int c, int r) const { return walker_at_(c, r); }
  Eigen::MatrixXi walker_rungs() const;

  long long total_gradient_evals() const;

  struct EdgeOutcome {
    int edge = 0;
    int copy = 0;
    bool accepted = false;
    double accept_prob = 0.0;
  };
  struct SwapRound {
    bool even_parity = true;
    std::vector<EdgeOutcome> outcomes;
  };

  // One communication round under the given scheme. Proposes the parity's
  // edge set on every copy, resolves acceptances from cached evaluations in a
  // fixed order, updates counters and walker labels. The internal round
  // counter drives DEO parity; SEO flips a coin from the swap stream.
  SwapRound swap_round(SwapScheme scheme);

  long long rounds_completed() const { return round_counter_; }

 private:
  double beta(int r) const;
  std::shared_ptr<const SplitTarget> target_;
  TemperatureLadder ladder_;
  int copies_;
  std::uint64_t seed_;
  std::vector<ChainBatch> rungs_;
  std::vector<std::shared_ptr<const TargetDensity>> tempered_;
  Eigen::MatrixXi walker_at_;  // copies x replicas: walker label on each rung
  CounterRng swap_rng_;
  long long round_counter_ = 0;
};

// Piecewise-linear barrier estimate on the current ladder knots and the
// equal-increment re-placement of the interior temperatures, inverted in
// log T. End temperatures stay fixed; an infinite ceiling keeps its
// neighbour fixed too and only the finite interior moves.
std::vector<double> adapt_schedule(const TemperatureLadder& ladder);

// Step-size guesses at the requested temperatures: piecewise-linear in
// sqrt(T) through the calibrated (T, h) anchors, sqrt(T)-proportional beyond
// them, 0 at T = inf (exact-sampling rung needs none).
std::vector<double> replica_step_sizes(
    const std::vector<double>& temperatures,
    const std::vector<std::pair<double, double>>& anchors);

// Shared leapfrog count for all replicas: round-half-up of
// largest_scale * (pi/2) / (step * sqrt(1 + gamma)), at least 1.
int leapfrog_heuristic(double largest_scale, double step, double gamma);

struct TmaxOptions {
  double growth = 2.0;  // geometric ladder ratio
  int max_rungs = 20;
  TemperingMode mode = TemperingMode::kLikelihood;
  int chains = 4;
  long long burnin_draws = 400;
  long long discard = 100;  // leading draws dropped before the mixing check
  double rhat_threshold = 1.1;
  int leapfrogs = 5;
  int adapt_iterations = 300;
  double target_accept = 0.9;
  std::uint64_t seed = 0;
  int threads = 1;
};

struct TmaxSelection {
  double t_max = 0.0;
  int selected_rung = 0;               // 0-based index into the probe ladder
  std::vector<double> temperatures;    // probe ladder actually run
  std::vector<double> rung_max_rhat;   // mixing score per probe rung
  std::vector<double> step_sizes;
};

// Swap-free burn-in on a geometric ladder; returns the coldest temperature
// whose chains mix (split R-hat below threshold), discarding hotter rungs.
// Throws NoMixingRungError when no rung passes.
TmaxSelection select_tmax(std::shared_ptr<const SplitTarget> target,
                          const TmaxOptions& opts = {});

struct RemcOptions {
  TemperingMode mode = TemperingMode::kLikelihood;
  SwapScheme scheme = SwapScheme::kDeo;
  std::vector<double> temperatures{1.0};
  int copies = 2;
  std::uint64_t seed = 0;
  int threads = 1;

  // Step sizes: explicit per-rung values skip calibration entirely.
  std::vector<double> step_sizes;
  int anchor_adapt_iterations = 400;  // rung-0 anchor calibration
  int rung_adapt_iterations = 150;    // per-rung refinement after interpolation
  double target_accept = 0.9;
  double accept_tolerance = 0.05;

  // Leapfrogs: explicit count skips the heuristic.
  int leapfrogs = 0;
  double leapfrog_multiplier = 1.0;
  double largest_scale_hint = 0.0;  // 0 -> estimate from hottest-rung burn-in

  // Schedule adaptation: sweeps of swap rounds with a re-placement between.
  int adapt_sweeps = 3;
  int rounds_per_sweep = 200;
  bool adapt_temperatures = true;

  bool record_round_log = true;
  bool record_index_log = true;
};

struct RoundLogRow {
  long long round = 0;
  int copy = 0;
  int rung = 0;
  double log_prior = 0.0;
  double log_likelihood = 0.0;
  int swap_edge = -1;  // edge this rung proposed on, -1 when idle this round
  int swap_accepted = 0;
};

struct RemcResult {
  SampleTensor samples;  // coldest-rung draws, one chain per copy
  TemperatureLadder ladder;
  SwapStatistics swaps;
  RoundTripStats round_trips;
  IndexProcessLog index_log;
  std::vector<RoundLogRow> round_log;
  std::vector<double> rung_max_rhat;  // per rung, NaN with fewer than 2 copies
  int leapfrogs = 0;
  double largest_scale = 0.0;  // scale estimate behind the leapfrog choice
  long long gradient_evals = 0;
  std::string warning;
  RunReport report;
};

// Full replica-exchange run: optional step-size calibration and schedule
// adaptation sweeps, then `rounds` measurement rounds alternating one
// exploration step with one swap round. Only coldest-rung positions are kept
// as target draws; counters, the index process, and per-round rows cover the
// measurement phase only.
RemcResult run_remc(std::shared_ptr<const SplitTarget> target, const RemcOptions& opts,
                    long long rounds);

// Measurement-phase CSVs: one row per rung per copy per round, and the
// per-rung ladder summary.
void write_round_log_csv(const std::vector<RoundLogRow>& rows, std::ostream& os);
void write_ladder_summary_csv(const RemcResult& result, std::ostream& os);

}  // namespace ips
