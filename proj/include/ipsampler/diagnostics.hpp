#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "ipsampler/samples.hpp"

namespace ips {

struct EssOptions {
  // Rank-normalization is available but off by default; the estimator is
  // defined on raw values and the toggle exists for heavy-tailed targets.
  bool rank_normalize = false;
};

struct EssResult {
  Eigen::VectorXd ess;           // per dimension
  std::vector<char> degenerate;  // constant-chain dimensions, reported as 0
  double min_ess = 0.0;
  Eigen::Index min_dimension = 0;
  double mean_ess = 0.0;
};

// Multi-chain effective sample size per dimension. Autocorrelations use the
// pooled-variance normalization, so chains stuck at different means are
// penalized toward zero, and the lag sum is truncated by the initial
// monotone positive-pair rule. Requires K >= 2 chains of equal length S >= 8.
// The estimate is capped at 1.5x the total draw count.
EssResult effective_sample_size(const std::vector<Eigen::MatrixXd>& chains,
                                const EssOptions& opts = {});
EssResult effective_sample_size(const SampleTensor& draws, const EssOptions& opts = {});

struct RhatResult {
  Eigen::VectorXd rhat;          // per dimension
  std::vector<char> degenerate;  // a split half had zero variance
  double max_rhat = 0.0;
  bool any_degenerate = false;
};

// Split potential-scale-reduction per dimension: each chain is halved (odd
// lengths drop the middle draw) and the between/within variance ratio is
// taken over the 2K half-chains. Requires K >= 2 chains of equal length
// S >= 4.
RhatResult split_rhat(const std::vector<Eigen::MatrixXd>& chains);
RhatResult split_rhat(const SampleTensor& draws);

// One adaptive or sampling stage of a run, as recorded by the planner or the
// replica-exchange driver.
struct StageRecord {
  std::string label;
  double step_size = 0.0;
  int leapfrogs = 0;
  long long draws_per_chain = 0;
  double mean_accept = 0.0;
  double mean_depth = 0.0;      // tree depth for self-terminating stages, else 0
  double kappa_estimate = 0.0;  // 0 when the stage produced no estimate
  long long gradient_evals = 0;
  double max_rhat = 0.0;  // 0 when not evaluated at this stage
  double wall_seconds = 0.0;
};

struct RoundTripStats {
  double trips = 0.0;
  double rate_per_round = 0.0;
  double predicted_rate = 0.0;  // scheme-specific prediction from swap rates
  int replicas = 0;
  bool low_confidence = false;  // no complete trip observed yet
};

struct ReplicaSummary {
  std::vector<double> temperatures;
  std::vector<double> step_sizes;
  std::vector<double> edge_swap_rates;  // acceptance rate per adjacent pair
  RoundTripStats round_trips;
};

struct RunReport {
  Eigen::VectorXd ess;
  double min_ess = 0.0;
  Eigen::Index min_ess_dimension = 0;
  Eigen::VectorXd rhat;
  double max_rhat = 0.0;
  bool degenerate = false;  // any dimension flagged by ESS or R-hat
  std::vector<StageRecord> stages;
  long long total_gradient_evals = 0;
  double gradient_evals_per_min_ess = 0.0;
  long long chains = 0;
  long long draws_per_chain = 0;
  bool has_replica_exchange = false;
  ReplicaSummary replica;  // meaningful only when has_replica_exchange
};

// Aggregate diagnostics over the final-stage draws plus whatever stage
// records the driver collected. Gradient totals are summed over stages.
RunReport compile_report(const SampleTensor& draws, const std::vector<StageRecord>& stages);
RunReport compile_report(const SampleTensor& draws, const std::vector<StageRecord>& stages,
                         const ReplicaSummary& replica);

// Flat CSV (metric, stage, dimension, value) and a structured JSON document;
// both orderings are fixed so identical runs serialize identically.
void write_report_csv(const RunReport& report, std::ostream& os);
void write_report_json(const RunReport& report, std::ostream& os);

}  // namespace ips
