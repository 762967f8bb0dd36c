#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "ipsampler/diagnostics.hpp"
#include "ipsampler/hmc.hpp"
#include "ipsampler/samples.hpp"
#include "ipsampler/target.hpp"

namespace ips {

struct KappaEstimate {
  double kappa = 0.0;
  bool saturated = false;  // acceptance was at (or numerically above) one
};

// Condition estimate from an observed acceptance rate at a known step size
// and largest scale. Acceptance within 1e-6 of one is floored there and
// flagged, since the formula degenerates at exactly one.
KappaEstimate estimate_kappa_from_acceptance(double lambda1, double h, double accept_rate);

struct SpeedupEstimate {
  double kappa0 = 0.0;
  Eigen::VectorXd omega_grid;     // geometric grid over (1, 200]
  Eigen::VectorXd kappa_s_curve;  // post-preconditioning condition at each omega
  Eigen::VectorXd speedup_curve;
  double omega_star = 0.0;
  long long s_star = 0;  // sample count the covariance estimate should reach
  double predicted_speedup = 0.0;
};

// Evaluate the preconditioning payoff: spending S = omega N extra draws on a
// covariance estimate leaves residual condition kappa_S(omega), and the
// payoff trades that against the cost of collecting those draws with a
// self-terminating sampler (whose per-draw cost carries the multiplier).
SpeedupEstimate plan_speedup(double kappa0, Eigen::Index n, double s_f,
                             double nuts_cost_multiplier = 4.0);

enum class PreconditionMode { kNone, kDiag, kFull };

// Point the batch at a new sampling space x = F z and return the density the
// samplers should see there. Mode kNone ignores the factor and restores
// plain coordinates. The caller keeps the returned target alive while
// sampling. kDiag insists the factor really is diagonal.
std::shared_ptr<const TargetDensity> install_preconditioner(
    ChainBatch& batch, std::shared_ptr<const TargetDensity> target,
    const Eigen::MatrixXd& factor, PreconditionMode mode);

// Stage sequence of a staged run; labels follow the fixed order
// adapt0, stage1, stage2, then optionally nuts and adapt1, then final.
using StagePlan = std::vector<StageRecord>;

enum class PlannerOutcome {
  kCompleted,
  kRestartWithTempering,  // mixing gates failed; caller should switch engines
  kAdaptationFailure,
};

struct TraceRow {
  std::string stage;
  long long transition = 0;
  int chain = 0;
  int dimension = 0;
  double value = 0.0;
};

struct Algorithm1Config {
  int chains = 20;
  int adapt_iterations = 500;
  int stage1_draws = 500;
  int stage2_draws = 500;
  double target_accept = 0.9;
  double accept_tolerance = 0.05;
  int adapt_leapfrogs = 5;
  double nuts_cost_multiplier = 4.0;
  int ess_check_interval = 250;  // draws per chain between diagnostic passes
  int max_extra_draws = 60000;   // per chain, both ESS-driven loops
  double rhat_stage2_threshold = 1.2;
  double rhat_final_threshold = 1.05;
  int leapfrog_max = 10000;
  std::uint64_t seed = 0;
  int threads = 1;
  int trace_dimensions = 0;  // record this many leading coordinates per draw
};

struct Algorithm1Result {
  PlannerOutcome outcome = PlannerOutcome::kAdaptationFailure;
  SampleTensor samples;  // final-stage draws in original coordinates
  StagePlan stages;
  KappaEstimate kappa0;
  double lambda1 = 0.0;
  SpeedupEstimate speedup;
  bool preconditioned = false;
  bool diagonal_fallback = false;
  double kappa_final = 0.0;  // acceptance-based estimate in sampling space
  std::string warning;
  RunReport report;  // populated when the run completes
  std::vector<TraceRow> trace;
};

// Staged unimodal pipeline: adapt the step size, measure the largest scale,
// read the condition off the acceptance rate, and precondition only when the
// projected payoff beats running as-is; then sample until the requested
// minimum effective size s_f.
Algorithm1Result run_algorithm1(std::shared_ptr<const SplitTarget> target, double s_f,
                                const Algorithm1Config& config = {});

// Stage-trace CSV (stage, transition_index, chain, dimension, value) for
// trace plots across stage boundaries.
void write_stage_trace_csv(const std::vector<TraceRow>& trace, std::ostream& os);

}  // namespace ips
