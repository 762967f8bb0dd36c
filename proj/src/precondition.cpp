#include "ipsampler/precondition.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <sstream>

#include "ipsampler/mathutil.hpp"
#include "ipsampler/nuts.hpp"
#include "ipsampler/spectral.hpp"
#include "ipsampler/transforms.hpp"

namespace ips {

KappaEstimate estimate_kappa_from_acceptance(double lambda1, double h, double accept_rate) {
  if (!(lambda1 > 0)) throw InvalidArgumentError("estimate_kappa_from_acceptance: lambda1 <= 0");
  if (!(h > 0)) throw InvalidArgumentError("estimate_kappa_from_acceptance: step size <= 0");
  if (!(accept_rate > 0)) {
    throw InvalidArgumentError("estimate_kappa_from_acceptance: acceptance must be positive");
  }
  KappaEstimate out;
  double a = accept_rate;
  if (a >= 1.0 - 1e-6) {
    // The estimator degenerates as acceptance approaches one; clamp and say
    // so rather than returning zero condition.
    a = 1.0 - 1e-6;
    out.saturated = true;
  }
  const double q = inverse_normal_cdf(1.0 - a / 2.0);
  out.kappa = (lambda1 / h) * std::pow(2.0, 1.75) * std::sqrt(q);
  return out;
}

SpeedupEstimate plan_speedup(double kappa0, Eigen::Index n, double s_f,
                             double nuts_cost_multiplier) {
  if (!(kappa0 > 0)) throw InvalidArgumentError("plan_speedup: kappa0 must be positive");
  if (!(s_f >= 1)) throw InvalidArgumentError("plan_speedup: s_f must be at least 1");
  if (n < 1) throw InvalidArgumentError("plan_speedup: dimension must be >= 1");

  const int points = 64;
  SpeedupEstimate est;
  est.kappa0 = kappa0;
  est.omega_grid.resize(points);
  est.kappa_s_curve.resize(points);
  est.speedup_curve.resize(points);

  Eigen::Index best = 0;
  for (int i = 0; i < points; ++i) {
    // 200^{(i+1)/64}: 64 geometric points filling (1, 200].
    const double omega = std::pow(200.0, static_cast<double>(i + 1) / points);
    const double kappa_s = inverse_wishart_kappa_asymptote(static_cast<int>(n), omega);
    const double s = omega * static_cast<double>(n);
    const double speedup =
        s_f * kappa0 / (s * nuts_cost_multiplier * kappa0 + s_f * kappa_s);
    est.omega_grid[i] = omega;
    est.kappa_s_curve[i] = kappa_s;
    est.speedup_curve[i] = speedup;
    if (speedup > est.speedup_curve[best]) best = i;
  }
  est.omega_star = est.omega_grid[best];
  est.predicted_speedup = est.speedup_curve[best];
  est.s_star = static_cast<long long>(std::ceil(est.omega_star * n));
  return est;
}

std::shared_ptr<const TargetDensity> install_preconditioner(
    ChainBatch& batch, std::shared_ptr<const TargetDensity> target,
    const Eigen::MatrixXd& factor, PreconditionMode mode) {
  if (!target) throw InvalidArgumentError("install_preconditioner: null target");
  if (mode == PreconditionMode::kNone) {
    batch.clear_transform();
    return target;
  }
  if (mode == PreconditionMode::kDiag) {
    for (Eigen::Index i = 0; i < factor.rows(); ++i) {
      for (Eigen::Index j = 0; j < factor.cols(); ++j) {
        if (i != j && factor(i, j) != 0.0) {
          throw InvalidArgumentError(
              "install_preconditioner: diagonal mode given a non-diagonal factor");
        }
      }
    }
  }
  // LinearMap validates invertibility; the batch transform repeats the check
  // against its own tolerance.
  auto map = std::make_shared<LinearMap>(factor);
  batch.install_transform(factor);
  return std::make_shared<PushforwardTarget>(std::move(target), std::move(map));
}

namespace {

struct StageTimer {
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  }
};

void append_warning(std::string* acc, const std::string& msg) {
  if (msg.empty()) return;
  if (!acc->empty()) *acc += "; ";
  *acc += msg;
}

int leapfrogs_for(double trajectory_scale, double h, int leapfrog_max) {
  double raw = std::ceil((trajectory_scale / h) * (kPi / 2.0));
  if (!(raw >= 1.0)) raw = 1.0;
  if (raw > leapfrog_max) raw = leapfrog_max;
  return static_cast<int>(raw);
}

double largest_scale_from(const SampleTensor& draws) {
  const Eigen::MatrixXd cov = pooled_covariance(draws.to_matrices());
  const double top = largest_eigenvalue_power_iteration(cov);
  return std::sqrt(std::max(top, 0.0));
}

void record_trace(std::vector<TraceRow>* trace, const char* stage, long long transition,
                  const ChainBatch& batch, int dims) {
  if (trace == nullptr || dims <= 0) return;
  const Eigen::MatrixXd x = batch.original_positions();
  const int d = std::min<int>(dims, static_cast<int>(x.cols()));
  for (int c = 0; c < x.rows(); ++c) {
    for (int j = 0; j < d; ++j) {
      trace->push_back({stage, transition, c, j, x(c, j)});
    }
  }
}

// Trace rows for draws [from, draws) already sitting in `tensor`.
void record_trace_from_tensor(std::vector<TraceRow>* trace, const char* stage,
                              const SampleTensor& tensor, Eigen::Index from, int dims) {
  if (trace == nullptr || dims <= 0) return;
  const int d = std::min<int>(dims, static_cast<int>(tensor.dim()));
  for (int c = 0; c < tensor.chain_count(); ++c) {
    auto block = tensor.chain(c);
    for (Eigen::Index r = from; r < block.rows(); ++r) {
      for (int j = 0; j < d; ++j) {
        trace->push_back({stage, r, c, j, block(r, j)});
      }
    }
  }
}

// One HMC stage of fixed length with optional trace capture.
TransitionStats run_stage(const TargetDensity& target, ChainBatch& batch, double h, int ell,
                          int draws, SampleTensor* out, const Algorithm1Config& cfg,
                          const char* label, std::vector<TraceRow>* trace) {
  TransitionStats total;
  for (int d = 0; d < draws; ++d) {
    TransitionStats s = hmc_transition(target, batch, h, ell, cfg.threads);
    total.mean_accept_prob += s.mean_accept_prob;
    total.accepted += s.accepted;
    total.divergent += s.divergent;
    if (out != nullptr) {
      for (int c = 0; c < batch.chains(); ++c) {
        out->append(c, batch.to_original(batch.position(c)));
      }
    }
    record_trace(trace, label, d, batch, cfg.trace_dimensions);
  }
  if (draws > 0) total.mean_accept_prob /= draws;
  return total;
}

}  // namespace

Algorithm1Result run_algorithm1(std::shared_ptr<const SplitTarget> target, double s_f,
                                const Algorithm1Config& cfg) {
  if (!target) throw InvalidArgumentError("run_algorithm1: null target");
  if (!(s_f >= 1)) throw InvalidArgumentError("run_algorithm1: s_f must be at least 1");
  if (cfg.chains < 2) throw InvalidArgumentError("run_algorithm1: need at least two chains");

  const Eigen::Index n = target->dimension();
  Algorithm1Result res;
  std::vector<TraceRow>* trace = cfg.trace_dimensions > 0 ? &res.trace : nullptr;

  ChainBatch batch(cfg.chains, n, cfg.seed);
  batch.initialize_from_prior(*target);
  std::shared_ptr<const TargetDensity> sampling_target = target;

  // Stage adapt0: bring the step size into the acceptance band with short
  // trajectories, starting small so early moves are not all rejected.
  StepSizeOptions adapt_opts;
  adapt_opts.target_accept = cfg.target_accept;
  adapt_opts.tolerance = cfg.accept_tolerance;
  adapt_opts.iterations = cfg.adapt_iterations;
  adapt_opts.leapfrogs = cfg.adapt_leapfrogs;
  adapt_opts.initial_step = 0.1;

  double h = 0.0;
  {
    StageTimer timer;
    long long grads_before = batch.gradient_evals;
    StepSizeResult adapt = adapt_step_size(*sampling_target, batch, adapt_opts, cfg.threads);
    h = adapt.step_size;
    StageRecord rec;
    rec.label = "adapt0";
    rec.step_size = h;
    rec.leapfrogs = cfg.adapt_leapfrogs;
    rec.draws_per_chain = cfg.adapt_iterations;
    rec.mean_accept = adapt.windowed_accept;
    rec.gradient_evals = batch.gradient_evals - grads_before;
    rec.wall_seconds = timer.seconds();
    res.stages.push_back(rec);
    if (!adapt.converged) {
      res.outcome = PlannerOutcome::kAdaptationFailure;
      append_warning(&res.warning, adapt.warning);
      return res;
    }
  }

  // Stage 1: fixed-length trajectories sized for a unit scale; the draws
  // exist to expose the largest posterior scale.
  int ell = leapfrogs_for(1.0, h, cfg.leapfrog_max);
  SampleTensor stage1(cfg.chains, n);
  {
    StageTimer timer;
    long long grads_before = batch.gradient_evals;
    TransitionStats stats = run_stage(*sampling_target, batch, h, ell, cfg.stage1_draws,
                                      &stage1, cfg, "stage1", trace);
    res.lambda1 = largest_scale_from(stage1);
    StageRecord rec;
    rec.label = "stage1";
    rec.step_size = h;
    rec.leapfrogs = ell;
    rec.draws_per_chain = cfg.stage1_draws;
    rec.mean_accept = stats.mean_accept_prob;
    rec.gradient_evals = batch.gradient_evals - grads_before;
    rec.wall_seconds = timer.seconds();
    res.stages.push_back(rec);
  }

  // Stage 2: trajectories long enough to traverse the largest scale; the
  // acceptance rate here feeds the condition estimate.
  ell = leapfrogs_for(res.lambda1, h, cfg.leapfrog_max);
  SampleTensor stage2(cfg.chains, n);
  {
    StageTimer timer;
    long long grads_before = batch.gradient_evals;
    TransitionStats stats = run_stage(*sampling_target, batch, h, ell, cfg.stage2_draws,
                                      &stage2, cfg, "stage2", trace);
    res.lambda1 = largest_scale_from(stage2);
    res.kappa0 = estimate_kappa_from_acceptance(res.lambda1, h, stats.mean_accept_prob);
    RhatResult rhat = split_rhat(stage2);

    StageRecord rec;
    rec.label = "stage2";
    rec.step_size = h;
    rec.leapfrogs = ell;
    rec.draws_per_chain = cfg.stage2_draws;
    rec.mean_accept = stats.mean_accept_prob;
    rec.kappa_estimate = res.kappa0.kappa;
    rec.gradient_evals = batch.gradient_evals - grads_before;
    rec.max_rhat = rhat.max_rhat;
    rec.wall_seconds = timer.seconds();
    res.stages.push_back(rec);

    if (rhat.any_degenerate || !(rhat.max_rhat < cfg.rhat_stage2_threshold)) {
      res.outcome = PlannerOutcome::kRestartWithTempering;
      std::ostringstream msg;
      msg << "chains failed to mix by end of stage2 (max split R-hat " << rhat.max_rhat
          << ", threshold " << cfg.rhat_stage2_threshold << ")";
      append_warning(&res.warning, msg.str());
      return res;
    }
  }

  res.speedup = plan_speedup(res.kappa0.kappa, n, s_f, cfg.nuts_cost_multiplier);

  if (res.speedup.predicted_speedup > 1.0) {
    // Collect decorrelated draws with the self-terminating sampler until the
    // mean effective size covers the covariance estimate's appetite.
    SampleTensor pool(cfg.chains, n);
    {
      StageTimer timer;
      long long grads_before = batch.gradient_evals;
      long long drawn = 0;
      double mean_ess = 0.0;
      double last_mean_depth = 0.0;
      while (drawn < cfg.max_extra_draws) {
        Eigen::Index before = pool.draws(0);
        NutsRunStats stats = nuts_run(*sampling_target, batch, h, cfg.ess_check_interval,
                                      &pool, {}, cfg.threads);
        drawn += cfg.ess_check_interval;
        last_mean_depth = stats.mean_depth;
        record_trace_from_tensor(trace, "nuts", pool, before, cfg.trace_dimensions);
        if (pool.draws(0) >= 8) {
          mean_ess = effective_sample_size(pool).mean_ess;
          if (mean_ess >= static_cast<double>(res.speedup.s_star)) break;
        }
      }
      StageRecord rec;
      rec.label = "nuts";
      rec.step_size = h;
      rec.leapfrogs = 0;  // self-terminating; see gradient count instead
      rec.draws_per_chain = drawn;
      rec.mean_depth = last_mean_depth;
      rec.gradient_evals = batch.gradient_evals - grads_before;
      rec.wall_seconds = timer.seconds();
      res.stages.push_back(rec);
      if (mean_ess < static_cast<double>(res.speedup.s_star)) {
        append_warning(&res.warning,
                       "decorrelation stage hit its draw budget before the requested "
                       "effective size; covariance estimate may be noisy");
      }
    }

    // Build the covariance factor in original coordinates, falling back to
    // the diagonal when a full factor is not identifiable.
    Eigen::MatrixXd factor;
    PreconditionMode mode = PreconditionMode::kFull;
    const Eigen::MatrixXd stacked = pool.stacked();
    if (res.speedup.s_star <= static_cast<long long>(n)) {
      mode = PreconditionMode::kDiag;
    } else {
      try {
        factor = sample_covariance_factor(stacked).matrix();
      } catch (const Error&) {
        mode = PreconditionMode::kDiag;
      }
    }
    if (mode == PreconditionMode::kDiag) {
      factor = diagonal_stddev_factor(stacked).matrix();
      res.diagonal_fallback = true;
      append_warning(&res.warning,
                     "covariance factor not identifiable from the decorrelated draws; "
                     "using the diagonal preconditioner");
    }
    sampling_target = install_preconditioner(batch, target, factor, mode);
    res.preconditioned = true;

    // Stage adapt1: the sampling space has changed, so the step size must be
    // re-found; unit trajectory scale is the point of preconditioning.
    {
      StageTimer timer;
      long long grads_before = batch.gradient_evals;
      StepSizeResult adapt =
          adapt_step_size(*sampling_target, batch, adapt_opts, cfg.threads);
      h = adapt.step_size;
      StageRecord rec;
      rec.label = "adapt1";
      rec.step_size = h;
      rec.leapfrogs = cfg.adapt_leapfrogs;
      rec.draws_per_chain = cfg.adapt_iterations;
      rec.mean_accept = adapt.windowed_accept;
      rec.gradient_evals = batch.gradient_evals - grads_before;
      rec.wall_seconds = timer.seconds();
      res.stages.push_back(rec);
      if (!adapt.converged) {
        res.outcome = PlannerOutcome::kAdaptationFailure;
        append_warning(&res.warning, adapt.warning);
        return res;
      }
    }
    ell = leapfrogs_for(1.0, h, cfg.leapfrog_max);
  }

  // Final stage: run until the minimum effective size clears s_f, with the
  // mixing gate enforced before completion counts.
  res.samples = SampleTensor(cfg.chains, n);
  {
    StageTimer timer;
    long long grads_before = batch.gradient_evals;
    TransitionStats totals;
    long long blocks = 0;
    double min_ess = 0.0;
    double max_rhat = 0.0;
    bool ess_met = false;
    bool diagnosed = false;
    bool rhat_bad = false;
    long long drawn = 0;
    while (drawn < cfg.max_extra_draws) {
      TransitionStats s = run_stage(*sampling_target, batch, h, ell, cfg.ess_check_interval,
                                    &res.samples, cfg, "final", trace);
      totals.mean_accept_prob += s.mean_accept_prob;
      totals.accepted += s.accepted;
      totals.divergent += s.divergent;
      blocks += 1;
      drawn += cfg.ess_check_interval;
      if (res.samples.draws(0) < 8) continue;  // too short for the diagnostics yet
      EssResult ess = effective_sample_size(res.samples);
      RhatResult rhat = split_rhat(res.samples);
      diagnosed = true;
      min_ess = ess.min_ess;
      max_rhat = rhat.max_rhat;
      rhat_bad = rhat.any_degenerate || !(max_rhat < cfg.rhat_final_threshold);
      if (min_ess >= s_f && !rhat_bad) {
        ess_met = true;
        break;
      }
    }
    if (blocks > 0) totals.mean_accept_prob /= blocks;

    StageRecord rec;
    rec.label = "final";
    rec.step_size = h;
    rec.leapfrogs = ell;
    rec.draws_per_chain = drawn;
    rec.mean_accept = totals.mean_accept_prob;
    rec.gradient_evals = batch.gradient_evals - grads_before;
    rec.max_rhat = max_rhat;
    rec.wall_seconds = timer.seconds();

    // Acceptance-based condition of the space the sampler actually walked,
    // using the largest scale seen by the chains there.
    std::vector<Eigen::MatrixXd> z_chains = res.samples.to_matrices();
    if (batch.has_transform()) {
      for (auto& m : z_chains) {
        for (Eigen::Index r = 0; r < m.rows(); ++r) {
          m.row(r) = batch.from_original(m.row(r).transpose()).transpose();
        }
      }
    }
    SampleTensor z_draws(cfg.chains, n);
    for (int c = 0; c < cfg.chains; ++c) {
      for (Eigen::Index r = 0; r < z_chains[c].rows(); ++r) {
        z_draws.append(c, z_chains[c].row(r).transpose());
      }
    }
    const double lambda1_z = largest_scale_from(z_draws);
    res.kappa_final =
        estimate_kappa_from_acceptance(lambda1_z, h, totals.mean_accept_prob).kappa;
    rec.kappa_estimate = res.kappa_final;
    res.stages.push_back(rec);

    if (!ess_met) {
      if (diagnosed && rhat_bad) {
        res.outcome = PlannerOutcome::kRestartWithTempering;
        std::ostringstream msg;
        msg << "chains failed to mix during the final stage (max split R-hat " << max_rhat
            << ", threshold " << cfg.rhat_final_threshold << ")";
        append_warning(&res.warning, msg.str());
        return res;
      }
      append_warning(&res.warning,
                     "final stage hit its draw budget before reaching the effective-size "
                     "target");
    }
  }

  res.outcome = PlannerOutcome::kCompleted;
  res.report = compile_report(res.samples, res.stages);
  return res;
}

void write_stage_trace_csv(const std::vector<TraceRow>& trace, std::ostream& os) {
  os << "# schema: stage_trace v1\n";
  os << "stage,transition_index,chain,dimension,value\n";
  char buf[64];
  for (const TraceRow& row : trace) {
    std::snprintf(buf, sizeof buf, "%.17g", row.value);
    os << row.stage << ',' << row.transition << ',' << row.chain << ',' << row.dimension
       << ',' << buf << '\n';
  }
}

}  // namespace ips
