#include "ipsampler/nuts.hpp"

#include <cmath>
#include <limits>
#include <utility>

#include "ipsampler/mathutil.hpp"
#include "ipsampler/parallel.hpp"

namespace ips {

namespace {

struct TreeEnd {
  Eigen::VectorXd x;
  Eigen::VectorXd xi;
  LogDensityValue eval;
};

struct Subtree {
  TreeEnd inner;   // end closest to the existing trajectory
  TreeEnd outer;   // end the next doubling would extend from
  Eigen::VectorXd candidate;
  LogDensityValue candidate_eval;
  double log_weight = -std::numeric_limits<double>::infinity();
  bool valid = false;
  bool divergent = false;
  int steps = 0;
};

bool finite_eval(const LogDensityValue& e) {
  return std::isfinite(e.value) && e.gradient.allFinite();
}

// Momentum alignment test between the two ends of a trajectory segment. The
// segment is abandoned once either end's momentum points back across it.
bool turned(const TreeEnd& minus, const TreeEnd& plus) {
  const Eigen::VectorXd span = plus.x - minus.x;
  return span.dot(minus.xi) < 0.0 || span.dot(plus.xi) < 0.0;
}

// One leapfrog step in the signed direction; the leaf's weight is the
// canonical density relative to the trajectory's initial energy.
Subtree build_leaf(const TargetDensity& target, const TreeEnd& from, double signed_step,
                   double h0, double divergence_threshold) {
  Subtree leaf;
  leaf.steps = 1;
  TreeEnd end;
  end.x = from.x;
  end.xi = from.xi;
  end.eval = from.eval;

  end.xi += 0.5 * signed_step * end.eval.gradient;
  end.x += signed_step * end.xi;
  end.eval = target.eval(end.x);
  if (!finite_eval(end.eval)) {
    leaf.divergent = true;
    return leaf;
  }
  end.xi += 0.5 * signed_step * end.eval.gradient;

  const double h = -end.eval.value + 0.5 * end.xi.squaredNorm();
  const double dh = h - h0;
  if (!std::isfinite(dh) || std::abs(dh) > divergence_threshold) {
    leaf.divergent = true;
    return leaf;
  }
  leaf.log_weight = -dh;
  leaf.valid = true;
  leaf.candidate = end.x;
  leaf.candidate_eval = end.eval;
  leaf.inner = end;
  leaf.outer = std::move(end);
  return leaf;
}

// A balanced segment of 2^depth leapfrog steps grown outward from `from`.
// Invalid subtrees (turned or divergent) are reported as such and their
// candidates are never used.
Subtree build_tree(const TargetDensity& target, const TreeEnd& from, double signed_step,
                   int depth, double h0, CounterRng& rng, double divergence_threshold) {
  if (depth == 0) return build_leaf(target, from, signed_step, h0, divergence_threshold);

  Subtree first = build_tree(target, from, signed_step, depth - 1, h0, rng,
                             divergence_threshold);
  if (!first.valid) return first;

  Subtree second = build_tree(target, first.outer, signed_step, depth - 1, h0, rng,
                              divergence_threshold);
  first.steps += second.steps;
  if (!second.valid) {
    first.valid = false;
    first.divergent = first.divergent || second.divergent;
    return first;
  }

  const double total = log_sum_exp(first.log_weight, second.log_weight);
  if (std::isfinite(total) &&
      rng.uniform() < std::exp(second.log_weight - total)) {
    first.candidate = second.candidate;
    first.candidate_eval = second.candidate_eval;
  }
  first.log_weight = total;
  first.outer = second.outer;
  // Orientation: inner..outer always runs along the integration direction, so
  // the turn test needs the span ordered the same way momenta point.
  if (signed_step > 0) {
    if (turned(first.inner, first.outer)) first.valid = false;
  } else {
    if (turned(first.outer, first.inner)) first.valid = false;
  }
  return first;
}

}  // namespace

NutsDrawStats nuts_transition_chain(const TargetDensity& target, ChainBatch& batch, int chain,
                                    double step_size, const NutsOptions& opts) {
  if (!(step_size > 0) || !std::isfinite(step_size)) {
    throw InvalidArgumentError("nuts_transition_chain: step size must be positive");
  }
  if (opts.max_doublings < 1) {
    throw InvalidArgumentError("nuts_transition_chain: need at least one doubling");
  }

  NutsDrawStats stats;
  CounterRng& rng = batch.rng(chain);

  LogDensityValue eval0;
  if (const LogDensityValue* cached = batch.cached_eval(chain, target)) {
    eval0 = *cached;
  } else {
    eval0 = target.eval(batch.position(chain));
    batch.store_eval(chain, target, eval0);
    ++stats.gradient_evals;
  }

  const Eigen::VectorXd xi0 = rng.normal_vector(batch.dim());
  const double h0 = -eval0.value + 0.5 * xi0.squaredNorm();
  if (!std::isfinite(h0) || !finite_eval(eval0)) {
    stats.divergent = true;
    stats.stopped_at_depth_zero = true;
    return stats;
  }

  TreeEnd minus{batch.position(chain), xi0, eval0};
  TreeEnd plus = minus;
  Eigen::VectorXd candidate = batch.position(chain);
  LogDensityValue candidate_eval = eval0;
  double log_weight = 0.0;  // the seed state has unit relative weight

  for (int d = 0; d < opts.max_doublings; ++d) {
    const bool forward = rng.uniform() < 0.5;
    const double signed_step = forward ? step_size : -step_size;
    const TreeEnd& edge = forward ? plus : minus;
    Subtree sub = build_tree(target, edge, signed_step, d, h0, rng,
                             opts.divergence_threshold);
    stats.gradient_evals += sub.steps;
    stats.divergent = stats.divergent || sub.divergent;
    if (!sub.valid) {
      if (d == 0) stats.stopped_at_depth_zero = true;
      break;
    }

    const double total = log_sum_exp(log_weight, sub.log_weight);
    if (rng.uniform() < std::exp(sub.log_weight - total)) {
      candidate = sub.candidate;
      candidate_eval = sub.candidate_eval;
    }
    log_weight = total;
    if (forward) {
      plus = sub.outer;
    } else {
      minus = sub.outer;
    }
    stats.depth = d + 1;
    if (turned(minus, plus)) break;
  }

  batch.set_position(chain, candidate);
  batch.store_eval(chain, target, std::move(candidate_eval));
  return stats;
}

NutsRunStats nuts_run(const TargetDensity& target, ChainBatch& batch, double step_size,
                      int draws, SampleTensor* out, const NutsOptions& opts, int threads) {
  if (target.dimension() != batch.dim()) {
    throw InvalidArgumentError("nuts_run: target dimension does not match batch");
  }
  if (draws < 0) throw InvalidArgumentError("nuts_run: negative draw count");

  NutsRunStats total;
  const int n_chains = batch.chains();
  std::vector<NutsDrawStats> per_chain(n_chains);
  long long depth_sum = 0;

  batch.prepare_cache(target);
  for (int d = 0; d < draws; ++d) {
    parallel_for(n_chains, threads, [&](int c) {
      per_chain[c] = nuts_transition_chain(target, batch, c, step_size, opts);
    });
    for (int c = 0; c < n_chains; ++c) {
      const NutsDrawStats& s = per_chain[c];
      total.draws += 1;
      total.gradient_evals += s.gradient_evals;
      total.divergences += s.divergent ? 1 : 0;
      total.depth_zero_stops += s.stopped_at_depth_zero ? 1 : 0;
      depth_sum += s.depth;
      if (out != nullptr) out->append(c, batch.to_original(batch.position(c)));
    }
  }
  batch.gradient_evals += total.gradient_evals;
  batch.transitions += draws;
  batch.divergences += total.divergences;

  if (total.draws > 0) {
    total.mean_depth = static_cast<double>(depth_sum) / static_cast<double>(total.draws);
    if (total.depth_zero_stops * 2 > total.draws) {
      total.warning =
          "most trajectories terminated before the first doubling; the step size "
          "is likely too large for this target";
    }
  }
  return total;
}

}  // namespace ips
