#include "ipsampler/hmc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "ipsampler/parallel.hpp"

namespace ips {

namespace {

bool finite_eval(const LogDensityValue& e) {
  return std::isfinite(e.value) && e.gradient.allFinite();
}

}  // namespace

LeapfrogResult leapfrog(const TargetDensity& target, const Eigen::VectorXd& position,
                        const Eigen::VectorXd& momentum, double step_size, int steps,
                        const LogDensityValue* initial_eval, double divergence_threshold) {
  if (steps < 1) throw InvalidArgumentError("leapfrog: need at least one step");
  if (!(std::isfinite(step_size)) || step_size == 0.0) {
    throw InvalidArgumentError("leapfrog: step size must be finite and nonzero");
  }
  if (position.size() != target.dimension() || momentum.size() != target.dimension()) {
    throw InvalidArgumentError("leapfrog: state has wrong dimension");
  }

  LeapfrogResult out;
  out.final_eval = initial_eval ? *initial_eval : target.eval(position);
  out.gradient_evals = initial_eval ? 0 : 1;
  out.position = position;
  out.momentum = momentum;

  const double h_start = -out.final_eval.value + 0.5 * momentum.squaredNorm();
  if (!std::isfinite(h_start) || !finite_eval(out.final_eval)) {
    out.divergent = true;
    out.energy_error = std::numeric_limits<double>::infinity();
    return out;
  }

  out.momentum += 0.5 * step_size * out.final_eval.gradient;
  for (int s = 0; s < steps; ++s) {
    out.position += step_size * out.momentum;
    out.final_eval = target.eval(out.position);
    ++out.gradient_evals;
    if (!finite_eval(out.final_eval)) {
      out.divergent = true;
      out.energy_error = std::numeric_limits<double>::infinity();
      return out;
    }
    const double kick = (s + 1 < steps) ? step_size : 0.5 * step_size;
    out.momentum += kick * out.final_eval.gradient;
  }

  const double h_end = -out.final_eval.value + 0.5 * out.momentum.squaredNorm();
  out.energy_error = h_end - h_start;
  if (!std::isfinite(out.energy_error) || std::abs(out.energy_error) > divergence_threshold) {
    out.divergent = true;
  }
  return out;
}

ChainBatch::ChainBatch(int chains, Eigen::Index dim, std::uint64_t seed, std::uint64_t replica)
    : dim_(dim), seed_(seed), replica_(replica) {
  if (chains < 1) throw InvalidArgumentError("ChainBatch: need at least one chain");
  if (dim < 1) throw InvalidArgumentError("ChainBatch: dimension must be >= 1");
  rngs_.reserve(chains);
  positions_.assign(chains, Eigen::VectorXd::Zero(dim));
  cache_.resize(chains);
  cache_valid_.assign(chains, 0);
  for (int c = 0; c < chains; ++c) {
    rngs_.emplace_back(seed, std::initializer_list<std::uint64_t>{
                                 static_cast<std::uint64_t>(c), replica});
  }
}

void ChainBatch::set_position(int chain, const Eigen::VectorXd& z) {
  if (z.size() != dim_) throw InvalidArgumentError("ChainBatch: position has wrong dimension");
  positions_.at(chain) = z;
  cache_valid_.at(chain) = 0;
}

void ChainBatch::set_original_position(int chain, const Eigen::VectorXd& x) {
  set_position(chain, from_original(x));
}

Eigen::MatrixXd ChainBatch::positions() const {
  Eigen::MatrixXd out(chains(), dim_);
  for (int c = 0; c < chains(); ++c) out.row(c) = positions_[c].transpose();
  return out;
}

void ChainBatch::install_transform(const Eigen::MatrixXd& factor) {
  if (factor.rows() != dim_ || factor.cols() != dim_) {
    throw InvalidArgumentError("ChainBatch: transform must be square in the chain dimension");
  }
  // Re-express every chain's current location in the new sampling space
  // before swapping the factor in, so the original-space state is unchanged.
  std::vector<Eigen::VectorXd> originals;
  originals.reserve(positions_.size());
  for (const auto& z : positions_) originals.push_back(to_original(z));

  Eigen::PartialPivLU<Eigen::MatrixXd> lu(factor);
  const Eigen::MatrixXd& u = lu.matrixLU();
  double max_diag = 0.0, min_diag = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < u.rows(); ++i) {
    max_diag = std::max(max_diag, std::abs(u(i, i)));
    min_diag = std::min(min_diag, std::abs(u(i, i)));
  }
  if (!(min_diag > max_diag * 1e-14)) {
    throw SingularMatrixError("ChainBatch: transform factor is numerically singular");
  }
  transform_ = factor;
  transform_lu_ = std::move(lu);
  for (std::size_t c = 0; c < positions_.size(); ++c) {
    positions_[c] = transform_lu_.solve(originals[c]);
  }
  invalidate_cache();
}

void ChainBatch::clear_transform() {
  if (!has_transform()) return;
  for (auto& z : positions_) z = transform_ * z;
  transform_.resize(0, 0);
  invalidate_cache();
}

Eigen::VectorXd ChainBatch::to_original(const Eigen::VectorXd& z) const {
  return has_transform() ? Eigen::VectorXd(transform_ * z) : z;
}

Eigen::VectorXd ChainBatch::from_original(const Eigen::VectorXd& x) const {
  return has_transform() ? Eigen::VectorXd(transform_lu_.solve(x)) : x;
}

Eigen::MatrixXd ChainBatch::original_positions() const {
  Eigen::MatrixXd out(chains(), dim_);
  for (int c = 0; c < chains(); ++c) out.row(c) = to_original(positions_[c]).transpose();
  return out;
}

void ChainBatch::initialize_from_prior(const SplitTarget& target) {
  if (target.dimension() != dim_) {
    throw InvalidArgumentError("ChainBatch: prior dimension does not match batch");
  }
  for (int c = 0; c < chains(); ++c) {
    set_original_position(c, target.sample_prior(rngs_[c]));
  }
}

void ChainBatch::prepare_cache(const TargetDensity& target) {
  // The key is the target's address; callers keep targets alive for the
  // duration of a run, so address reuse is not a concern here.
  if (cache_key_ != &target) {
    invalidate_cache();
    cache_key_ = &target;
  }
}

const LogDensityValue* ChainBatch::cached_eval(int chain, const TargetDensity& target) const {
  if (cache_key_ != &target || !cache_valid_.at(chain)) return nullptr;
  return &cache_.at(chain);
}

void ChainBatch::store_eval(int chain, const TargetDensity& target, LogDensityValue eval) {
  if (cache_key_ != &target) {
    throw InvalidArgumentError("ChainBatch: prepare_cache was not called for this target");
  }
  cache_.at(chain) = std::move(eval);
  cache_valid_.at(chain) = 1;
}

void ChainBatch::invalidate_cache() {
  std::fill(cache_valid_.begin(), cache_valid_.end(), 0);
  cache_key_ = nullptr;
}

void ChainBatch::invalidate_chain_cache(int chain) { cache_valid_.at(chain) = 0; }

TransitionStats hmc_transition(const TargetDensity& target, ChainBatch& batch,
                               double step_size, int leapfrogs, int threads,
                               double divergence_threshold) {
  if (target.dimension() != batch.dim()) {
    throw InvalidArgumentError("hmc_transition: target dimension does not match batch");
  }
  const int n_chains = batch.chains();
  std::vector<double> accept_prob(n_chains, 0.0);
  std::vector<char> accepted(n_chains, 0);
  std::vector<char> divergent(n_chains, 0);
  std::vector<long long> grads(n_chains, 0);

  batch.prepare_cache(target);

  parallel_for(n_chains, threads, [&](int c) {
    CounterRng& rng = batch.rng(c);
    const Eigen::VectorXd xi = rng.normal_vector(batch.dim());
    if (batch.cached_eval(c, target) == nullptr) {
      batch.store_eval(c, target, target.eval(batch.position(c)));
      grads[c] += 1;
    }
    LeapfrogResult lf = leapfrog(target, batch.position(c), xi, step_size, leapfrogs,
                                 batch.cached_eval(c, target), divergence_threshold);
    grads[c] += lf.gradient_evals;
    const double u = rng.uniform();
    double a = 0.0;
    if (!lf.divergent) {
      a = std::min(1.0, std::exp(-lf.energy_error));
    }
    accept_prob[c] = a;
    divergent[c] = lf.divergent ? 1 : 0;
    if (!lf.divergent && u < a) {
      batch.set_position(c, lf.position);
      batch.store_eval(c, target, std::move(lf.final_eval));
      accepted[c] = 1;
    }
  });

  TransitionStats stats;
  for (int c = 0; c < n_chains; ++c) {
    stats.mean_accept_prob += accept_prob[c];
    stats.accepted += accepted[c];
    stats.divergent += divergent[c];
    batch.gradient_evals += grads[c];
  }
  stats.mean_accept_prob /= n_chains;
  batch.transitions += 1;
  batch.accepted += stats.accepted;
  batch.divergences += stats.divergent;
  return stats;
}

StepSizeResult adapt_step_size(const TargetDensity& target, ChainBatch& batch,
                               const StepSizeOptions& opts, int threads) {
  if (opts.iterations < 1) throw InvalidArgumentError("adapt_step_size: iterations must be >= 1");
  if (opts.window < 1) throw InvalidArgumentError("adapt_step_size: window must be >= 1");
  if (!(opts.min_step > 0) || !(opts.max_step > opts.min_step)) {
    throw InvalidArgumentError("adapt_step_size: step bounds are inconsistent");
  }
  if (!(opts.target_accept > 0) || !(opts.target_accept < 1)) {
    throw InvalidArgumentError("adapt_step_size: target acceptance must lie in (0, 1)");
  }

  StepSizeResult res;
  double log_h = std::log(std::clamp(opts.initial_step, opts.min_step, opts.max_step));

  if (opts.bracket_first) {
    // Coarse doubling or halving until the acceptance crosses the target,
    // so the stochastic refinement starts within a factor two of its
    // destination instead of crawling there on decaying gains.
    TransitionStats probe = hmc_transition(target, batch, std::exp(log_h), opts.leapfrogs,
                                           threads, opts.divergence_threshold);
    const bool grow = probe.mean_accept_prob > opts.target_accept;
    const double step = grow ? std::log(2.0) : -std::log(2.0);
    for (int i = 0; i < 40; ++i) {
      const double next = log_h + step;
      if (next > std::log(opts.max_step) || next < std::log(opts.min_step)) break;
      probe = hmc_transition(target, batch, std::exp(next), opts.leapfrogs, threads,
                             opts.divergence_threshold);
      log_h = next;
      if ((probe.mean_accept_prob > opts.target_accept) != grow) break;
    }
  }

  res.step_trace.reserve(opts.iterations);
  res.accept_trace.reserve(opts.iterations);

  for (int t = 1; t <= opts.iterations; ++t) {
    const double h = std::exp(log_h);
    TransitionStats stats = hmc_transition(target, batch, h, opts.leapfrogs, threads,
                                           opts.divergence_threshold);
    res.step_trace.push_back(h);
    res.accept_trace.push_back(stats.mean_accept_prob);
    const double gain = std::pow(static_cast<double>(t), -opts.learning_exponent);
    log_h += gain * (stats.mean_accept_prob - opts.target_accept);
    log_h = std::clamp(log_h, std::log(opts.min_step), std::log(opts.max_step));
  }

  res.step_size = std::exp(log_h);
  const int w = std::min<int>(opts.window, static_cast<int>(res.accept_trace.size()));
  double acc = 0.0;
  for (int i = 0; i < w; ++i) acc += res.accept_trace[res.accept_trace.size() - 1 - i];
  res.windowed_accept = acc / w;
  res.converged = std::abs(res.windowed_accept - opts.target_accept) <= opts.tolerance;
  if (!res.converged) {
    std::ostringstream msg;
    msg << "step size adaptation did not settle: windowed acceptance "
        << res.windowed_accept << " vs target " << opts.target_accept;
    if (res.step_size >= opts.max_step * (1 - 1e-12)) {
      msg << " (step size pinned at the ceiling " << opts.max_step << ")";
    } else if (res.step_size <= opts.min_step * (1 + 1e-12)) {
      msg << " (step size pinned at the floor " << opts.min_step << ")";
    }
    res.warning = msg.str();
  }
  return res;
}

TransitionStats hmc_run(const TargetDensity& target, ChainBatch& batch, double step_size,
                        int leapfrogs, int draws, SampleTensor* out, int threads,
                        double divergence_threshold) {
  if (draws < 0) throw InvalidArgumentError("hmc_run: negative draw count");
  TransitionStats total;
  for (int d = 0; d < draws; ++d) {
    TransitionStats s =
        hmc_transition(target, batch, step_size, leapfrogs, threads, divergence_threshold);
    total.mean_accept_prob += s.mean_accept_prob;
    total.accepted += s.accepted;
    total.divergent += s.divergent;
    if (out != nullptr) {
      for (int c = 0; c < batch.chains(); ++c) {
        out->append(c, batch.to_original(batch.position(c)));
      }
    }
  }
  if (draws > 0) total.mean_accept_prob /= draws;
  return total;
}

}  // namespace ips
