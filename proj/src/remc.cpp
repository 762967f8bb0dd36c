#include "ipsampler/remc.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>

#include "ipsampler/mathutil.hpp"
#include "ipsampler/parallel.hpp"
#include "ipsampler/spectral.hpp"

namespace ips {

namespace {

// Stream id for swap coins, distinct from every (chain, replica) pair so a
// replica-exchange run consumes exactly the same chain streams as the
// equivalent plain-HMC run.
constexpr std::uint64_t kSwapStreamId = 0x73776170ULL;

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

class TemperedTarget : public TargetDensity {
 public:
  TemperedTarget(std::shared_ptr<const SplitTarget> base, double temperature,
                 TemperingMode mode)
      : base_(std::move(base)),
        temperature_(temperature),
        beta_(std::isinf(temperature) ? 0.0 : 1.0 / temperature),
        mode_(mode) {
    if (!base_) throw InvalidArgumentError("tempered_density: target is null");
    if (std::isnan(temperature_) || temperature_ < 1.0) {
      throw InvalidArgumentError("tempered_density: temperature must be >= 1");
    }
    if (mode_ == TemperingMode::kPosterior && std::isinf(temperature_)) {
      throw InvalidArgumentError(
          "tempered_density: posterior tempering needs a finite temperature");
    }
  }

  Eigen::Index dimension() const override { return base_->dimension(); }

  LogDensityValue eval(const Eigen::VectorXd& x) const override {
    if (mode_ == TemperingMode::kPosterior) {
      LogDensityValue e = base_->eval(x);  // already carries the untempered split
      e.value *= beta_;
      e.gradient *= beta_;
      return e;
    }
    LogDensityValue p = base_->eval_prior(x);
    LogDensityValue l = base_->eval_likelihood(x);
    LogDensityValue out;
    out.prior_value = p.value;
    out.likelihood_value = l.value;
    if (beta_ == 0.0) {
      // T = inf is exactly the prior. The likelihood value is still recorded
      // because swap moves against this rung need it.
      out.value = p.value;
      out.gradient = std::move(p.gradient);
      return out;
    }
    out.value = p.value + beta_ * l.value;
    out.gradient = std::move(p.gradient);
    out.gradient += beta_ * l.gradient;
    return out;
  }

 private:
  std::shared_ptr<const SplitTarget> base_;
  double temperature_;
  double beta_;
  TemperingMode mode_;
};

void csv_number(char* buf, std::size_t n, double v) { std::snprintf(buf, n, "%.17g", v); }

}  // namespace

std::shared_ptr<const TargetDensity> tempered_density(
    std::shared_ptr<const SplitTarget> target, double temperature, TemperingMode mode) {
  return std::make_shared<TemperedTarget>(std::move(target), temperature, mode);
}

void TemperatureLadder::validate() const {
  const int r = replica_count();
  if (r < 1) throw InvalidArgumentError("TemperatureLadder: need at least one rung");
  if (temperatures.front() != 1.0) {
    throw InvalidArgumentError("TemperatureLadder: the coldest temperature must be exactly 1");
  }
  for (double t : temperatures) {
    if (std::isnan(t) || t < 1.0) {
      throw InvalidArgumentError("TemperatureLadder: temperatures must be >= 1");
    }
  }
  for (int i = 0; i + 1 < r; ++i) {
    if (!(temperatures[i] < temperatures[i + 1])) {
      throw InvalidArgumentError("TemperatureLadder: temperatures must be strictly increasing");
    }
  }
  if (mode == TemperingMode::kPosterior && std::isinf(temperatures.back())) {
    throw InvalidArgumentError("TemperatureLadder: posterior tempering needs a finite ceiling");
  }
  if (!step_sizes.empty() && static_cast<int>(step_sizes.size()) != r) {
    throw InvalidArgumentError("TemperatureLadder: step sizes must cover every rung");
  }
  const std::size_t edges = static_cast<std::size_t>(edge_count());
  if (!swap_attempts.empty() || !swap_accepts.empty()) {
    if (swap_attempts.size() != edges || swap_accepts.size() != edges) {
      throw InvalidArgumentError("TemperatureLadder: swap counters must cover every edge");
    }
    for (std::size_t e = 0; e < edges; ++e) {
      if (swap_attempts[e] < 0 || swap_accepts[e] < 0 || swap_accepts[e] > swap_attempts[e]) {
        throw InvalidArgumentError("TemperatureLadder: swap accepts exceed attempts");
      }
    }
  }
}

void TemperatureLadder::reset_counters() {
  swap_attempts.assign(edge_count(), 0);
  swap_accepts.assign(edge_count(), 0);
}

std::vector<double> TemperatureLadder::edge_rates() const {
  const std::size_t edges = static_cast<std::size_t>(edge_count());
  if (swap_attempts.size() != edges || swap_accepts.size() != edges) {
    throw InvalidArgumentError("TemperatureLadder: swap counters are not initialized");
  }
  std::vector<double> rates(edges);
  for (std::size_t e = 0; e < edges; ++e) {
    if (swap_attempts[e] < 1) {
      throw InvalidArgumentError("TemperatureLadder: an edge has no swap attempts yet");
    }
    rates[e] = static_cast<double>(swap_accepts[e]) / static_cast<double>(swap_attempts[e]);
  }
  return rates;
}

SwapStatistics summarize_swaps(const TemperatureLadder& ladder) {
  SwapStatistics stats;
  stats.edge_rates = ladder.edge_rates();
  for (double p : stats.edge_rates) {
    stats.lambda_hat += 1.0 - p;
    stats.gamma_hat += p > 0.0 ? (1.0 - p) / p : std::numeric_limits<double>::infinity();
  }
  return stats;
}

ReplicaSystem::ReplicaSystem(std::shared_ptr<const SplitTarget> target,
                             TemperatureLadder ladder, int copies, std::uint64_t seed)
    : target_(std::move(target)),
      ladder_(std::move(ladder)),
      copies_(copies),
      seed_(seed),
      swap_rng_(seed, {kSwapStreamId}) {
  if (!target_) throw InvalidArgumentError("ReplicaSystem: target is null");
  if (copies_ < 1) throw InvalidArgumentError("ReplicaSystem: need at least one copy");
  ladder_.validate();
  if (ladder_.swap_attempts.empty()) ladder_.reset_counters();
  const int r = ladder_.replica_count();
  rungs_.reserve(r);
  tempered_.reserve(r);
  for (int i = 0; i < r; ++i) {
    rungs_.emplace_back(copies_, target_->dimension(), seed_, static_cast<std::uint64_t>(i));
    tempered_.push_back(tempered_density(target_, ladder_.temperatures[i], ladder_.mode));
  }
  walker_at_.resize(copies_, r);
  for (int c = 0; c < copies_; ++c) {
    for (int i = 0; i < r; ++i) walker_at_(c, i) = i;
  }
}

double ReplicaSystem::beta(int r) const {
  const double t = ladder_.temperatures.at(r);
  return std::isinf(t) ? 0.0 : 1.0 / t;
}

void ReplicaSystem::set_temperatures(const std::vector<double>& temperatures) {
  if (temperatures.size() != ladder_.temperatures.size()) {
    throw InvalidArgumentError("ReplicaSystem: the rung count cannot change mid-run");
  }
  TemperatureLadder next = ladder_;
  next.temperatures = temperatures;
  next.reset_counters();
  next.validate();
  ladder_ = std::move(next);
  for (int i = 0; i < ladder_.replica_count(); ++i) {
    tempered_[i] = tempered_density(target_, ladder_.temperatures[i], ladder_.mode);
  }
}

void ReplicaSystem::initialize_from_prior() {
  for (auto& batch : rungs_) batch.initialize_from_prior(*target_);
}

void ReplicaSystem::explore(int leapfrogs, int threads) {
  const int r = replica_count();
  if (static_cast<int>(ladder_.step_sizes.size()) != r) {
    throw InvalidArgumentError("ReplicaSystem: step sizes are not calibrated");
  }
  parallel_for(r, threads, [&](int i) {
    ChainBatch& batch = rungs_[i];
    if (std::isinf(ladder_.temperatures[i])) {
      // The hottest rung of a likelihood-tempered ladder is the prior itself,
      // so it is sampled exactly; one evaluation per copy warms the swap cache.
      const TargetDensity& density = *tempered_[i];
      batch.prepare_cache(density);
      for (int c = 0; c < copies_; ++c) {
        batch.set_position(c, target_->sample_prior(batch.rng(c)));
        batch.store_eval(c, density, density.eval(batch.position(c)));
        batch.gradient_evals += 1;
      }
    } else {
      hmc_transition(*tempered_[i], batch, ladder_.step_sizes[i], leapfrogs, 1);
    }
  });
}

void ReplicaSystem::explore_exact(const ExactRungSampler& draw) {
  for (int i = 0; i < replica_count(); ++i) {
    ChainBatch& batch = rungs_[i];
    const TargetDensity& density = *tempered_[i];
    batch.prepare_cache(density);
    for (int c = 0; c < copies_; ++c) {
      batch.set_position(c, draw(i, c, batch.rng(c)));
      batch.store_eval(c, density, density.eval(batch.position(c)));
      batch.gradient_evals += 1;
    }
  }
}

Eigen::MatrixXi ReplicaSystem::walker_rungs() const {
  Eigen::MatrixXi out(copies_, replica_count());
  for (int c = 0; c < copies_; ++c) {
    for (int r = 0; r < replica_count(); ++r) out(c, walker_at_(c, r)) = r;
  }
  return out;
}

long long ReplicaSystem::total_gradient_evals() const {
  long long acc = 0;
  for (const auto& batch : rungs_) acc += batch.gradient_evals;
  return acc;
}

ReplicaSystem::SwapRound ReplicaSystem::swap_round(SwapScheme scheme) {
  SwapRound round;
  round.even_parity = scheme == SwapScheme::kDeo ? (round_counter_ % 2 == 0)
                                                 : (swap_rng_.uniform() < 0.5);
  const int edges = ladder_.edge_count();
  const int first_edge = round.even_parity ? 0 : 1;
  for (int c = 0; c < copies_; ++c) {
    for (int e = first_edge; e < edges; e += 2) {
      const TargetDensity& cold = *tempered_[e];
      const TargetDensity& hot = *tempered_[e + 1];
      const LogDensityValue* low = rungs_[e].cached_eval(c, cold);
      const LogDensityValue* high = rungs_[e + 1].cached_eval(c, hot);
      if (low == nullptr || high == nullptr) {
        throw Error("ReplicaSystem: a swap round needs cached evaluations; explore first");
      }
      // Both tempered densities share the same untempered components, so the
      // Metropolis ratio collapses to the inverse-temperature gap times the
      // energy gap and costs no model evaluations.
      double energy_low, energy_high;
      if (ladder_.mode == TemperingMode::kLikelihood) {
        energy_low = low->likelihood_value;
        energy_high = high->likelihood_value;
      } else {
        energy_low = low->prior_value + low->likelihood_value;
        energy_high = high->prior_value + high->likelihood_value;
      }
      const double log_alpha = (beta(e) - beta(e + 1)) * (energy_high - energy_low);
      const double u = swap_rng_.uniform_pos();
      const bool accepted = std::log(u) < log_alpha;
      ladder_.swap_attempts[e] += 1;
      if (accepted) {
        ladder_.swap_accepts[e] += 1;
        const Eigen::VectorXd held = rungs_[e].position(c);
        rungs_[e].set_position(c, rungs_[e + 1].position(c));
        rungs_[e + 1].set_position(c, held);
        std::swap(walker_at_(c, e), walker_at_(c, e + 1));
      }
      EdgeOutcome outcome;
      outcome.edge = e;
      outcome.copy = c;
      outcome.accepted = accepted;
      outcome.accept_prob = std::min(1.0, std::exp(log_alpha));
      round.outcomes.push_back(outcome);
    }
  }
  ++round_counter_;
  return round;
}

RoundTripStats round_trip_rate(const IndexProcessLog& log, SwapScheme scheme,
                               double gamma_hat) {
  RoundTripStats stats;
  stats.replicas = log.replicas;
  const int r = log.replicas;
  const long long rounds = log.rounds();
  if (r >= 2 && gamma_hat >= 0.0) {
    stats.predicted_rate = scheme == SwapScheme::kDeo
                               ? 1.0 / (2.0 + 2.0 * gamma_hat)
                               : 1.0 / (2.0 * r + 2.0 * gamma_hat);
  }
  if (r < 2 || log.copies < 1 || rounds < 1) {
    stats.low_confidence = true;
    return stats;
  }

  // One three-leg automaton per (copy, walker): touch the hottest rung, then
  // the coldest, then the starting rung again. A single observation can close
  // several legs at once, which is exactly what happens at the ladder ends.
  long long trips = 0;
  std::vector<int> stage(static_cast<std::size_t>(log.copies) * r, 0);
  auto observe = [&](int c, int w, int rung) {
    int& st = stage[static_cast<std::size_t>(c) * r + w];
    for (int pass = 0; pass < 4; ++pass) {
      if (st == 0 && rung == r - 1) {
        st = 1;
      } else if (st == 1 && rung == 0) {
        st = 2;
      } else if (st == 2 && rung == w) {
        st = 0;
        ++trips;
      } else {
        break;
      }
    }
  };
  // Walker w starts on rung w before the first round; that placement counts,
  // otherwise walkers born on an end rung owe an extra excursion.
  for (int c = 0; c < log.copies; ++c) {
    for (int w = 0; w < r; ++w) observe(c, w, w);
  }
  for (const auto& placement : log.rung_of_walker) {
    if (placement.rows() != log.copies || placement.cols() != r) {
      throw InvalidArgumentError("round_trip_rate: index log shape is inconsistent");
    }
    for (int c = 0; c < log.copies; ++c) {
      for (int w = 0; w < r; ++w) observe(c, w, placement(c, w));
    }
  }
  stats.trips = static_cast<double>(trips);
  stats.rate_per_round =
      static_cast<double>(trips) / (static_cast<double>(rounds) * log.copies);
  stats.low_confidence = trips == 0;
  return stats;
}

std::vector<double> adapt_schedule(const TemperatureLadder& ladder) {
  ladder.validate();
  const int r = ladder.replica_count();
  std::vector<double> out = ladder.temperatures;
  if (r < 2) return out;
  const std::vector<double> rates = ladder.edge_rates();
  for (int e = 0; e < ladder.edge_count(); ++e) {
    if (ladder.swap_attempts[e] < 100) {
      throw InvalidArgumentError(
          "adapt_schedule: need at least 100 swap attempts per edge");
    }
    if (rates[e] < 0.02) {
      std::ostringstream msg;
      msg << "adapt_schedule: swap acceptance on edge " << e << " is only " << rates[e]
          << "; add replicas before adapting the schedule";
      throw ScheduleTooSparseError(msg.str(), e);
    }
  }

  // The rejection rates are the increments of a piecewise-linear barrier
  // estimate over log temperature. Re-placing the interior knots at equal
  // barrier increments is one inversion of that interpolant. An infinite
  // ceiling pins its finite neighbour as the other end, since log T has no
  // knot at infinity.
  const bool open_top = std::isinf(ladder.temperatures.back());
  const int knots = open_top ? r - 1 : r;
  if (knots < 3) return out;
  std::vector<double> logt(knots), cum(knots);
  for (int i = 0; i < knots; ++i) logt[i] = std::log(ladder.temperatures[i]);
  cum[0] = 0.0;
  for (int i = 0; i + 1 < knots; ++i) {
    // The floor keeps the map invertible across edges that accepted
    // every proposal.
    cum[i + 1] = cum[i] + std::max(1.0 - rates[i], 1e-9);
  }
  const double total = cum[knots - 1];
  for (int j = 1; j + 1 < knots; ++j) {
    const double level = total * static_cast<double>(j) / (knots - 1);
    int seg = static_cast<int>(std::upper_bound(cum.begin(), cum.end(), level) -
                               cum.begin()) -
              1;
    seg = std::clamp(seg, 0, knots - 2);
    const double f = (level - cum[seg]) / (cum[seg + 1] - cum[seg]);
    out[j] = std::exp(logt[seg] + f * (logt[seg + 1] - logt[seg]));
  }
  return out;
}

std::vector<double> replica_step_sizes(
    const std::vector<double>& temperatures,
    const std::vector<std::pair<double, double>>& anchors) {
  if (anchors.empty()) {
    throw InvalidArgumentError("replica_step_sizes: need at least one anchor");
  }
  std::vector<std::pair<double, double>> a = anchors;
  std::sort(a.begin(), a.end());
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!(a[i].first > 0) || !std::isfinite(a[i].first) || !(a[i].second > 0)) {
      throw InvalidArgumentError(
          "replica_step_sizes: anchors need a finite positive temperature and step");
    }
    if (i > 0 && !(a[i - 1].first < a[i].first)) {
      throw InvalidArgumentError("replica_step_sizes: anchor temperatures must be distinct");
    }
  }
  std::vector<double> out;
  out.reserve(temperatures.size());
  for (double t : temperatures) {
    if (std::isinf(t)) {
      // An exact-sampling rung runs no leapfrog trajectories.
      out.push_back(0.0);
      continue;
    }
    if (!(t > 0)) {
      throw InvalidArgumentError("replica_step_sizes: temperatures must be positive");
    }
    const double s = std::sqrt(t);
    const double s_lo = std::sqrt(a.front().first);
    const double s_hi = std::sqrt(a.back().first);
    double h;
    if (s <= s_lo) {
      h = a.front().second * s / s_lo;
    } else if (s >= s_hi) {
      h = a.back().second * s / s_hi;
    } else {
      std::size_t j = 0;
      while (j + 2 < a.size() && std::sqrt(a[j + 1].first) < s) ++j;
      const double s0 = std::sqrt(a[j].first);
      const double s1 = std::sqrt(a[j + 1].first);
      h = a[j].second + (a[j + 1].second - a[j].second) * (s - s0) / (s1 - s0);
    }
    out.push_back(h);
  }
  return out;
}

int leapfrog_heuristic(double largest_scale, double step, double gamma) {
  if (!(largest_scale > 0) || !(step > 0) || !(gamma >= 0)) {
    throw InvalidArgumentError(
        "leapfrog_heuristic: scale and step must be positive, gamma non-negative");
  }
  const double raw = largest_scale * (kPi / 2.0) / (step * std::sqrt(1.0 + gamma));
  const long long rounded = round_half_up(raw);
  if (rounded > 1000000000LL) {
    throw InvalidArgumentError("leapfrog_heuristic: the step is too small for a sane trajectory");
  }
  return std::max(1, static_cast<int>(rounded));
}

TmaxSelection select_tmax(std::shared_ptr<const SplitTarget> target,
                          const TmaxOptions& opts) {
  if (!target) throw InvalidArgumentError("select_tmax: target is null");
  if (!(opts.growth > 1.0)) {
    throw InvalidArgumentError("select_tmax: the ladder ratio must exceed 1");
  }
  if (opts.max_rungs < 1) throw InvalidArgumentError("select_tmax: need at least one rung");
  if (opts.chains < 2) throw InvalidArgumentError("select_tmax: need at least two chains");
  if (opts.discard < 0 || opts.burnin_draws - opts.discard < 4) {
    throw InvalidArgumentError("select_tmax: burn-in leaves too few draws for a mixing check");
  }

  TmaxSelection sel;
  for (int r = 0; r < opts.max_rungs; ++r) {
    const double t = std::pow(opts.growth, r);
    sel.temperatures.push_back(t);
    auto density = tempered_density(target, t, opts.mode);
    ChainBatch batch(opts.chains, target->dimension(), opts.seed,
                     static_cast<std::uint64_t>(r));
    batch.initialize_from_prior(*target);
    StepSizeOptions ss;
    ss.iterations = opts.adapt_iterations;
    ss.target_accept = opts.target_accept;
    ss.leapfrogs = opts.leapfrogs;
    StepSizeResult adapted = adapt_step_size(*density, batch, ss, opts.threads);
    sel.step_sizes.push_back(adapted.step_size);

    SampleTensor draws(opts.chains, target->dimension());
    hmc_run(*density, batch, adapted.step_size, opts.leapfrogs,
            static_cast<int>(opts.burnin_draws), &draws, opts.threads);
    std::vector<Eigen::MatrixXd> kept;
    kept.reserve(opts.chains);
    for (auto& m : draws.to_matrices()) {
      kept.emplace_back(m.bottomRows(m.rows() - opts.discard));
    }
    const double score = split_rhat(kept).max_rhat;
    sel.rung_max_rhat.push_back(score);
    if (score < opts.rhat_threshold) {
      sel.t_max = t;
      sel.selected_rung = r;
      return sel;
    }
  }
  std::ostringstream msg;
  msg << "select_tmax: no rung of the " << opts.max_rungs
      << "-rung trial ladder mixed; raise the ladder ratio or allow more rungs";
  throw NoMixingRungError(msg.str());
}

namespace {

// Split-half moments per rung, accumulated round by round so hot-rung draws
// never need to be stored. The split point mirrors the batch diagnostic: the
// middle draw of an odd-length chain belongs to neither half.
class RungRhatAccumulator {
 public:
  RungRhatAccumulator(int rungs, int copies, Eigen::Index dim, long long rounds)
      : rungs_(rungs), copies_(copies), dim_(dim), half_(rounds / 2), total_(rounds) {
    cells_.resize(static_cast<std::size_t>(rungs_) * copies_ * 2);
    for (auto& cell : cells_) {
      cell.mean = Eigen::VectorXd::Zero(dim_);
      cell.m2 = Eigen::VectorXd::Zero(dim_);
    }
  }

  void observe(long long t, int rung, int copy, const Eigen::VectorXd& x) {
    int which;
    if (t < half_) {
      which = 0;
    } else if (t >= total_ - half_) {
      which = 1;
    } else {
      return;
    }
    Cell& cell = cells_[(static_cast<std::size_t>(rung) * copies_ + copy) * 2 + which];
    cell.n += 1;
    const Eigen::VectorXd delta = x - cell.mean;
    cell.mean += delta / static_cast<double>(cell.n);
    cell.m2.array() += delta.array() * (x - cell.mean).array();
  }

  // Max over dimensions of sqrt(pooled / within), the same ratio the batch
  // split R-hat reports. NaN when a half is too short or a dimension has a
  // zero-variance half.
  double max_rhat(int rung) const {
    const int k = 2 * copies_;
    std::vector<const Cell*> halves(k);
    for (int c = 0; c < copies_; ++c) {
      halves[2 * c] = &cells_[(static_cast<std::size_t>(rung) * copies_ + c) * 2];
      halves[2 * c + 1] = &cells_[(static_cast<std::size_t>(rung) * copies_ + c) * 2 + 1];
    }
    for (const Cell* cell : halves) {
      if (cell->n < 2) return kNan;
    }
    const double s = static_cast<double>(halves.front()->n);
    double max_seen = 0.0;
    bool any_valid = false;
    for (Eigen::Index j = 0; j < dim_; ++j) {
      double within = 0.0;
      double grand = 0.0;
      bool degenerate = false;
      for (const Cell* cell : halves) {
        const double v = cell->m2[j] / (s - 1.0);
        if (v == 0.0) degenerate = true;
        within += v;
        grand += cell->mean[j];
      }
      within /= k;
      grand /= k;
      if (degenerate || !(within > 0.0)) continue;
      double between_over_s = 0.0;
      for (const Cell* cell : halves) {
        between_over_s += (cell->mean[j] - grand) * (cell->mean[j] - grand);
      }
      between_over_s /= (k - 1);
      const double pooled = (s - 1.0) / s * within + between_over_s;
      max_seen = std::max(max_seen, std::sqrt(pooled / within));
      any_valid = true;
    }
    return any_valid ? max_seen : kNan;
  }

 private:
  struct Cell {
    long long n = 0;
    Eigen::VectorXd mean;
    Eigen::VectorXd m2;
  };
  int rungs_;
  int copies_;
  Eigen::Index dim_;
  long long half_;
  long long total_;
  std::vector<Cell> cells_;
};

void append_warning(std::string* acc, const std::string& msg) {
  if (msg.empty()) return;
  if (!acc->empty()) *acc += "; ";
  *acc += msg;
}

int hottest_finite_rung(const std::vector<double>& temperatures) {
  int idx = static_cast<int>(temperatures.size()) - 1;
  while (idx > 0 && std::isinf(temperatures[idx])) --idx;
  return idx;
}

// Anchor adaptation on the coldest rung, interpolation in sqrt(T), then a
// short refinement on every other finite rung. Refinements run concurrently;
// each touches only its own rung's batch and streams.
std::vector<double> calibrate_step_sizes(
    ReplicaSystem& system, const RemcOptions& opts,
    const std::vector<std::pair<double, double>>& prior_anchors) {
  const int r = system.replica_count();
  const std::vector<double>& temps = system.ladder().temperatures;
  StepSizeOptions base;
  base.target_accept = opts.target_accept;
  base.tolerance = opts.accept_tolerance;

  std::vector<std::pair<double, double>> anchors = prior_anchors;
  std::vector<double> h(r, 0.0);
  std::vector<char> anchored(r, 0);
  if (anchors.empty()) {
    StepSizeOptions anchor = base;
    anchor.iterations = opts.anchor_adapt_iterations;
    h[0] = adapt_step_size(system.rung_density(0), system.rung(0), anchor, opts.threads)
               .step_size;
    anchors.emplace_back(1.0, h[0]);
    anchored[0] = 1;
    // Anchor the hottest finite rung from scratch as well. Square-root
    // extrapolation from the cold rung alone badly overshoots under
    // likelihood tempering, where the hot limit is the unit-scale prior, and
    // a refinement started from such a step can fling chains far enough to
    // break hard-walled models.
    int hottest = r - 1;
    while (hottest >= 0 && std::isinf(temps[hottest])) --hottest;
    if (hottest > 0) {
      h[hottest] =
          adapt_step_size(system.rung_density(hottest), system.rung(hottest), anchor,
                          opts.threads)
              .step_size;
      anchors.emplace_back(temps[hottest], h[hottest]);
      anchored[hottest] = 1;
    }
  }
  const std::vector<double> guess = replica_step_sizes(temps, anchors);
  std::vector<int> pending;
  for (int i = 0; i < r; ++i) {
    if (!anchored[i] && !std::isinf(temps[i])) pending.push_back(i);
  }
  parallel_for(static_cast<int>(pending.size()), opts.threads, [&](int offset) {
    const int i = pending[offset];
    StepSizeOptions o = base;
    o.iterations = opts.rung_adapt_iterations;
    o.initial_step = guess[i];
    h[i] = adapt_step_size(system.rung_density(i), system.rung(i), o, 1).step_size;
  });
  return h;
}

}  // namespace

RemcResult run_remc(std::shared_ptr<const SplitTarget> target, const RemcOptions& opts,
                    long long rounds) {
  if (!target) throw InvalidArgumentError("run_remc: target is null");
  if (rounds < 1) throw InvalidArgumentError("run_remc: need at least one round");
  if (opts.copies < 1) throw InvalidArgumentError("run_remc: need at least one copy");
  if (!(opts.leapfrog_multiplier > 0)) {
    throw InvalidArgumentError("run_remc: the leapfrog multiplier must be positive");
  }
  if (opts.adapt_sweeps < 0 || opts.rounds_per_sweep < 1) {
    throw InvalidArgumentError("run_remc: adaptation sweep sizes are inconsistent");
  }

  TemperatureLadder ladder;
  ladder.temperatures = opts.temperatures;
  ladder.mode = opts.mode;
  ladder.validate();
  const int r_count = ladder.replica_count();
  if (!opts.step_sizes.empty()) {
    if (static_cast<int>(opts.step_sizes.size()) != r_count) {
      throw InvalidArgumentError("run_remc: step sizes must cover every rung");
    }
    for (int i = 0; i < r_count; ++i) {
      if (!std::isinf(opts.temperatures[i]) && !(opts.step_sizes[i] > 0)) {
        throw InvalidArgumentError("run_remc: finite rungs need a positive step size");
      }
    }
  }

  ReplicaSystem system(std::move(target), std::move(ladder), opts.copies, opts.seed);
  system.initialize_from_prior();
  const Eigen::Index dim = system.rung(0).dim();
  const int hot = hottest_finite_rung(opts.temperatures);

  RemcResult result;
  std::vector<StageRecord> stages;
  using Clock = std::chrono::steady_clock;

  // Step sizes: explicit values are trusted as-is, otherwise anchor + refine.
  auto calib_start = Clock::now();
  long long calib_grads0 = system.total_gradient_evals();
  if (!opts.step_sizes.empty()) {
    system.ladder().step_sizes = opts.step_sizes;
  } else {
    system.ladder().step_sizes = calibrate_step_sizes(system, opts, {});
    StageRecord rec;
    rec.label = "calibrate";
    rec.step_size = system.ladder().step_sizes[0];
    rec.leapfrogs = StepSizeOptions{}.leapfrogs;
    rec.gradient_evals = system.total_gradient_evals() - calib_grads0;
    rec.wall_seconds = std::chrono::duration<double>(Clock::now() - calib_start).count();
    stages.push_back(rec);
  }

  double largest_scale = opts.largest_scale_hint > 0 ? opts.largest_scale_hint : 1.0;
  double gamma_for_ell = 0.0;
  auto choose_leapfrogs = [&]() {
    if (opts.leapfrogs > 0) return opts.leapfrogs;
    const double h_hot = system.ladder().step_sizes[hot];
    const double raw =
        largest_scale * (kPi / 2.0) / (h_hot * std::sqrt(1.0 + gamma_for_ell));
    const long long rounded = round_half_up(opts.leapfrog_multiplier * raw);
    if (rounded > 1000000000LL) {
      throw InvalidArgumentError("run_remc: the leapfrog heuristic wants an absurd trajectory");
    }
    return std::max(1, static_cast<int>(rounded));
  };
  int ell = choose_leapfrogs();

  // Burn-in sweeps: swap rounds accumulate edge statistics, the hottest
  // finite rung's draws feed the trajectory-scale estimate, and between
  // sweeps the interior temperatures move to equalize the barrier.
  if (opts.adapt_sweeps > 0) {
    auto adapt_start = Clock::now();
    long long adapt_grads0 = system.total_gradient_evals();
    long long accepted0 = system.rung(0).accepted;
    long long transitions0 = system.rung(0).transitions;
    for (int sweep = 0; sweep < opts.adapt_sweeps; ++sweep) {
      SampleTensor hot_draws(opts.copies, dim);
      for (int t = 0; t < opts.rounds_per_sweep; ++t) {
        system.explore(ell, opts.threads);
        for (int c = 0; c < opts.copies; ++c) {
          hot_draws.append(c, system.rung(hot).position(c));
        }
        system.swap_round(opts.scheme);
      }
      if (opts.largest_scale_hint <= 0) {
        try {
          const Eigen::MatrixXd cov = pooled_covariance(hot_draws.to_matrices());
          largest_scale = std::sqrt(largest_eigenvalue_power_iteration(cov));
        } catch (const Error&) {
          // Not enough variation yet; keep the previous scale.
        }
      }
      if (r_count >= 2) {
        long long min_attempts = system.ladder().swap_attempts[0];
        for (long long a : system.ladder().swap_attempts) {
          min_attempts = std::min(min_attempts, a);
        }
        if (min_attempts >= 100) {
          gamma_for_ell = summarize_swaps(system.ladder()).gamma_hat;
          if (opts.adapt_temperatures && sweep + 1 < opts.adapt_sweeps) {
            const std::vector<double> next = adapt_schedule(system.ladder());
            std::vector<std::pair<double, double>> anchors;
            for (int i = 0; i < r_count; ++i) {
              if (!std::isinf(system.ladder().temperatures[i])) {
                anchors.emplace_back(system.ladder().temperatures[i],
                                     system.ladder().step_sizes[i]);
              }
            }
            system.set_temperatures(next);
            system.ladder().step_sizes = calibrate_step_sizes(system, opts, anchors);
          }
        } else if (opts.adapt_temperatures) {
          append_warning(&result.warning,
                         "schedule adaptation skipped: too few swap attempts per edge");
        }
      }
      ell = choose_leapfrogs();
    }
    StageRecord rec;
    rec.label = "ladder_adapt";
    rec.step_size = system.ladder().step_sizes[0];
    rec.leapfrogs = ell;
    rec.draws_per_chain =
        static_cast<long long>(opts.adapt_sweeps) * opts.rounds_per_sweep;
    const long long trans = system.rung(0).transitions - transitions0;
    if (trans > 0) {
      rec.mean_accept = static_cast<double>(system.rung(0).accepted - accepted0) /
                        (static_cast<double>(trans) * opts.copies);
    }
    rec.gradient_evals = system.total_gradient_evals() - adapt_grads0;
    rec.wall_seconds = std::chrono::duration<double>(Clock::now() - adapt_start).count();
    stages.push_back(rec);
  }

  // Measurement: the schedule is frozen, counters restart, and only the
  // coldest rung's draws are kept as target samples.
  system.ladder().reset_counters();
  auto measure_start = Clock::now();
  long long measure_grads0 = system.total_gradient_evals();
  long long accepted0 = system.rung(0).accepted;
  long long transitions0 = system.rung(0).transitions;

  IndexProcessLog index_log;
  index_log.replicas = r_count;
  index_log.copies = opts.copies;
  SampleTensor samples(opts.copies, dim);
  RungRhatAccumulator rhat_acc(r_count, opts.copies, dim, rounds);
  std::vector<RoundLogRow> round_log;
  if (opts.record_round_log) {
    round_log.reserve(static_cast<std::size_t>(rounds) * opts.copies * r_count);
  }

  for (long long t = 0; t < rounds; ++t) {
    system.explore(ell, opts.threads);
    const std::size_t round_first_row = round_log.size();
    if (opts.record_round_log) {
      for (int c = 0; c < opts.copies; ++c) {
        for (int r = 0; r < r_count; ++r) {
          const LogDensityValue* e = system.rung(r).cached_eval(c, system.rung_density(r));
          RoundLogRow row;
          row.round = t;
          row.copy = c;
          row.rung = r;
          row.log_prior = e ? e->prior_value : kNan;
          row.log_likelihood = e ? e->likelihood_value : kNan;
          round_log.push_back(row);
        }
      }
    }
    const ReplicaSystem::SwapRound swap = system.swap_round(opts.scheme);
    if (opts.record_round_log) {
      for (const auto& outcome : swap.outcomes) {
        for (int side = 0; side < 2; ++side) {
          RoundLogRow& row =
              round_log[round_first_row +
                        static_cast<std::size_t>(outcome.copy) * r_count + outcome.edge +
                        side];
          row.swap_edge = outcome.edge;
          row.swap_accepted = outcome.accepted ? 1 : 0;
        }
      }
    }
    if (opts.record_index_log) index_log.rung_of_walker.push_back(system.walker_rungs());
    for (int c = 0; c < opts.copies; ++c) {
      samples.append(c, system.rung(0).position(c));
      for (int r = 0; r < r_count; ++r) {
        rhat_acc.observe(t, r, c, system.rung(r).position(c));
      }
    }
  }

  result.swaps = r_count >= 2 ? summarize_swaps(system.ladder()) : SwapStatistics{};
  result.round_trips = round_trip_rate(index_log, opts.scheme, result.swaps.gamma_hat);
  result.swaps.round_trips = static_cast<long long>(result.round_trips.trips);
  result.swaps.round_trip_rate = result.round_trips.rate_per_round;

  result.rung_max_rhat.resize(r_count);
  for (int r = 0; r < r_count; ++r) {
    result.rung_max_rhat[r] = opts.copies >= 2 ? rhat_acc.max_rhat(r) : kNan;
  }

  StageRecord rec;
  rec.label = "measure";
  rec.step_size = system.ladder().step_sizes[0];
  rec.leapfrogs = ell;
  rec.draws_per_chain = rounds;
  const long long trans = system.rung(0).transitions - transitions0;
  if (trans > 0) {
    rec.mean_accept = static_cast<double>(system.rung(0).accepted - accepted0) /
                      (static_cast<double>(trans) * opts.copies);
  }
  rec.gradient_evals = system.total_gradient_evals() - measure_grads0;
  if (opts.copies >= 2 && !std::isnan(result.rung_max_rhat[0])) {
    rec.max_rhat = result.rung_max_rhat[0];
  }
  rec.wall_seconds = std::chrono::duration<double>(Clock::now() - measure_start).count();
  stages.push_back(rec);

  result.samples = std::move(samples);
  result.ladder = system.ladder();
  result.index_log = std::move(index_log);
  result.round_log = std::move(round_log);
  result.leapfrogs = ell;
  result.largest_scale = largest_scale;
  result.gradient_evals = system.total_gradient_evals();

  if (opts.copies >= 2 && rounds >= 8) {
    ReplicaSummary summary;
    summary.temperatures = result.ladder.temperatures;
    summary.step_sizes = result.ladder.step_sizes;
    summary.edge_swap_rates = result.swaps.edge_rates;
    summary.round_trips = result.round_trips;
    result.report = compile_report(result.samples, stages, summary);
  } else {
    append_warning(&result.warning,
                   "diagnostics need at least two copies and eight rounds; report omitted");
  }
  return result;
}

void write_round_log_csv(const std::vector<RoundLogRow>& rows, std::ostream& os) {
  os << "# schema: remc_rounds v1\n";
  os << "round,chain,replica_index,log_prior,log_likelihood,swap_edge,swap_accepted\n";
  char buf[64];
  for (const auto& row : rows) {
    os << row.round << ',' << row.copy << ',' << row.rung << ',';
    csv_number(buf, sizeof buf, row.log_prior);
    os << buf << ',';
    csv_number(buf, sizeof buf, row.log_likelihood);
    os << buf << ',' << row.swap_edge << ',' << row.swap_accepted << '\n';
  }
}

void write_ladder_summary_csv(const RemcResult& result, std::ostream& os) {
  os << "# schema: ladder_summary v1\n";
  os << "rung,T,h,p_swap,rhat\n";
  char buf[64];
  const int r_count = result.ladder.replica_count();
  for (int r = 0; r < r_count; ++r) {
    os << r << ',';
    csv_number(buf, sizeof buf, result.ladder.temperatures[r]);
    os << buf << ',';
    csv_number(buf, sizeof buf,
               result.ladder.step_sizes.empty() ? 0.0 : result.ladder.step_sizes[r]);
    os << buf << ',';
    // The hottest rung has no outgoing edge; -1 marks the hole.
    const double p = r < static_cast<int>(result.swaps.edge_rates.size())
                         ? result.swaps.edge_rates[r]
                         : -1.0;
    csv_number(buf, sizeof buf, p);
    os << buf << ',';
    const double rhat =
        r < static_cast<int>(result.rung_max_rhat.size()) ? result.rung_max_rhat[r] : kNan;
    csv_number(buf, sizeof buf, rhat);
    os << buf << '\n';
  }
}

}  // namespace ips
