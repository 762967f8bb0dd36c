#include "ipsampler/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <ostream>

#include "json.hpp"

#include "ipsampler/errors.hpp"
#include "ipsampler/mathutil.hpp"

namespace ips {

namespace {

void check_shape(const std::vector<Eigen::MatrixXd>& chains, Eigen::Index min_draws,
                 const char* who) {
  if (chains.size() < 2) {
    throw InvalidArgumentError(std::string(who) + ": need at least two chains");
  }
  const Eigen::Index s = chains.front().rows();
  const Eigen::Index n = chains.front().cols();
  if (s < min_draws) {
    throw InvalidArgumentError(std::string(who) + ": chains are too short");
  }
  if (n < 1) throw InvalidArgumentError(std::string(who) + ": empty dimension");
  for (const auto& c : chains) {
    if (c.rows() != s || c.cols() != n) {
      throw InvalidArgumentError(std::string(who) + ": chains must share one shape");
    }
  }
}

// Replace each value by the normal quantile of its pooled rank. Used only
// when rank normalization is requested.
std::vector<Eigen::VectorXd> rank_normalized_columns(
    const std::vector<Eigen::MatrixXd>& chains, Eigen::Index dim) {
  const int k = static_cast<int>(chains.size());
  const Eigen::Index s = chains.front().rows();
  const Eigen::Index total = k * s;

  std::vector<std::pair<double, Eigen::Index>> order;
  order.reserve(total);
  for (int c = 0; c < k; ++c) {
    for (Eigen::Index i = 0; i < s; ++i) {
      order.emplace_back(chains[c](i, dim), c * s + i);
    }
  }
  std::sort(order.begin(), order.end());

  std::vector<Eigen::VectorXd> out(k, Eigen::VectorXd(s));
  for (Eigen::Index r = 0; r < total; ++r) {
    // Blom offset keeps the transformed values strictly inside the support.
    double z = inverse_normal_cdf((r + 1 - 0.375) / (total + 0.25));
    Eigen::Index flat = order[r].second;
    out[flat / s](flat % s) = z;
  }
  return out;
}

struct VarianceDecomposition {
  double within = 0.0;       // W
  double pooled = 0.0;       // (S-1)/S W + B/S
  bool zero_variance_chain = false;
  std::vector<double> means;
};

VarianceDecomposition decompose(const std::vector<Eigen::VectorXd>& seqs) {
  VarianceDecomposition d;
  const int k = static_cast<int>(seqs.size());
  const Eigen::Index s = seqs.front().size();
  d.means.resize(k);
  double var_sum = 0.0;
  for (int c = 0; c < k; ++c) {
    d.means[c] = seqs[c].mean();
    double v = (seqs[c].array() - d.means[c]).square().sum() / (s - 1);
    if (v == 0.0) d.zero_variance_chain = true;
    var_sum += v;
  }
  d.within = var_sum / k;
  double grand = std::accumulate(d.means.begin(), d.means.end(), 0.0) / k;
  double between_over_s = 0.0;  // B/S
  for (int c = 0; c < k; ++c) {
    between_over_s += (d.means[c] - grand) * (d.means[c] - grand);
  }
  between_over_s /= (k - 1);
  d.pooled = (double(s - 1) / s) * d.within + between_over_s;
  return d;
}

double ess_one_dimension(const std::vector<Eigen::VectorXd>& seqs, bool* degenerate) {
  const int k = static_cast<int>(seqs.size());
  const Eigen::Index s = seqs.front().size();
  VarianceDecomposition d = decompose(seqs);
  const double total = static_cast<double>(k) * static_cast<double>(s);

  if (!(d.pooled > 0.0) || !std::isfinite(d.pooled)) {
    *degenerate = true;
    return 0.0;
  }

  // Mean-over-chains autocovariance at one lag, biased 1/S normalization.
  auto mean_autocov = [&](Eigen::Index lag) {
    double acc = 0.0;
    for (int c = 0; c < k; ++c) {
      const Eigen::VectorXd& x = seqs[c];
      double m = d.means[c];
      double inner = 0.0;
      for (Eigen::Index i = 0; i + lag < s; ++i) {
        inner += (x[i] - m) * (x[i + lag] - m);
      }
      acc += inner / s;
    }
    return acc / k;
  };
  auto rho = [&](Eigen::Index lag) {
    return 1.0 - (d.within - mean_autocov(lag)) / d.pooled;
  };

  // Sum correlation pairs while they stay positive, then enforce
  // monotonicity; lags are computed lazily so well-mixed chains stop after a
  // handful of autocovariances.
  std::vector<double> pairs;
  double r_even = 1.0;
  double r_odd = rho(1);
  Eigen::Index lag = 1;
  const Eigen::Index max_lag = s - 4;
  while (true) {
    double p = r_even + r_odd;
    if (!(p > 0.0)) break;
    pairs.push_back(p);
    if (lag + 2 > max_lag) break;
    r_even = rho(lag + 1);
    r_odd = rho(lag + 2);
    lag += 2;
  }
  for (std::size_t i = 1; i < pairs.size(); ++i) {
    pairs[i] = std::min(pairs[i], pairs[i - 1]);
  }
  double tau = -1.0;
  for (double p : pairs) tau += 2.0 * p;

  const double cap = 1.5 * total;
  if (!(tau > 0.0)) return cap;
  return std::min(total / tau, cap);
}

std::vector<Eigen::VectorXd> extract_dimension(const std::vector<Eigen::MatrixXd>& chains,
                                               Eigen::Index dim) {
  std::vector<Eigen::VectorXd> seqs;
  seqs.reserve(chains.size());
  for (const auto& c : chains) seqs.emplace_back(c.col(dim));
  return seqs;
}

}  // namespace

EssResult effective_sample_size(const std::vector<Eigen::MatrixXd>& chains,
                                const EssOptions& opts) {
  check_shape(chains, 8, "effective_sample_size");
  const Eigen::Index n = chains.front().cols();

  EssResult res;
  res.ess.resize(n);
  res.degenerate.assign(n, 0);
  for (Eigen::Index j = 0; j < n; ++j) {
    std::vector<Eigen::VectorXd> seqs = opts.rank_normalize
                                            ? rank_normalized_columns(chains, j)
                                            : extract_dimension(chains, j);
    bool degenerate = false;
    res.ess[j] = ess_one_dimension(seqs, &degenerate);
    res.degenerate[j] = degenerate ? 1 : 0;
  }
  res.min_ess = res.ess.minCoeff(&res.min_dimension);
  res.mean_ess = res.ess.mean();
  return res;
}

EssResult effective_sample_size(const SampleTensor& draws, const EssOptions& opts) {
  return effective_sample_size(draws.to_matrices(), opts);
}

RhatResult split_rhat(const std::vector<Eigen::MatrixXd>& chains) {
  check_shape(chains, 4, "split_rhat");
  const Eigen::Index n = chains.front().cols();
  const Eigen::Index s = chains.front().rows();
  const Eigen::Index half = s / 2;

  RhatResult res;
  res.rhat.resize(n);
  res.degenerate.assign(n, 0);
  double max_seen = 0.0;
  for (Eigen::Index j = 0; j < n; ++j) {
    std::vector<Eigen::VectorXd> halves;
    halves.reserve(2 * chains.size());
    for (const auto& c : chains) {
      halves.emplace_back(c.col(j).head(half));
      halves.emplace_back(c.col(j).tail(half));
    }
    VarianceDecomposition d = decompose(halves);
    if (d.zero_variance_chain || !(d.within > 0.0)) {
      res.degenerate[j] = 1;
      res.any_degenerate = true;
      res.rhat[j] = std::numeric_limits<double>::quiet_NaN();
      continue;
    }
    res.rhat[j] = std::sqrt(d.pooled / d.within);
    max_seen = std::max(max_seen, res.rhat[j]);
  }
  res.max_rhat = res.any_degenerate && max_seen == 0.0
                     ? std::numeric_limits<double>::quiet_NaN()
                     : max_seen;
  return res;
}

RhatResult split_rhat(const SampleTensor& draws) { return split_rhat(draws.to_matrices()); }

RunReport compile_report(const SampleTensor& draws, const std::vector<StageRecord>& stages) {
  if (stages.empty()) {
    throw InvalidArgumentError("compile_report: need at least one completed stage");
  }
  RunReport report;
  EssResult ess = effective_sample_size(draws);
  RhatResult rhat = split_rhat(draws);
  report.ess = ess.ess;
  report.min_ess = ess.min_ess;
  report.min_ess_dimension = ess.min_dimension;
  report.rhat = rhat.rhat;
  report.max_rhat = rhat.max_rhat;
  report.degenerate = rhat.any_degenerate ||
                      std::any_of(ess.degenerate.begin(), ess.degenerate.end(),
                                  [](char f) { return f != 0; });
  report.stages = stages;
  for (const auto& st : stages) report.total_gradient_evals += st.gradient_evals;
  report.chains = draws.chain_count();
  report.draws_per_chain = draws.chain_count() > 0 ? draws.draws(0) : 0;
  report.gradient_evals_per_min_ess =
      report.min_ess > 0 ? static_cast<double>(report.total_gradient_evals) / report.min_ess
                         : std::numeric_limits<double>::infinity();
  return report;
}

RunReport compile_report(const SampleTensor& draws, const std::vector<StageRecord>& stages,
                         const ReplicaSummary& replica) {
  RunReport report = compile_report(draws, stages);
  report.has_replica_exchange = true;
  report.replica = replica;
  return report;
}

namespace {

void csv_row(std::ostream& os, const std::string& metric, const std::string& stage,
             long long dimension, double value) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", value);
  os << metric << ',' << stage << ',' << dimension << ',' << buf << '\n';
}

}  // namespace

void write_report_csv(const RunReport& report, std::ostream& os) {
  os << "# schema: run_report v1\n";
  os << "metric,stage,dimension,value\n";
  for (Eigen::Index j = 0; j < report.ess.size(); ++j) {
    csv_row(os, "ess", "final", j, report.ess[j]);
  }
  csv_row(os, "min_ess", "final", report.min_ess_dimension, report.min_ess);
  for (Eigen::Index j = 0; j < report.rhat.size(); ++j) {
    csv_row(os, "split_rhat", "final", j, report.rhat[j]);
  }
  csv_row(os, "max_split_rhat", "final", -1, report.max_rhat);
  csv_row(os, "gradient_evals", "total", -1, static_cast<double>(report.total_gradient_evals));
  csv_row(os, "gradient_evals_per_min_ess", "total", -1, report.gradient_evals_per_min_ess);
  for (const auto& st : report.stages) {
    csv_row(os, "step_size", st.label, -1, st.step_size);
    csv_row(os, "leapfrogs", st.label, -1, st.leapfrogs);
    csv_row(os, "draws_per_chain", st.label, -1, static_cast<double>(st.draws_per_chain));
    csv_row(os, "mean_accept", st.label, -1, st.mean_accept);
    if (st.mean_depth > 0) csv_row(os, "mean_depth", st.label, -1, st.mean_depth);
    if (st.kappa_estimate > 0) csv_row(os, "kappa_estimate", st.label, -1, st.kappa_estimate);
    if (st.max_rhat > 0) csv_row(os, "max_split_rhat", st.label, -1, st.max_rhat);
    csv_row(os, "gradient_evals", st.label, -1, static_cast<double>(st.gradient_evals));
    csv_row(os, "wall_seconds", st.label, -1, st.wall_seconds);
  }
  if (report.has_replica_exchange) {
    const ReplicaSummary& r = report.replica;
    for (std::size_t i = 0; i < r.temperatures.size(); ++i) {
      csv_row(os, "replica_temperature", "ladder", static_cast<long long>(i),
              r.temperatures[i]);
    }
    for (std::size_t i = 0; i < r.step_sizes.size(); ++i) {
      csv_row(os, "replica_step_size", "ladder", static_cast<long long>(i), r.step_sizes[i]);
    }
    for (std::size_t i = 0; i < r.edge_swap_rates.size(); ++i) {
      csv_row(os, "edge_swap_rate", "ladder", static_cast<long long>(i), r.edge_swap_rates[i]);
    }
    csv_row(os, "round_trips", "ladder", -1, r.round_trips.trips);
    csv_row(os, "round_trip_rate", "ladder", -1, r.round_trips.rate_per_round);
    csv_row(os, "round_trip_rate_predicted", "ladder", -1, r.round_trips.predicted_rate);
  }
}

void write_report_json(const RunReport& report, std::ostream& os) {
  nlohmann::ordered_json j;
  j["schema"] = "run_report";
  j["schema_version"] = 1;
  j["chains"] = report.chains;
  j["draws_per_chain"] = report.draws_per_chain;
  j["ess"] = std::vector<double>(report.ess.begin(), report.ess.end());
  j["min_ess"] = report.min_ess;
  j["min_ess_dimension"] = report.min_ess_dimension;
  std::vector<double> rhat(report.rhat.begin(), report.rhat.end());
  for (double& v : rhat) {
    if (!std::isfinite(v)) v = -1.0;  // JSON has no NaN; -1 marks degenerate
  }
  j["split_rhat"] = rhat;
  j["max_split_rhat"] = std::isfinite(report.max_rhat) ? report.max_rhat : -1.0;
  j["degenerate"] = report.degenerate;
  j["gradient_evals"] = report.total_gradient_evals;
  j["gradient_evals_per_min_ess"] =
      std::isfinite(report.gradient_evals_per_min_ess) ? report.gradient_evals_per_min_ess
                                                       : -1.0;
  j["stages"] = nlohmann::ordered_json::array();
  for (const auto& st : report.stages) {
    nlohmann::ordered_json s;
    s["label"] = st.label;
    s["step_size"] = st.step_size;
    s["leapfrogs"] = st.leapfrogs;
    s["draws_per_chain"] = st.draws_per_chain;
    s["mean_accept"] = st.mean_accept;
    s["mean_depth"] = st.mean_depth;
    s["kappa_estimate"] = st.kappa_estimate;
    s["gradient_evals"] = st.gradient_evals;
    s["max_split_rhat"] = st.max_rhat;
    s["wall_seconds"] = st.wall_seconds;
    j["stages"].push_back(std::move(s));
  }
  if (report.has_replica_exchange) {
    nlohmann::ordered_json r;
    r["temperatures"] = report.replica.temperatures;
    r["step_sizes"] = report.replica.step_sizes;
    r["edge_swap_rates"] = report.replica.edge_swap_rates;
    r["round_trips"] = report.replica.round_trips.trips;
    r["round_trip_rate"] = report.replica.round_trips.rate_per_round;
    r["round_trip_rate_predicted"] = report.replica.round_trips.predicted_rate;
    r["replicas"] = report.replica.round_trips.replicas;
    j["replica_exchange"] = std::move(r);
  }
  os << j.dump(2) << '\n';
}

}  // namespace ips
