#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace ips {

// Which posterior to sample. One struct holds the union of all per-problem
// parameters; the schema only accepts (and the writer only emits) the keys
// that belong to the selected problem.
struct ProblemConfig {
  std::string name = "gaussian-smoothing";

  // gaussian-smoothing: N grid points, M local averages, squared-exponential
  // prior with correlation length and diagonal shrinkage, data synthesized on
  // data_seed. Also reused: size is the dimension of standard-normal and
  // bimodal, data_seed seeds the spectroscopy measurements.
  int size = 40;
  int measurements = 20;
  double correlation = 0.3;
  double shrinkage = 1e-3;
  double noise = 0.01;
  std::uint64_t data_seed = 1;

  // bimodal: first `constrained` coordinates carry the two-mode likelihood.
  int constrained = 5;
  double mixture_sigma = 0.025;

  // spectroscopy: emission tomography with Doppler shifted lines, data from
  // the two-species scenario at the given peak velocity.
  std::string geometry = "slab";
  int grid = 16;
  int chords = 4;
  int knots = 16;
  int frequencies = 16;
  double noise_floor = 5.0;
  double peak_velocity = 0.03;
};

struct SamplerConfig {
  std::string name = "algorithm1";

  // shared
  int chains = 20;
  double target_accept = 0.9;

  // plain-hmc
  double step_size = 0.0;  // 0 adapts before sampling
  int leapfrogs = 10;      // remc reads 0 as "use the trajectory heuristic"
  int adapt_iterations = 500;
  double rhat_threshold = 1.05;

  // algorithm1 (staged preconditioning pipeline)
  int stage1_draws = 500;
  int stage2_draws = 500;
  int trace_dimensions = 2;

  // remc
  std::vector<double> temperatures;  // empty builds a geometric ladder
  int rungs = 12;
  double t_max = 0.0;  // 0 probes for the hottest useful temperature
  int copies = 2;
  std::string scheme = "deo";      // deo | seo
  std::string mode = "likelihood"; // likelihood | posterior
  int adapt_sweeps = 3;
  int rounds_per_sweep = 200;
  bool adapt_temperatures = true;
  double leapfrog_multiplier = 1.0;
};

// A full experiment: the problem, the sampler, the sample budget, and where
// artifacts land. final_samples is the per-chain draw count for plain-hmc,
// the minimum effective size for algorithm1, and the number of measurement
// rounds for remc.
struct ExperimentConfig {
  int schema_version = 1;
  long long final_samples = 2000;
  std::uint64_t seed = 0;
  int threads = 1;
  std::string out = "out";
  ProblemConfig problem;
  SamplerConfig sampler;
};

// Parse a JSON document. Every field has a default, so "{}" is a valid
// config; unknown or ill-typed keys raise ConfigError naming the key path.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::string& path);

// Canonical serialization: fixed key order, every relevant field written.
// parse(emit(c)) reproduces c exactly.
std::string emit_config(const ExperimentConfig& config);

bool operator==(const ProblemConfig& a, const ProblemConfig& b);
bool operator==(const SamplerConfig& a, const SamplerConfig& b);
bool operator==(const ExperimentConfig& a, const ExperimentConfig& b);

}  // namespace ips
