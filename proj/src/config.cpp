#include "ipsampler/config.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <tuple>

#include "json.hpp"

#include "ipsampler/errors.hpp"

namespace ips {

namespace {

using json = nlohmann::ordered_json;

// Tracks which keys of one JSON object have been consumed, so that anything
// left over can be rejected by name. All type mismatches surface as
// ConfigError with the dotted key path.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string prefix) : j_(j), prefix_(std::move(prefix)) {
    if (!j_.is_object()) {
      throw ConfigError("config: " + where("") + " must be an object", prefix_);
    }
  }

  bool has(const char* key) const { return j_.contains(key); }

  void read_int(const char* key, int* out) {
    if (!take(key)) return;
    const json& v = j_.at(key);
    if (!v.is_number_integer()) expected(key, "an integer");
    *out = v.get<int>();
  }

  void read_long(const char* key, long long* out) {
    if (!take(key)) return;
    const json& v = j_.at(key);
    if (!v.is_number_integer()) expected(key, "an integer");
    *out = v.get<long long>();
  }

  void read_u64(const char* key, std::uint64_t* out) {
    if (!take(key)) return;
    const json& v = j_.at(key);
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0)) {
      expected(key, "a non-negative integer");
    }
    *out = v.get<std::uint64_t>();
  }

  void read_double(const char* key, double* out) {
    if (!take(key)) return;
    const json& v = j_.at(key);
    if (!v.is_number()) expected(key, "a number");
    *out = v.get<double>();
  }

  void read_bool(const char* key, bool* out) {
    if (!take(key)) return;
    const json& v = j_.at(key);
    if (!v.is_boolean()) expected(key, "a boolean");
    *out = v.get<bool>();
  }

  void read_string(const char* key, std::string* out) {
    if (!take(key)) return;
    const json& v = j_.at(key);
    if (!v.is_string()) expected(key, "a string");
    *out = v.get<std::string>();
  }

  void read_double_list(const char* key, std::vector<double>* out) {
    if (!take(key)) return;
    const json& v = j_.at(key);
    if (!v.is_array()) expected(key, "an array of numbers");
    out->clear();
    for (const json& e : v) {
      if (!e.is_number()) expected(key, "an array of numbers");
      out->push_back(e.get<double>());
    }
  }

  const json* child(const char* key) {
    if (!take(key)) return nullptr;
    return &j_.at(key);
  }

  // Rejects whatever was never consumed, naming the first offender.
  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!consumed_.count(it.key())) {
        const std::string path = where(it.key());
        throw ConfigError("config: unknown key \"" + path + "\"", path);
      }
    }
  }

 private:
  bool take(const char* key) {
    if (!j_.contains(key)) return false;
    consumed_.insert(key);
    return true;
  }

  std::string where(const std::string& key) const {
    if (prefix_.empty()) return key;
    if (key.empty()) return prefix_;
    return prefix_ + "." + key;
  }

  [[noreturn]] void expected(const char* key, const char* what) const {
    const std::string path = where(key);
    throw ConfigError("config: key \"" + path + "\" expects " + what, path);
  }

  const json& j_;
  std::string prefix_;
  std::set<std::string> consumed_;
};

void check_choice(const std::string& value, std::initializer_list<const char*> allowed,
                  const std::string& path) {
  for (const char* a : allowed) {
    if (value == a) return;
  }
  std::string msg = "config: key \"" + path + "\" must be one of {";
  bool first = true;
  for (const char* a : allowed) {
    if (!first) msg += ", ";
    msg += a;
    first = false;
  }
  msg += "}, got \"" + value + "\"";
  throw ConfigError(msg, path);
}

ProblemConfig parse_problem(const json& j) {
  ProblemConfig p;
  ObjectReader r(j, "problem");
  r.read_string("name", &p.name);
  check_choice(p.name, {"gaussian-smoothing", "standard-normal", "bimodal", "spectroscopy"},
               "problem.name");
  if (p.name == "gaussian-smoothing") {
    r.read_int("size", &p.size);
    r.read_int("measurements", &p.measurements);
    r.read_double("correlation", &p.correlation);
    r.read_double("shrinkage", &p.shrinkage);
    r.read_double("noise", &p.noise);
    r.read_u64("data_seed", &p.data_seed);
  } else if (p.name == "standard-normal") {
    r.read_int("size", &p.size);
  } else if (p.name == "bimodal") {
    r.read_int("size", &p.size);
    r.read_int("constrained", &p.constrained);
    r.read_double("mixture_sigma", &p.mixture_sigma);
  } else {
    r.read_string("geometry", &p.geometry);
    check_choice(p.geometry, {"shell", "slab"}, "problem.geometry");
    r.read_int("grid", &p.grid);
    r.read_int("chords", &p.chords);
    r.read_int("knots", &p.knots);
    r.read_int("frequencies", &p.frequencies);
    r.read_double("noise_floor", &p.noise_floor);
    r.read_double("peak_velocity", &p.peak_velocity);
    r.read_u64("data_seed", &p.data_seed);
  }
  r.finish();
  return p;
}

SamplerConfig parse_sampler(const json& j) {
  SamplerConfig s;
  ObjectReader r(j, "sampler");
  r.read_string("name", &s.name);
  check_choice(s.name, {"algorithm1", "plain-hmc", "remc"}, "sampler.name");
  if (s.name == "plain-hmc") {
    r.read_int("chains", &s.chains);
    r.read_double("target_accept", &s.target_accept);
    r.read_double("step_size", &s.step_size);
    r.read_int("leapfrogs", &s.leapfrogs);
    r.read_int("adapt_iterations", &s.adapt_iterations);
    r.read_double("rhat_threshold", &s.rhat_threshold);
  } else if (s.name == "algorithm1") {
    r.read_int("chains", &s.chains);
    r.read_double("target_accept", &s.target_accept);
    r.read_int("adapt_iterations", &s.adapt_iterations);
    r.read_int("stage1_draws", &s.stage1_draws);
    r.read_int("stage2_draws", &s.stage2_draws);
    r.read_int("trace_dimensions", &s.trace_dimensions);
  } else {
    r.read_double_list("temperatures", &s.temperatures);
    r.read_int("rungs", &s.rungs);
    r.read_double("t_max", &s.t_max);
    r.read_int("copies", &s.copies);
    r.read_string("scheme", &s.scheme);
    check_choice(s.scheme, {"deo", "seo"}, "sampler.scheme");
    r.read_string("mode", &s.mode);
    check_choice(s.mode, {"likelihood", "posterior"}, "sampler.mode");
    r.read_int("adapt_sweeps", &s.adapt_sweeps);
    r.read_int("rounds_per_sweep", &s.rounds_per_sweep);
    r.read_bool("adapt_temperatures", &s.adapt_temperatures);
    r.read_double("leapfrog_multiplier", &s.leapfrog_multiplier);
    r.read_int("leapfrogs", &s.leapfrogs);
    r.read_double("target_accept", &s.target_accept);
  }
  r.finish();
  return s;
}

json emit_problem(const ProblemConfig& p) {
  json j;
  j["name"] = p.name;
  if (p.name == "gaussian-smoothing") {
    j["size"] = p.size;
    j["measurements"] = p.measurements;
    j["correlation"] = p.correlation;
    j["shrinkage"] = p.shrinkage;
    j["noise"] = p.noise;
    j["data_seed"] = p.data_seed;
  } else if (p.name == "standard-normal") {
    j["size"] = p.size;
  } else if (p.name == "bimodal") {
    j["size"] = p.size;
    j["constrained"] = p.constrained;
    j["mixture_sigma"] = p.mixture_sigma;
  } else {
    j["geometry"] = p.geometry;
    j["grid"] = p.grid;
    j["chords"] = p.chords;
    j["knots"] = p.knots;
    j["frequencies"] = p.frequencies;
    j["noise_floor"] = p.noise_floor;
    j["peak_velocity"] = p.peak_velocity;
    j["data_seed"] = p.data_seed;
  }
  return j;
}

json emit_sampler(const SamplerConfig& s) {
  json j;
  j["name"] = s.name;
  if (s.name == "plain-hmc") {
    j["chains"] = s.chains;
    j["target_accept"] = s.target_accept;
    j["step_size"] = s.step_size;
    j["leapfrogs"] = s.leapfrogs;
    j["adapt_iterations"] = s.adapt_iterations;
    j["rhat_threshold"] = s.rhat_threshold;
  } else if (s.name == "algorithm1") {
    j["chains"] = s.chains;
    j["target_accept"] = s.target_accept;
    j["adapt_iterations"] = s.adapt_iterations;
    j["stage1_draws"] = s.stage1_draws;
    j["stage2_draws"] = s.stage2_draws;
    j["trace_dimensions"] = s.trace_dimensions;
  } else {
    j["temperatures"] = s.temperatures;
    j["rungs"] = s.rungs;
    j["t_max"] = s.t_max;
    j["copies"] = s.copies;
    j["scheme"] = s.scheme;
    j["mode"] = s.mode;
    j["adapt_sweeps"] = s.adapt_sweeps;
    j["rounds_per_sweep"] = s.rounds_per_sweep;
    j["adapt_temperatures"] = s.adapt_temperatures;
    j["leapfrog_multiplier"] = s.leapfrog_multiplier;
    j["leapfrogs"] = s.leapfrogs;
    j["target_accept"] = s.target_accept;
  }
  return j;
}

}  // namespace

ExperimentConfig parse_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: not valid JSON: ") + e.what());
  }
  ExperimentConfig c;
  ObjectReader r(j, "");
  r.read_int("schema_version", &c.schema_version);
  if (c.schema_version != 1) {
    throw ConfigError("config: schema_version " + std::to_string(c.schema_version) +
                          " is not supported (this build reads version 1)",
                      "schema_version");
  }
  r.read_long("final_samples", &c.final_samples);
  r.read_u64("seed", &c.seed);
  r.read_int("threads", &c.threads);
  r.read_string("out", &c.out);
  if (const json* p = r.child("problem")) c.problem = parse_problem(*p);
  if (const json* s = r.child("sampler")) c.sampler = parse_sampler(*s);
  r.finish();
  if (c.final_samples < 1) {
    throw ConfigError("config: key \"final_samples\" must be positive", "final_samples");
  }
  if (c.threads < 1) {
    throw ConfigError("config: key \"threads\" must be positive", "threads");
  }
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

std::string emit_config(const ExperimentConfig& c) {
  json j;
  j["schema_version"] = c.schema_version;
  j["final_samples"] = c.final_samples;
  j["seed"] = c.seed;
  j["threads"] = c.threads;
  j["out"] = c.out;
  j["problem"] = emit_problem(c.problem);
  j["sampler"] = emit_sampler(c.sampler);
  return j.dump(2) + "\n";
}

bool operator==(const ProblemConfig& a, const ProblemConfig& b) {
  return std::tie(a.name, a.size, a.measurements, a.correlation, a.shrinkage, a.noise,
                  a.data_seed, a.constrained, a.mixture_sigma, a.geometry, a.grid,
                  a.chords, a.knots, a.frequencies, a.noise_floor, a.peak_velocity) ==
         std::tie(b.name, b.size, b.measurements, b.correlation, b.shrinkage, b.noise,
                  b.data_seed, b.constrained, b.mixture_sigma, b.geometry, b.grid,
                  b.chords, b.knots, b.frequencies, b.noise_floor, b.peak_velocity);
}

bool operator==(const SamplerConfig& a, const SamplerConfig& b) {
  return std::tie(a.name, a.chains, a.target_accept, a.step_size, a.leapfrogs,
                  a.adapt_iterations, a.rhat_threshold, a.stage1_draws, a.stage2_draws,
                  a.trace_dimensions, a.temperatures, a.rungs, a.t_max, a.copies,
                  a.scheme, a.mode, a.adapt_sweeps, a.rounds_per_sweep,
                  a.adapt_temperatures, a.leapfrog_multiplier) ==
         std::tie(b.name, b.chains, b.target_accept, b.step_size, b.leapfrogs,
                  b.adapt_iterations, b.rhat_threshold, b.stage1_draws, b.stage2_draws,
                  b.trace_dimensions, b.temperatures, b.rungs, b.t_max, b.copies,
                  b.scheme, b.mode, b.adapt_sweeps, b.rounds_per_sweep,
                  b.adapt_temperatures, b.leapfrog_multiplier);
}

bool operator==(const ExperimentConfig& a, const ExperimentConfig& b) {
  return a.schema_version == b.schema_version && a.final_samples == b.final_samples &&
         a.seed == b.seed && a.threads == b.threads && a.out == b.out &&
         a.problem == b.problem && a.sampler == b.sampler;
}

}  // namespace ips
