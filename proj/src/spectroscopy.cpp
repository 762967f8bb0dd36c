#include "ipsampler/spectroscopy.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <tuple>
#include <utility>

#include "ipsampler/gaussian_model.hpp"
#include "ipsampler/mathutil.hpp"
#include "ipsampler/spectral.hpp"

namespace ips {

namespace {

// Noise stream tag for synthetic measurements, distinct from chain streams.
constexpr std::uint64_t kMeasurementStreamId = 0x6d656173ULL;

void validate_config(const SpectroscopyConfig& c) {
  if (c.grid_size < 4) throw InvalidArgumentError("spectroscopy: grid_size must be >= 4");
  if (c.chord_count < 1) throw InvalidArgumentError("spectroscopy: need at least one chord");
  if (c.radial_knots < 2) {
    throw InvalidArgumentError("spectroscopy: shell profiles need at least two knots");
  }
  if (c.frequency_count < 2) {
    throw InvalidArgumentError("spectroscopy: need at least two frequencies");
  }
  if (!(c.nu_min > 0.0) || !(c.nu_max > c.nu_min) || !(c.nu0 > 0.0)) {
    throw InvalidArgumentError("spectroscopy: frequency grid must satisfy 0 < nu_min < nu_max");
  }
  if (!(c.amplitude_scale > 0.0) || !(c.temperature_scale > 0.0) ||
      !(c.velocity_scale > 0.0)) {
    throw InvalidArgumentError("spectroscopy: field scalings must be > 0");
  }
  if (!(c.noise_floor > 0.0) || !(c.noise_proportional >= 0.0)) {
    throw InvalidArgumentError("spectroscopy: noise_floor must be > 0 and noise_proportional >= 0");
  }
  if (!(c.correlation_length > 0.0) || !(c.shrinkage > 0.0)) {
    throw InvalidArgumentError("spectroscopy: correlation_length and shrinkage must be > 0");
  }
  if (!(c.center_shift_std >= 0.0)) {
    throw InvalidArgumentError("spectroscopy: center_shift_std must be >= 0");
  }
  if (!c.impact_parameters.empty()) {
    if (static_cast<int>(c.impact_parameters.size()) != c.chord_count) {
      throw InvalidArgumentError("spectroscopy: impact_parameters must match chord_count");
    }
    for (double b : c.impact_parameters) {
      if (!(b > -1.0 && b < 1.0)) {
        throw InvalidArgumentError("spectroscopy: impact parameters must lie inside (-1, 1)");
      }
    }
    std::vector<double> sorted = c.impact_parameters;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
      throw InvalidArgumentError("spectroscopy: impact parameters must be distinct");
    }
  }
}

}  // namespace

// Everything the likelihood gradient needs to run the forward map backwards.
struct SpectroscopyProblem::Fields {
  // Physical values per active cell.
  Eigen::VectorXd a, t, v;
  // Transformed latent values per knot (shell) or band (slab), pre-softplus.
  Eigen::VectorXd tilde_a, tilde_t, tilde_v;
  // Physical values per knot or band.
  Eigen::VectorXd node_a, node_t, node_v;
  // Shell interpolation state per active cell.
  std::vector<int> segment;     // lower knot of the straddling pair
  Eigen::VectorXd fraction;     // position inside the pair, clamped to [0, 1]
  Eigen::VectorXd radial_x, radial_y;  // unit vector from center, 0 at r = 0
  std::vector<char> clamped;    // constant extrapolation region, no r-slope
};

SpectroscopyProblem::SpectroscopyProblem(SpectroscopyConfig config)
    : config_(std::move(config)) {
  validate_config(config_);
  const int grid = config_.grid_size;
  const double cell = 2.0 / grid;

  if (config_.impact_parameters.empty()) {
    const double span = 1.9;
    const double step = span / config_.chord_count;
    for (int m = 0; m < config_.chord_count; ++m) {
      impacts_.push_back(-0.95 + (m + 0.5) * step);
    }
  } else {
    impacts_ = config_.impact_parameters;
  }

  for (int j = 0; j < config_.frequency_count; ++j) {
    frequencies_.push_back(config_.nu_min + j * (config_.nu_max - config_.nu_min) /
                                                (config_.frequency_count - 1));
  }

  // Each chord is a horizontal line y = b crossing the full square, so it
  // meets every cell of one grid row with a segment of one cell width.
  std::map<int, int> active_index;
  chord_weights_.resize(impacts_.size());
  for (std::size_t m = 0; m < impacts_.size(); ++m) {
    int row = static_cast<int>(std::floor((impacts_[m] + 1.0) / cell));
    row = std::clamp(row, 0, grid - 1);
    for (int ix = 0; ix < grid; ++ix) {
      const int id = row * grid + ix;
      auto it = active_index.find(id);
      if (it == active_index.end()) {
        it = active_index.emplace(id, static_cast<int>(active_cells_.size())).first;
        active_cells_.push_back(id);
      }
      chord_weights_[m].push_back({it->second, cell});
    }
  }
  active_x_.resize(active_cells_.size());
  active_y_.resize(active_cells_.size());
  for (std::size_t i = 0; i < active_cells_.size(); ++i) {
    const int id = active_cells_[i];
    active_x_[i] = -1.0 + (id % grid + 0.5) * cell;
    active_y_[i] = -1.0 + (id / grid + 0.5) * cell;
  }

  if (config_.geometry == SpectroscopyGeometry::kShell) {
    const int k = config_.radial_knots;
    knot_spacing_ = std::sqrt(2.0) / (k - 1);
    Eigen::VectorXd radii(k);
    for (int i = 0; i < k; ++i) {
      radii[i] = i * knot_spacing_;
      knot_radii_.push_back(radii[i]);
    }
    correlation_factor_ =
        cholesky_factor(squared_exponential_kernel(radii, config_.correlation_length,
                                                   config_.shrinkage))
            .factor.matrix();
  } else {
    Eigen::VectorXd offsets =
        Eigen::Map<const Eigen::VectorXd>(impacts_.data(), impacts_.size());
    correlation_factor_ =
        cholesky_factor(squared_exponential_kernel(offsets, config_.correlation_length,
                                                   config_.shrinkage))
            .factor.matrix();
    // Every active cell belongs to the band of its nearest chord; cells past
    // the outermost chords extend those bands.
    for (std::size_t i = 0; i < active_cells_.size(); ++i) {
      int best = 0;
      double best_d = std::abs(active_y_[i] - impacts_[0]);
      for (std::size_t m = 1; m < impacts_.size(); ++m) {
        const double d = std::abs(active_y_[i] - impacts_[m]);
        if (d < best_d) {
          best_d = d;
          best = static_cast<int>(m);
        }
      }
      cell_band_.push_back(best);
    }
  }
}

Eigen::Index SpectroscopyProblem::dimension() const {
  if (config_.geometry == SpectroscopyGeometry::kShell) {
    return 3 * config_.radial_knots + 2;
  }
  return 3 * static_cast<Eigen::Index>(impacts_.size());
}

Eigen::MatrixXd SpectroscopyProblem::integration_matrix() const {
  const int cells = config_.grid_size * config_.grid_size;
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(chord_count(), cells);
  for (std::size_t m = 0; m < chord_weights_.size(); ++m) {
    for (const ChordWeight& w : chord_weights_[m]) {
      out(static_cast<int>(m), active_cells_[w.active]) += w.length;
    }
  }
  return out;
}

Eigen::VectorXd SpectroscopyProblem::integrate_image(const Eigen::VectorXd& cell_values) const {
  if (cell_values.size() != config_.grid_size * config_.grid_size) {
    throw InvalidArgumentError("integrate_image: image does not match the grid");
  }
  Eigen::VectorXd out = Eigen::VectorXd::Zero(chord_count());
  for (std::size_t m = 0; m < chord_weights_.size(); ++m) {
    for (const ChordWeight& w : chord_weights_[m]) {
      out[static_cast<int>(m)] += w.length * cell_values[active_cells_[w.active]];
    }
  }
  return out;
}

SpectroscopyProblem::Fields SpectroscopyProblem::compute_fields(const Eigen::VectorXd& x) const {
  if (x.size() != dimension()) {
    throw InvalidArgumentError("spectroscopy: point has wrong dimension");
  }
  Fields f;
  const Eigen::Index nodes = correlation_factor_.rows();
  f.tilde_a = correlation_factor_ * x.segment(0, nodes);
  f.tilde_t = correlation_factor_ * x.segment(nodes, nodes);
  f.tilde_v = correlation_factor_ * x.segment(2 * nodes, nodes);
  f.node_a.resize(nodes);
  f.node_t.resize(nodes);
  f.node_v.resize(nodes);
  for (Eigen::Index i = 0; i < nodes; ++i) {
    f.node_a[i] = config_.amplitude_scale * softplus(f.tilde_a[i]);
    f.node_t[i] = config_.temperature_scale * softplus(f.tilde_t[i]);
    f.node_v[i] = config_.velocity_scale * f.tilde_v[i];
  }

  const Eigen::Index cells = active_x_.size();
  f.a.resize(cells);
  f.t.resize(cells);
  f.v.resize(cells);
  if (config_.geometry == SpectroscopyGeometry::kShell) {
    const double cx = config_.center_shift_std * x[3 * nodes];
    const double cy = config_.center_shift_std * x[3 * nodes + 1];
    f.segment.resize(cells);
    f.fraction.resize(cells);
    f.radial_x.resize(cells);
    f.radial_y.resize(cells);
    f.clamped.resize(cells);
    for (Eigen::Index i = 0; i < cells; ++i) {
      const double dx = active_x_[i] - cx;
      const double dy = active_y_[i] - cy;
      const double r = std::hypot(dx, dy);
      if (r > 0.0) {
        f.radial_x[i] = dx / r;
        f.radial_y[i] = dy / r;
      } else {
        f.radial_x[i] = 0.0;
        f.radial_y[i] = 0.0;
      }
      const double s = r / knot_spacing_;
      int seg = std::min(static_cast<int>(s), static_cast<int>(nodes) - 2);
      const double raw = s - seg;
      f.segment[i] = seg;
      f.fraction[i] = std::clamp(raw, 0.0, 1.0);
      f.clamped[i] = raw > 1.0 ? 1 : 0;
      const double w0 = 1.0 - f.fraction[i];
      const double w1 = f.fraction[i];
      f.a[i] = w0 * f.node_a[seg] + w1 * f.node_a[seg + 1];
      f.t[i] = w0 * f.node_t[seg] + w1 * f.node_t[seg + 1];
      f.v[i] = w0 * f.node_v[seg] + w1 * f.node_v[seg + 1];
    }
  } else {
    for (Eigen::Index i = 0; i < cells; ++i) {
      const int band = cell_band_[i];
      f.a[i] = f.node_a[band];
      f.t[i] = f.node_t[band];
      f.v[i] = f.node_v[band];
    }
  }
  for (Eigen::Index i = 0; i < cells; ++i) {
    if (!(std::abs(f.v[i]) < 1.0)) {
      std::ostringstream os;
      os << "spectroscopy: velocity " << f.v[i] << " at cell " << active_cells_[i]
         << " reaches the Doppler pole";
      throw UnphysicalVelocityError(os.str());
    }
  }
  return f;
}

void SpectroscopyProblem::backpropagate_fields(const Fields& f, const Eigen::VectorXd& grad_a,
                                               const Eigen::VectorXd& grad_t,
                                               const Eigen::VectorXd& grad_v,
                                               Eigen::VectorXd* grad_x) const {
  const Eigen::Index nodes = correlation_factor_.rows();
  Eigen::VectorXd node_ga = Eigen::VectorXd::Zero(nodes);
  Eigen::VectorXd node_gt = Eigen::VectorXd::Zero(nodes);
  Eigen::VectorXd node_gv = Eigen::VectorXd::Zero(nodes);
  double grad_cx = 0.0, grad_cy = 0.0;

  if (config_.geometry == SpectroscopyGeometry::kShell) {
    for (Eigen::Index i = 0; i < f.a.size(); ++i) {
      const int seg = f.segment[i];
      const double w1 = f.fraction[i];
      const double w0 = 1.0 - w1;
      node_ga[seg] += w0 * grad_a[i];
      node_ga[seg + 1] += w1 * grad_a[i];
      node_gt[seg] += w0 * grad_t[i];
      node_gt[seg + 1] += w1 * grad_t[i];
      node_gv[seg] += w0 * grad_v[i];
      node_gv[seg + 1] += w1 * grad_v[i];
      if (!f.clamped[i]) {
        const double dr = (grad_a[i] * (f.node_a[seg + 1] - f.node_a[seg]) +
                           grad_t[i] * (f.node_t[seg + 1] - f.node_t[seg]) +
                           grad_v[i] * (f.node_v[seg + 1] - f.node_v[seg])) /
                          knot_spacing_;
        // r shrinks when the center moves toward the cell.
        grad_cx -= dr * f.radial_x[i];
        grad_cy -= dr * f.radial_y[i];
      }
    }
  } else {
    for (Eigen::Index i = 0; i < f.a.size(); ++i) {
      const int band = cell_band_[i];
      node_ga[band] += grad_a[i];
      node_gt[band] += grad_t[i];
      node_gv[band] += grad_v[i];
    }
  }

  Eigen::VectorXd tilde_ga(nodes), tilde_gt(nodes), tilde_gv(nodes);
  for (Eigen::Index i = 0; i < nodes; ++i) {
    tilde_ga[i] = node_ga[i] * config_.amplitude_scale * sigmoid(f.tilde_a[i]);
    tilde_gt[i] = node_gt[i] * config_.temperature_scale * sigmoid(f.tilde_t[i]);
    tilde_gv[i] = node_gv[i] * config_.velocity_scale;
  }
  grad_x->segment(0, nodes) = correlation_factor_.transpose() * tilde_ga;
  grad_x->segment(nodes, nodes) = correlation_factor_.transpose() * tilde_gt;
  grad_x->segment(2 * nodes, nodes) = correlation_factor_.transpose() * tilde_gv;
  if (config_.geometry == SpectroscopyGeometry::kShell) {
    (*grad_x)[3 * nodes] = grad_cx * config_.center_shift_std;
    (*grad_x)[3 * nodes + 1] = grad_cy * config_.center_shift_std;
  }
}

Eigen::MatrixXd SpectroscopyProblem::emissivity_signals(const Fields& f) const {
  const Eigen::Index cells = f.a.size();
  const double root_two_pi = std::sqrt(2.0 * kPi);
  Eigen::VectorXd peak(cells), inv_center(cells), inv_w2(cells);
  for (Eigen::Index i = 0; i < cells; ++i) {
    const double w = std::sqrt(f.t[i]) / config_.nu0;
    peak[i] = f.a[i] / (root_two_pi * w);
    inv_center[i] = (1.0 - f.v[i]) / config_.nu0;
    inv_w2[i] = 1.0 / (w * w);
  }
  Eigen::MatrixXd signals(frequency_count(), chord_count());
  Eigen::VectorXd emissivity(cells);
  for (int j = 0; j < frequency_count(); ++j) {
    const double inv_nu = 1.0 / frequencies_[j];
    for (Eigen::Index i = 0; i < cells; ++i) {
      const double d = inv_nu - inv_center[i];
      emissivity[i] = peak[i] * std::exp(-0.5 * d * d * inv_w2[i]);
    }
    for (int m = 0; m < chord_count(); ++m) {
      double acc = 0.0;
      for (const ChordWeight& w : chord_weights_[m]) {
        acc += w.length * emissivity[w.active];
      }
      signals(j, m) = acc;
    }
  }
  return signals;
}

Eigen::MatrixXd SpectroscopyProblem::predict(const Eigen::VectorXd& x) const {
  return emissivity_signals(compute_fields(x));
}

Eigen::VectorXd SpectroscopyProblem::active_field(const Eigen::VectorXd& x, char which) const {
  const Fields f = compute_fields(x);
  switch (which) {
    case 'a': return f.a;
    case 't': return f.t;
    case 'v': return f.v;
    default: throw InvalidArgumentError("active_field: field must be 'a', 't', or 'v'");
  }
}

SpectroscopyProblem::LikelihoodEvaluation SpectroscopyProblem::log_likelihood(
    const Eigen::VectorXd& x, const Eigen::MatrixXd& measurements) const {
  if (measurements.rows() != frequency_count() || measurements.cols() != chord_count()) {
    throw InvalidArgumentError("spectroscopy: measurement grid does not match the problem");
  }
  const Fields f = compute_fields(x);
  const Eigen::Index cells = f.a.size();
  const double root_two_pi = std::sqrt(2.0 * kPi);
  const double sigma2 = config_.noise_floor * config_.noise_floor;
  const double sigma_p2 = config_.noise_proportional * config_.noise_proportional;

  Eigen::VectorXd peak(cells), inv_center(cells), inv_w2(cells);
  for (Eigen::Index i = 0; i < cells; ++i) {
    const double w = std::sqrt(f.t[i]) / config_.nu0;
    peak[i] = f.a[i] / (root_two_pi * w);
    inv_center[i] = (1.0 - f.v[i]) / config_.nu0;
    inv_w2[i] = 1.0 / (w * w);
  }

  LikelihoodEvaluation out;
  out.predicted.resize(frequency_count(), chord_count());
  Eigen::VectorXd grad_a = Eigen::VectorXd::Zero(cells);
  Eigen::VectorXd grad_t = Eigen::VectorXd::Zero(cells);
  Eigen::VectorXd grad_v = Eigen::VectorXd::Zero(cells);
  Eigen::VectorXd emissivity(cells), diff(cells);

  for (int j = 0; j < frequency_count(); ++j) {
    const double inv_nu = 1.0 / frequencies_[j];
    for (Eigen::Index i = 0; i < cells; ++i) {
      const double d = inv_nu - inv_center[i];
      diff[i] = d;
      emissivity[i] = peak[i] * std::exp(-0.5 * d * d * inv_w2[i]);
    }
    for (int m = 0; m < chord_count(); ++m) {
      double signal = 0.0;
      for (const ChordWeight& w : chord_weights_[m]) {
        signal += w.length * emissivity[w.active];
      }
      out.predicted(j, m) = signal;
      const double var = sigma2 + sigma_p2 * signal * signal;
      const double resid = measurements(j, m) - signal;
      out.value += -0.5 * resid * resid / var - 0.5 * std::log(2.0 * kPi * var);
      // d/dsignal of the channel log density; the variance depends on the
      // signal too, which contributes the last two terms.
      const double gsignal = resid / var +
                             sigma_p2 * signal * (resid * resid / (var * var) - 1.0 / var);
      for (const ChordWeight& w : chord_weights_[m]) {
        const double ge = w.length * gsignal;
        const Eigen::Index i = w.active;
        grad_a[i] += ge * emissivity[i] / f.a[i];
        grad_t[i] += ge * emissivity[i] * (diff[i] * diff[i] * inv_w2[i] - 1.0) /
                     (2.0 * f.t[i]);
        grad_v[i] += ge * emissivity[i] * (-diff[i] * inv_w2[i]) / config_.nu0;
      }
    }
  }

  out.gradient = Eigen::VectorXd::Zero(dimension());
  backpropagate_fields(f, grad_a, grad_t, grad_v, &out.gradient);
  return out;
}

Eigen::MatrixXd SpectroscopyProblem::constant_species_signal(double amplitude,
                                                             double temperature,
                                                             double velocity) const {
  if (!(amplitude > 0.0) || !(temperature > 0.0)) {
    throw InvalidArgumentError("constant_species_signal: amplitude and temperature must be > 0");
  }
  if (!(std::abs(velocity) < 1.0)) {
    throw UnphysicalVelocityError("constant_species_signal: velocity reaches the Doppler pole");
  }
  const double w = std::sqrt(temperature) / config_.nu0;
  const double peak = amplitude / (std::sqrt(2.0 * kPi) * w);
  const double inv_center = (1.0 - velocity) / config_.nu0;
  Eigen::MatrixXd signals(frequency_count(), chord_count());
  for (int j = 0; j < frequency_count(); ++j) {
    const double d = 1.0 / frequencies_[j] - inv_center;
    const double e = peak * std::exp(-0.5 * d * d / (w * w));
    for (int m = 0; m < chord_count(); ++m) {
      double acc = 0.0;
      for (const ChordWeight& cw : chord_weights_[m]) acc += cw.length * e;
      signals(j, m) = acc;
    }
  }
  return signals;
}

Eigen::MatrixXd simulate_measurements(const SpectroscopyProblem& problem,
                                      const Eigen::VectorXd& x_true, std::uint64_t seed) {
  Eigen::MatrixXd signal = problem.predict(x_true);
  CounterRng rng(seed, {kMeasurementStreamId});
  const double sigma2 = problem.config().noise_floor * problem.config().noise_floor;
  const double sigma_p2 =
      problem.config().noise_proportional * problem.config().noise_proportional;
  for (Eigen::Index j = 0; j < signal.rows(); ++j) {
    for (Eigen::Index m = 0; m < signal.cols(); ++m) {
      const double sd = std::sqrt(sigma2 + sigma_p2 * signal(j, m) * signal(j, m));
      signal(j, m) += sd * rng.normal();
    }
  }
  return signal;
}

Eigen::MatrixXd two_peak_measurements(const SpectroscopyProblem& problem,
                                      double peak_velocity, std::uint64_t seed) {
  if (!(peak_velocity > 0.0)) {
    throw InvalidArgumentError("two_peak_measurements: peak velocity must be > 0");
  }
  const double amplitude = problem.config().amplitude_scale * softplus(0.0);
  // Line width a quarter of the peak separation 2 v0, so the two peaks are
  // always resolved no matter the configured velocity.
  const double width = 0.5 * peak_velocity;
  const double temperature = width * width * problem.config().nu0 * problem.config().nu0;
  Eigen::MatrixXd signal =
      problem.constant_species_signal(amplitude, temperature, peak_velocity) +
      problem.constant_species_signal(amplitude, temperature, -peak_velocity);
  CounterRng rng(seed, {kMeasurementStreamId});
  const double sigma2 = problem.config().noise_floor * problem.config().noise_floor;
  const double sigma_p2 =
      problem.config().noise_proportional * problem.config().noise_proportional;
  for (Eigen::Index j = 0; j < signal.rows(); ++j) {
    for (Eigen::Index m = 0; m < signal.cols(); ++m) {
      const double sd = std::sqrt(sigma2 + sigma_p2 * signal(j, m) * signal(j, m));
      signal(j, m) += sd * rng.normal();
    }
  }
  return signal;
}

void write_measurements_csv(const Eigen::MatrixXd& measurements, std::ostream& os) {
  os << "# schema: spectroscopy_measurements v1\n";
  os << "frequency_index,chord_index,value\n";
  char buf[64];
  for (Eigen::Index j = 0; j < measurements.rows(); ++j) {
    for (Eigen::Index m = 0; m < measurements.cols(); ++m) {
      std::snprintf(buf, sizeof(buf), "%.17g", measurements(j, m));
      os << j << ',' << m << ',' << buf << '\n';
    }
  }
}

Eigen::MatrixXd read_measurements_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line.rfind("# schema: spectroscopy_measurements", 0) != 0) {
    throw InvalidArgumentError("measurements csv: missing schema header");
  }
  if (!std::getline(is, line) || line != "frequency_index,chord_index,value") {
    throw InvalidArgumentError("measurements csv: missing column header");
  }
  std::vector<std::tuple<int, int, double>> rows;
  int max_j = -1, max_m = -1;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    int j = 0, m = 0;
    double v = 0.0;
    if (std::sscanf(line.c_str(), "%d,%d,%lg", &j, &m, &v) != 3 || j < 0 || m < 0) {
      throw InvalidArgumentError("measurements csv: bad row '" + line + "'");
    }
    rows.emplace_back(j, m, v);
    max_j = std::max(max_j, j);
    max_m = std::max(max_m, m);
  }
  if (rows.empty()) throw InvalidArgumentError("measurements csv: no data rows");
  Eigen::MatrixXd out = Eigen::MatrixXd::Constant(
      max_j + 1, max_m + 1, std::numeric_limits<double>::quiet_NaN());
  for (const auto& [j, m, v] : rows) out(j, m) = v;
  if (out.hasNaN()) {
    throw InvalidArgumentError("measurements csv: incomplete frequency-chord grid");
  }
  return out;
}

SpectroscopyTarget::SpectroscopyTarget(std::shared_ptr<const SpectroscopyProblem> problem,
                                       Eigen::MatrixXd measurements)
    : problem_(std::move(problem)), measurements_(std::move(measurements)) {
  if (!problem_) throw InvalidArgumentError("SpectroscopyTarget: problem is null");
  if (measurements_.rows() != problem_->frequency_count() ||
      measurements_.cols() != problem_->chord_count()) {
    throw InvalidArgumentError("SpectroscopyTarget: measurement grid does not match the problem");
  }
}

LogDensityValue SpectroscopyTarget::eval_prior(const Eigen::VectorXd& x) const {
  require_dimension(x, "SpectroscopyTarget");
  return {-0.5 * x.squaredNorm(), -x};
}

LogDensityValue SpectroscopyTarget::eval_likelihood(const Eigen::VectorXd& x) const {
  require_dimension(x, "SpectroscopyTarget");
  LogDensityValue out;
  try {
    SpectroscopyProblem::LikelihoodEvaluation e = problem_->log_likelihood(x, measurements_);
    out.value = e.value;
    out.gradient = std::move(e.gradient);
  } catch (const UnphysicalVelocityError&) {
    // A diverged trajectory can wander past the Doppler wall. For sampling
    // that is a zero-density state to reject, not a reason to abort the run.
    out.value = -std::numeric_limits<double>::infinity();
    out.gradient = Eigen::VectorXd::Zero(problem_->dimension());
  }
  return out;
}

Eigen::VectorXd SpectroscopyTarget::sample_prior(CounterRng& rng) const {
  return rng.normal_vector(problem_->dimension());
}

int velocity_mode_sign(const SpectroscopyProblem& problem, const Eigen::VectorXd& x) {
  const Eigen::VectorXd a = problem.active_field(x, 'a');
  const Eigen::VectorXd v = problem.active_field(x, 'v');
  const double weighted = a.dot(v);
  if (weighted > 0.0) return 1;
  if (weighted < 0.0) return -1;
  return 0;
}

}  // namespace ips
