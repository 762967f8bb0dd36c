#pragma once

// Emission spectroscopy forward model and posterior. An ion species emits a
// Doppler-shifted, Doppler-broadened line; M chords through the [-1,1]^2
// domain integrate the emissivity at each of many frequencies, and the noise
// grows with the signal. Amplitude, temperature, and velocity fields are
// driven by a standard-normal latent vector through a smoothing correlation
// and a softplus, either as radial profiles about a shifted center (shell) or
// as per-chord bands (slab).

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <vector>

#include <Eigen/Core>

#include "ipsampler/errors.hpp"
#include "ipsampler/target.hpp"

namespace ips {

enum class SpectroscopyGeometry { kShell, kSlab };

struct SpectroscopyConfig {
  SpectroscopyGeometry geometry = SpectroscopyGeometry::kShell;
  int grid_size = 32;    // cells per side of the square domain
  int chord_count = 20;  // parallel measurement chords
  int radial_knots = 16; // shell profile resolution
  int frequency_count = 200;
  double nu_min = 0.95;
  double nu_max = 1.05;
  double nu0 = 1.0;  // rest-frame line center
  // Field scalings: A = c_A softplus(.), T = c_T softplus(.), V = c_V * (.).
  double amplitude_scale = 1.0;
  double temperature_scale = 1e-3;
  double velocity_scale = 0.02;
  double noise_floor = 2.0;          // sigma, additive noise level
  double noise_proportional = 0.05;  // sigma_p, signal-proportional noise
  double correlation_length = 0.3;   // tau of the smoothing kernel
  double shrinkage = 1e-3;           // diagonal nugget of the kernel
  double center_shift_std = 0.1;     // prior std of the shell center, per axis
  // Chord offsets from the domain center line. Empty means equally spaced
  // midpoints in (-0.95, 0.95); an explicit list may be in any order.
  std::vector<double> impact_parameters;
};

// Geometry plus precomputed chord weights and field correlation factors.
// Immutable after construction; evaluations are pure.
class SpectroscopyProblem {
 public:
  explicit SpectroscopyProblem(SpectroscopyConfig config = {});

  const SpectroscopyConfig& config() const { return config_; }
  SpectroscopyGeometry geometry() const { return config_.geometry; }
  // 3K + 2 latent coordinates for the shell (profiles plus center shift),
  // 3M for the slab (one value of each field per chord band).
  Eigen::Index dimension() const;
  int chord_count() const { return static_cast<int>(impacts_.size()); }
  int frequency_count() const { return static_cast<int>(frequencies_.size()); }
  const std::vector<double>& frequencies() const { return frequencies_; }
  const std::vector<double>& impact_parameters() const { return impacts_; }

  // Chord integration weights as a dense matrix over all grid cells, cell
  // index iy * grid_size + ix. Row m sums to the chord length through the
  // domain. Diagnostic use; evaluation works on the sparse form.
  Eigen::MatrixXd integration_matrix() const;

  // Line integrals of an arbitrary per-cell image (same cell indexing).
  Eigen::VectorXd integrate_image(const Eigen::VectorXd& cell_values) const;

  // Predicted line integrals: one row per frequency, one column per chord.
  Eigen::MatrixXd predict(const Eigen::VectorXd& x) const;

  // Physical field values on the chord-crossed cells, for mode classification
  // and figure data. which is 'a' (amplitude), 't', or 'v'.
  Eigen::VectorXd active_field(const Eigen::VectorXd& x, char which) const;

  struct LikelihoodEvaluation {
    double value = 0.0;
    Eigen::VectorXd gradient;
    Eigen::MatrixXd predicted;  // frequency-by-chord signals
  };
  // Gaussian log likelihood with signal-dependent variance, including the
  // per-channel normalization term, and its gradient in the latent vector.
  LikelihoodEvaluation log_likelihood(const Eigen::VectorXd& x,
                                      const Eigen::MatrixXd& measurements) const;

  // Predicted signals for a species with spatially constant fields, bypassing
  // the latent parameterization. Used to manufacture data the single-species
  // model cannot reproduce exactly.
  Eigen::MatrixXd constant_species_signal(double amplitude, double temperature,
                                          double velocity) const;

 private:
  struct Fields;  // per-evaluation forward state, defined in the .cpp

  Fields compute_fields(const Eigen::VectorXd& x) const;
  void backpropagate_fields(const Fields& fields, const Eigen::VectorXd& grad_a,
                            const Eigen::VectorXd& grad_t, const Eigen::VectorXd& grad_v,
                            Eigen::VectorXd* grad_x) const;
  Eigen::MatrixXd emissivity_signals(const Fields& fields) const;

  SpectroscopyConfig config_;
  std::vector<double> impacts_;
  std::vector<double> frequencies_;
  // Cells any chord crosses, in ascending global index order, with centers.
  std::vector<int> active_cells_;
  Eigen::VectorXd active_x_, active_y_;
  struct ChordWeight {
    int active;     // index into the active cell arrays
    double length;  // segment length inside that cell
  };
  std::vector<std::vector<ChordWeight>> chord_weights_;
  Eigen::MatrixXd correlation_factor_;  // lower Cholesky of the field kernel
  std::vector<double> knot_radii_;      // shell only
  double knot_spacing_ = 0.0;           // shell only
  std::vector<int> cell_band_;          // slab only: active cell -> chord band
};

// y = predict(x_true) + noise, noise variance sigma^2 + sigma_p^2 signal^2.
Eigen::MatrixXd simulate_measurements(const SpectroscopyProblem& problem,
                                      const Eigen::VectorXd& x_true, std::uint64_t seed);

// Two-species synthetic data: equal-amplitude peaks at velocities +-v0,
// softplus(0)-scale amplitude, line width tied to the peak separation so the
// peaks stay resolved. The one-species model can fit either peak, giving the
// sign-symmetric mode structure studied in tests.
Eigen::MatrixXd two_peak_measurements(const SpectroscopyProblem& problem,
                                      double peak_velocity, std::uint64_t seed);

// CSV with one row per (frequency, chord) channel.
void write_measurements_csv(const Eigen::MatrixXd& measurements, std::ostream& os);
Eigen::MatrixXd read_measurements_csv(std::istream& is);

// Posterior over the latent vector: standard normal prior times the
// spectroscopic likelihood for a fixed measurement set.
class SpectroscopyTarget : public SplitTarget {
 public:
  SpectroscopyTarget(std::shared_ptr<const SpectroscopyProblem> problem,
                     Eigen::MatrixXd measurements);

  Eigen::Index dimension() const override { return problem_->dimension(); }
  LogDensityValue eval_prior(const Eigen::VectorXd& x) const override;
  LogDensityValue eval_likelihood(const Eigen::VectorXd& x) const override;
  Eigen::VectorXd sample_prior(CounterRng& rng) const override;

  const SpectroscopyProblem& problem() const { return *problem_; }
  const Eigen::MatrixXd& measurements() const { return measurements_; }

 private:
  std::shared_ptr<const SpectroscopyProblem> problem_;
  Eigen::MatrixXd measurements_;
};

// Sign of the emission-weighted mean velocity, the label separating the
// Doppler modes of the two-peak scenario. Zero only if emission vanishes.
int velocity_mode_sign(const SpectroscopyProblem& problem, const Eigen::VectorXd& x);

}  // namespace ips
