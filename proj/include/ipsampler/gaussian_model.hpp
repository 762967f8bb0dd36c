#pragma once

// Linear Gaussian inverse problem: x ~ N(0, C_pr), y = A x + N(0, sigma^2 I).
// Everything about it is computable in closed form, which makes it the
// calibration target for the samplers: the posterior is
//   C = (C_pr^{-1} + sigma^{-2} A^T A)^{-1},  mean = sigma^{-2} C A^T y.

#include <cstdint>
#include <memory>

#include <Eigen/Core>

#include "ipsampler/spectral.hpp"
#include "ipsampler/target.hpp"
#include "ipsampler/transforms.hpp"

namespace ips {

// Squared-exponential correlation on 1-D locations with a diagonal nugget:
// K_ij = exp(-(r_i - r_j)^2 / (2 tau^2)) + delta 1{i=j}. The nugget keeps the
// matrix comfortably positive definite for long correlation lengths.
Eigen::MatrixXd squared_exponential_kernel(const Eigen::VectorXd& points, double tau,
                                           double delta);

struct GaussianPosterior {
  Eigen::VectorXd mean;
  Eigen::MatrixXd covariance;
  SpectralFactor factor;

  Eigen::VectorXd sample(CounterRng& rng) const {
    return mean + factor.matrix() * rng.normal_vector(mean.size());
  }
};

class GaussianLinearProblem : public SplitTarget,
                              public std::enable_shared_from_this<GaussianLinearProblem> {
 public:
  GaussianLinearProblem(Eigen::MatrixXd A, double sigma, SpectralFactor prior_factor,
                        Eigen::VectorXd y);

  // Deterministic demo instance: N grid points on [0, 1], a smoothing prior
  // (squared-exponential kernel, correlation tau, nugget delta), and M < N
  // local averaging rows (normalized Gaussian bumps). Data are synthesized
  // from a prior draw plus noise on a stream derived from data_seed.
  static std::shared_ptr<GaussianLinearProblem> smoothing_demo(int M, int N, double tau,
                                                               double delta, double sigma,
                                                               std::uint64_t data_seed);

  Eigen::Index dimension() const override { return A_.cols(); }
  LogDensityValue eval_prior(const Eigen::VectorXd& x) const override;
  LogDensityValue eval_likelihood(const Eigen::VectorXd& x) const override;
  Eigen::VectorXd sample_prior(CounterRng& rng) const override;

  const Eigen::MatrixXd& forward_matrix() const { return A_; }
  double noise_sigma() const { return sigma_; }
  const SpectralFactor& prior_factor() const { return prior_factor_; }
  const Eigen::VectorXd& data() const { return y_; }

  GaussianPosterior posterior() const;

  // Covariance of the whitened coordinates z = L_pr^{-1} x:
  // (I + sigma^{-2} (A L_pr)^T (A L_pr))^{-1}.
  Eigen::MatrixXd reparameterized_covariance() const;

  // The posterior density expressed in whitened coordinates via the prior
  // factor, as a sampleable target.
  std::shared_ptr<PushforwardTarget> reparameterized_by_prior() const;

 private:
  Eigen::MatrixXd A_;
  double sigma_;
  SpectralFactor prior_factor_;
  Eigen::VectorXd y_;
  Eigen::VectorXd At_y_scaled_;  // sigma^{-2} A^T y
};

// Conjugate pair used for tempering identities: prior N(0, I), likelihood
// proportional to N(mu, Gamma) as a function of x. Tempering either the whole
// posterior or only the likelihood keeps the law Gaussian:
//   posterior mode:  C_T = T (I + Gamma^{-1})^{-1},      mean independent of T,
//   likelihood mode: C_T = (I + T^{-1} Gamma^{-1})^{-1}, mean -> 0 as T -> inf.
class ConjugateGaussianModel : public SplitTarget {
 public:
  ConjugateGaussianModel(Eigen::VectorXd mu, Eigen::MatrixXd Gamma);

  Eigen::Index dimension() const override { return mu_.size(); }
  LogDensityValue eval_prior(const Eigen::VectorXd& x) const override;
  LogDensityValue eval_likelihood(const Eigen::VectorXd& x) const override;
  Eigen::VectorXd sample_prior(CounterRng& rng) const override;

  struct Moments {
    Eigen::VectorXd mean;
    Eigen::MatrixXd covariance;
  };
  Moments tempered_moments(double temperature, TemperingMode mode) const;
  Eigen::VectorXd sample_tempered(double temperature, TemperingMode mode,
                                  CounterRng& rng) const;

  // First two moments of the potential under an arbitrary Gaussian law. The
  // potential is the log likelihood (likelihood mode) or the unnormalized log
  // posterior (posterior mode); additive constants are dropped consistently.
  double expected_potential(const Moments& law, TemperingMode mode) const;
  double variance_potential(const Moments& law, TemperingMode mode) const;

  const Eigen::VectorXd& mu() const { return mu_; }
  const Eigen::MatrixXd& gamma() const { return Gamma_; }

 private:
  Eigen::VectorXd mu_;
  Eigen::MatrixXd Gamma_;
  Eigen::MatrixXd Gamma_inv_;
  Eigen::VectorXd posterior_mean_;
};

}  // namespace ips
