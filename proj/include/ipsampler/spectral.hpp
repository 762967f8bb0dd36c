#pragma once

// Condition-number machinery for covariance factors.
//
// A sampler working on N(m, L L^T) cares about the singular values of L in a
// specific way: the step size is capped by the smallest scale while the
// distance to cover is set by the largest, and the cost blend over directions
// enters through a Schatten 4-norm of L^{-1}. kappa(L) = ||L||_2 ||L^{-1}||_S4
// is the resulting cost proxy. Its floor over all N x N factors is N^{1/4},
// attained exactly when all singular values are equal.

#include <vector>

#include <Eigen/Core>

#include "ipsampler/errors.hpp"
#include "ipsampler/rng.hpp"

namespace ips {

// Draws-by-dimensions storage convention: row s is the s-th draw.
using SampleMatrix = Eigen::MatrixXd;

// A square factor plus its lazily computed singular values (descending).
// Singular values come from the eigendecomposition of A^T A, which is
// deterministic across runs, rather than from an SVD.
class SpectralFactor {
 public:
  explicit SpectralFactor(Eigen::MatrixXd L);

  const Eigen::MatrixXd& matrix() const { return L_; }
  Eigen::Index dim() const { return L_.rows(); }

  const Eigen::VectorXd& singular_values() const;
  double spectral_norm() const { return singular_values()[0]; }
  double smallest_singular_value() const {
    return singular_values()[singular_values().size() - 1];
  }

  bool lower_triangular() const { return lower_triangular_; }

  // L^{-1} b and L b without forming inverses; the triangular path is exact
  // for Cholesky factors.
  Eigen::VectorXd solve(const Eigen::VectorXd& b) const;
  Eigen::MatrixXd solve_matrix(const Eigen::MatrixXd& B) const;
  Eigen::VectorXd apply(const Eigen::VectorXd& v) const { return L_ * v; }

 private:
  Eigen::MatrixXd L_;
  bool lower_triangular_;
  mutable Eigen::VectorXd singular_values_;  // empty until first use
};

// Schatten k-norm (sum of k-th powers of singular values, k-th root), k >= 1.
double schatten_norm(const Eigen::MatrixXd& A, double k);

// kappa(L) = ||L||_2 ||L^{-1}||_S4 = (sum_n (sigma_1 / sigma_n)^4)^{1/4}.
double kappa(const SpectralFactor& L);
double kappa(const Eigen::MatrixXd& L);

struct CholeskyOptions {
  // Jitter starts at initial_scale * trace(C)/N and grows geometrically.
  double initial_scale = 1e-12;
  double growth = 10.0;
  int max_escalations = 8;
};

struct CholeskyResult {
  SpectralFactor factor;
  double jitter = 0.0;   // total diagonal boost that was applied
  int escalations = 0;
};

// Lower Cholesky factor of a symmetric positive (semi)definite matrix, with an
// escalating jitter fallback for semidefinite inputs. Throws
// NotPositiveDefiniteError (with the most negative eigenvalue) once the jitter
// budget is exhausted.
CholeskyResult cholesky_factor(const Eigen::MatrixXd& C, const CholeskyOptions& opts = {});

// Cholesky factor of the sample covariance (divisor S-1) of draws (S x N).
// Requires S > N and full column rank of the centered draws; degenerate inputs
// raise RankDeficiencyError.
SpectralFactor sample_covariance_factor(const SampleMatrix& draws);

// Diagonal factor of per-dimension standard deviations (divisor S-1). A
// dimension with zero variance raises DegenerateDimensionError.
SpectralFactor diagonal_stddev_factor(const SampleMatrix& draws);

// Large-N limit of kappa after preconditioning with a sample covariance factor
// built from S = omega N draws:
//   N^{1/4} (1 + 1/omega)^{1/4} / (1 - omega^{-1/2}),  omega > 1.
// omega = +inf recovers the ideal N^{1/4}.
double inverse_wishart_kappa_asymptote(int N, double omega);

// Empirical counterpart: each trial draws S samples from N(0, L L^T), builds
// the sample covariance factor Lhat, and records kappa(Lhat^{-1} L). The
// distribution does not depend on the true factor, which the tests exploit.
std::vector<double> sample_kappa_after_preconditioning(
    int N, int S, int trials, CounterRng& rng,
    const Eigen::MatrixXd* true_factor = nullptr);

// Largest eigenvalue of a symmetric PSD matrix by power iteration
// (deterministic start vector, relative tolerance, iteration cap).
double largest_eigenvalue_power_iteration(const Eigen::MatrixXd& sym,
                                          double tol = 1e-6, int max_iters = 500);

// Covariance pooled across chains with each chain's own mean removed, divisor
// sum_k (S_k - 1). Used when chains may disagree about the mean but the shape
// is what matters.
Eigen::MatrixXd pooled_covariance(const std::vector<SampleMatrix>& per_chain_draws);

}  // namespace ips
