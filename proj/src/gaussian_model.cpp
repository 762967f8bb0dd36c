#include "ipsampler/gaussian_model.hpp"

#include <cmath>
#include <sstream>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

namespace ips {

Eigen::MatrixXd squared_exponential_kernel(const Eigen::VectorXd& points, double tau,
                                           double delta) {
  if (!(tau > 0.0) || !(delta > 0.0)) {
    throw InvalidArgumentError("squared_exponential_kernel: tau and delta must be > 0");
  }
  const Eigen::Index n = points.size();
  Eigen::MatrixXd K(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    K(i, i) = 1.0 + delta;
    for (Eigen::Index j = 0; j < i; ++j) {
      double d = points[i] - points[j];
      double v = std::exp(-d * d / (2.0 * tau * tau));
      K(i, j) = v;
      K(j, i) = v;
    }
  }
  return K;
}

GaussianLinearProblem::GaussianLinearProblem(Eigen::MatrixXd A, double sigma,
                                             SpectralFactor prior_factor,
                                             Eigen::VectorXd y)
    : A_(std::move(A)), sigma_(sigma), prior_factor_(std::move(prior_factor)),
      y_(std::move(y)) {
  if (!(sigma_ > 0.0)) throw InvalidArgumentError("GaussianLinearProblem: sigma must be > 0");
  if (prior_factor_.dim() != A_.cols()) {
    throw InvalidArgumentError("GaussianLinearProblem: prior factor and A disagree on N");
  }
  if (y_.size() != A_.rows()) {
    throw InvalidArgumentError("GaussianLinearProblem: data and A disagree on M");
  }
  At_y_scaled_ = A_.transpose() * y_ / (sigma_ * sigma_);
}

std::shared_ptr<GaussianLinearProblem> GaussianLinearProblem::smoothing_demo(
    int M, int N, double tau, double delta, double sigma, std::uint64_t data_seed) {
  if (M < 1 || N < 2 || M > N) {
    throw InvalidArgumentError("smoothing_demo: need 1 <= M <= N and N >= 2");
  }
  Eigen::VectorXd grid(N);
  for (int n = 0; n < N; ++n) grid[n] = static_cast<double>(n) / (N - 1);
  SpectralFactor L_pr = cholesky_factor(squared_exponential_kernel(grid, tau, delta)).factor;

  // Local averaging rows: Gaussian bumps, one per measurement. The bumps
  // cover only part of the domain (as a sensor looking at part of a body
  // would), so smooth directions supported elsewhere keep their full prior
  // variance while measured ones collapse to the noise floor. That contrast
  // is what makes the posterior badly conditioned.
  Eigen::MatrixXd A(M, N);
  const double coverage = 0.55;
  double width = coverage / M;
  for (int m = 0; m < M; ++m) {
    double center = (m + 0.5) / M * coverage;
    for (int n = 0; n < N; ++n) {
      double d = grid[n] - center;
      A(m, n) = std::exp(-d * d / (2.0 * width * width));
    }
    A.row(m) /= A.row(m).sum();
  }

  CounterRng rng(data_seed, {0x6761757373ULL});
  Eigen::VectorXd x_true = L_pr.matrix() * rng.normal_vector(N);
  Eigen::VectorXd y = A * x_true + sigma * rng.normal_vector(M);
  return std::make_shared<GaussianLinearProblem>(std::move(A), sigma, std::move(L_pr),
                                                 std::move(y));
}

LogDensityValue GaussianLinearProblem::eval_prior(const Eigen::VectorXd& x) const {
  require_dimension(x, "GaussianLinearProblem");
  // -x^T C_pr^{-1} x / 2 via two triangular solves with the prior factor.
  Eigen::VectorXd u = prior_factor_.solve(x);
  LogDensityValue out;
  out.value = -0.5 * u.squaredNorm();
  if (prior_factor_.lower_triangular()) {
    out.gradient = -prior_factor_.matrix().triangularView<Eigen::Lower>().transpose().solve(u);
  } else {
    out.gradient = -prior_factor_.matrix().transpose().partialPivLu().solve(u);
  }
  return out;
}

LogDensityValue GaussianLinearProblem::eval_likelihood(const Eigen::VectorXd& x) const {
  require_dimension(x, "GaussianLinearProblem");
  Eigen::VectorXd resid = A_ * x - y_;
  LogDensityValue out;
  double inv_var = 1.0 / (sigma_ * sigma_);
  out.value = -0.5 * inv_var * resid.squaredNorm();
  out.gradient = -inv_var * (A_.transpose() * resid);
  return out;
}

Eigen::VectorXd GaussianLinearProblem::sample_prior(CounterRng& rng) const {
  return prior_factor_.matrix() * rng.normal_vector(dimension());
}

GaussianPosterior GaussianLinearProblem::posterior() const {
  const Eigen::Index N = dimension();
  // Prior precision from the factor: solve L L^T P = I.
  Eigen::MatrixXd prior_prec =
      prior_factor_.matrix().transpose().fullPivLu().solve(
          prior_factor_.solve_matrix(Eigen::MatrixXd::Identity(N, N)));
  Eigen::MatrixXd H = prior_prec + A_.transpose() * A_ / (sigma_ * sigma_);
  H = 0.5 * (H + H.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(H);
  double emin = es.eigenvalues().minCoeff();
  double emax = es.eigenvalues().maxCoeff();
  if (!(emin > emax * 1e-14)) {
    std::ostringstream os;
    os << "gaussian posterior: normal equations are numerically singular "
       << "(eigenvalue range " << emin << " to " << emax << ")";
    throw SingularMatrixError(os.str());
  }
  Eigen::LLT<Eigen::MatrixXd> llt(H);
  Eigen::MatrixXd cov = llt.solve(Eigen::MatrixXd::Identity(N, N));
  cov = 0.5 * (cov + cov.transpose());
  Eigen::VectorXd mean = llt.solve(At_y_scaled_);
  SpectralFactor factor = cholesky_factor(cov).factor;
  return GaussianPosterior{std::move(mean), std::move(cov), std::move(factor)};
}

Eigen::MatrixXd GaussianLinearProblem::reparameterized_covariance() const {
  const Eigen::Index N = dimension();
  Eigen::MatrixXd B = A_ * prior_factor_.matrix();
  Eigen::MatrixXd H = Eigen::MatrixXd::Identity(N, N) + B.transpose() * B / (sigma_ * sigma_);
  Eigen::LLT<Eigen::MatrixXd> llt(H);
  Eigen::MatrixXd cov = llt.solve(Eigen::MatrixXd::Identity(N, N));
  return 0.5 * (cov + cov.transpose());
}

std::shared_ptr<PushforwardTarget> GaussianLinearProblem::reparameterized_by_prior() const {
  auto self = shared_from_this();
  auto map = std::make_shared<LinearMap>(prior_factor_.matrix());
  return std::make_shared<PushforwardTarget>(self, map);
}

ConjugateGaussianModel::ConjugateGaussianModel(Eigen::VectorXd mu, Eigen::MatrixXd Gamma)
    : mu_(std::move(mu)), Gamma_(std::move(Gamma)) {
  if (Gamma_.rows() != Gamma_.cols() || Gamma_.rows() != mu_.size()) {
    throw InvalidArgumentError("ConjugateGaussianModel: mu and Gamma sizes disagree");
  }
  const Eigen::Index N = mu_.size();
  Eigen::LLT<Eigen::MatrixXd> llt(0.5 * (Gamma_ + Gamma_.transpose()));
  if (llt.info() != Eigen::Success) {
    throw NotPositiveDefiniteError("ConjugateGaussianModel: Gamma must be SPD", 0.0);
  }
  Gamma_inv_ = llt.solve(Eigen::MatrixXd::Identity(N, N));
  Gamma_inv_ = 0.5 * (Gamma_inv_ + Gamma_inv_.transpose());
  Eigen::MatrixXd H = Eigen::MatrixXd::Identity(N, N) + Gamma_inv_;
  posterior_mean_ = H.llt().solve(Gamma_inv_ * mu_);
}

LogDensityValue ConjugateGaussianModel::eval_prior(const Eigen::VectorXd& x) const {
  require_dimension(x, "ConjugateGaussianModel");
  return {-0.5 * x.squaredNorm(), -x};
}

LogDensityValue ConjugateGaussianModel::eval_likelihood(const Eigen::VectorXd& x) const {
  require_dimension(x, "ConjugateGaussianModel");
  Eigen::VectorXd d = x - mu_;
  Eigen::VectorXd gd = Gamma_inv_ * d;
  return {-0.5 * d.dot(gd), -gd};
}

Eigen::VectorXd ConjugateGaussianModel::sample_prior(CounterRng& rng) const {
  return rng.normal_vector(mu_.size());
}

ConjugateGaussianModel::Moments ConjugateGaussianModel::tempered_moments(
    double temperature, TemperingMode mode) const {
  const Eigen::Index N = mu_.size();
  Eigen::MatrixXd I = Eigen::MatrixXd::Identity(N, N);
  if (mode == TemperingMode::kPosterior) {
    if (!(temperature > 0.0) || std::isinf(temperature)) {
      throw InvalidArgumentError(
          "tempered_moments: posterior tempering needs a finite temperature");
    }
    Eigen::MatrixXd C = (I + Gamma_inv_).llt().solve(I);
    return {posterior_mean_, temperature * C};
  }
  if (!(temperature > 0.0)) {
    throw InvalidArgumentError("tempered_moments: temperature must be positive");
  }
  if (std::isinf(temperature)) return {Eigen::VectorXd::Zero(N), I};
  Eigen::MatrixXd H = I + Gamma_inv_ / temperature;
  Eigen::LLT<Eigen::MatrixXd> llt(H);
  Eigen::MatrixXd C = llt.solve(I);
  Eigen::VectorXd mean = llt.solve(Gamma_inv_ * mu_ / temperature);
  return {std::move(mean), 0.5 * (C + C.transpose())};
}

Eigen::VectorXd ConjugateGaussianModel::sample_tempered(double temperature,
                                                        TemperingMode mode,
                                                        CounterRng& rng) const {
  Moments m = tempered_moments(temperature, mode);
  SpectralFactor L = cholesky_factor(m.covariance).factor;
  return m.mean + L.matrix() * rng.normal_vector(mu_.size());
}

namespace {

// For q(x) = -(x - c)^T H (x - c)/2 and X ~ N(m, C):
//   E[q] = -(tr(H C) + (m - c)^T H (m - c)) / 2
//   Var[q] = tr(H C H C)/2 + (m - c)^T H C H (m - c)
double quadratic_mean(const Eigen::MatrixXd& H, const Eigen::VectorXd& c,
                      const ConjugateGaussianModel::Moments& law) {
  Eigen::VectorXd d = law.mean - c;
  return -0.5 * ((H * law.covariance).trace() + d.dot(H * d));
}

double quadratic_variance(const Eigen::MatrixXd& H, const Eigen::VectorXd& c,
                          const ConjugateGaussianModel::Moments& law) {
  Eigen::MatrixXd HC = H * law.covariance;
  Eigen::VectorXd d = law.mean - c;
  return 0.5 * (HC * HC).trace() + d.dot(H * law.covariance * H * d);
}

}  // namespace

double ConjugateGaussianModel::expected_potential(const Moments& law,
                                                  TemperingMode mode) const {
  const Eigen::Index N = mu_.size();
  if (mode == TemperingMode::kLikelihood) return quadratic_mean(Gamma_inv_, mu_, law);
  Eigen::MatrixXd H = Eigen::MatrixXd::Identity(N, N) + Gamma_inv_;
  return quadratic_mean(H, posterior_mean_, law);
}

double ConjugateGaussianModel::variance_potential(const Moments& law,
                                                  TemperingMode mode) const {
  const Eigen::Index N = mu_.size();
  if (mode == TemperingMode::kLikelihood) return quadratic_variance(Gamma_inv_, mu_, law);
  Eigen::MatrixXd H = Eigen::MatrixXd::Identity(N, N) + Gamma_inv_;
  return quadratic_variance(H, posterior_mean_, law);
}

}  // namespace ips
