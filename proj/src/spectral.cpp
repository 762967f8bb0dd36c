#include "ipsampler/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/QR>

namespace ips {

namespace {

bool is_lower_triangular(const Eigen::MatrixXd& L) {
  for (Eigen::Index j = 1; j < L.cols(); ++j)
    for (Eigen::Index i = 0; i < j; ++i)
      if (L(i, j) != 0.0) return false;
  return true;
}

void require_square_finite(const Eigen::MatrixXd& A, const char* who) {
  if (A.rows() == 0 || A.rows() != A.cols()) {
    std::ostringstream os;
    os << who << ": expected a nonempty square matrix, got " << A.rows() << "x" << A.cols();
    throw InvalidArgumentError(os.str());
  }
  if (!A.allFinite()) {
    throw InvalidArgumentError(std::string(who) + ": matrix has non-finite entries");
  }
}

// Singular values of A via the eigendecomposition of A^T A, descending.
Eigen::VectorXd singular_values_of(const Eigen::MatrixXd& A) {
  Eigen::MatrixXd gram = A.transpose() * A;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram);
  if (es.info() != Eigen::Success) {
    throw Error("singular_values: eigendecomposition of A^T A failed");
  }
  Eigen::VectorXd ev = es.eigenvalues();  // ascending
  Eigen::VectorXd sv(ev.size());
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    double l = ev[ev.size() - 1 - i];
    sv[i] = l > 0.0 ? std::sqrt(l) : 0.0;
  }
  return sv;
}

}  // namespace

SpectralFactor::SpectralFactor(Eigen::MatrixXd L) : L_(std::move(L)) {
  require_square_finite(L_, "SpectralFactor");
  lower_triangular_ = is_lower_triangular(L_);
}

const Eigen::VectorXd& SpectralFactor::singular_values() const {
  if (singular_values_.size() == 0) singular_values_ = singular_values_of(L_);
  return singular_values_;
}

Eigen::VectorXd SpectralFactor::solve(const Eigen::VectorXd& b) const {
  if (lower_triangular_) return L_.triangularView<Eigen::Lower>().solve(b);
  return L_.partialPivLu().solve(b);
}

Eigen::MatrixXd SpectralFactor::solve_matrix(const Eigen::MatrixXd& B) const {
  if (lower_triangular_) return L_.triangularView<Eigen::Lower>().solve(B);
  return L_.partialPivLu().solve(B);
}

double schatten_norm(const Eigen::MatrixXd& A, double k) {
  require_square_finite(A, "schatten_norm");
  if (!(k >= 1.0)) throw InvalidArgumentError("schatten_norm: k must be >= 1");
  Eigen::VectorXd sv = singular_values_of(A);
  double smax = sv[0];
  if (smax == 0.0) return 0.0;
  // Factor out the largest value so the powers stay in [0, 1].
  double acc = 0.0;
  for (Eigen::Index i = 0; i < sv.size(); ++i) acc += std::pow(sv[i] / smax, k);
  return smax * std::pow(acc, 1.0 / k);
}

double kappa(const SpectralFactor& L) {
  const Eigen::VectorXd& sv = L.singular_values();
  double smax = sv[0];
  double smin = sv[sv.size() - 1];
  if (smax <= 0.0 || smin <= smax * 1e-14) {
    throw SingularMatrixError("kappa: factor is numerically singular");
  }
  // kappa = sigma_max * (sum sigma_n^{-4})^{1/4}; pull sigma_min out of the
  // sum so every term is <= 1.
  double acc = 0.0;
  for (Eigen::Index i = 0; i < sv.size(); ++i) {
    double t = smin / sv[i];
    acc += t * t * t * t;
  }
  return (smax / smin) * std::pow(acc, 0.25);
}

double kappa(const Eigen::MatrixXd& L) { return kappa(SpectralFactor(L)); }

CholeskyResult cholesky_factor(const Eigen::MatrixXd& C, const CholeskyOptions& opts) {
  require_square_finite(C, "cholesky_factor");
  double asym = (C - C.transpose()).cwiseAbs().maxCoeff();
  double scale = C.cwiseAbs().maxCoeff();
  if (asym > 1e-8 * std::max(scale, 1.0)) {
    throw InvalidArgumentError("cholesky_factor: matrix is not symmetric");
  }
  Eigen::MatrixXd S = 0.5 * (C + C.transpose());
  const Eigen::Index n = S.rows();

  auto most_negative_eigenvalue = [&]() {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(S);
    return es.eigenvalues().minCoeff();
  };

  double trace = S.trace();
  if (!(trace > 0.0)) {
    std::ostringstream os;
    os << "cholesky_factor: matrix is not positive definite (trace = " << trace << ")";
    throw NotPositiveDefiniteError(os.str(), most_negative_eigenvalue());
  }

  double base_jitter = opts.initial_scale * trace / static_cast<double>(n);
  double jitter = 0.0;
  for (int attempt = 0; attempt <= opts.max_escalations + 1; ++attempt) {
    Eigen::MatrixXd trial = S;
    if (jitter > 0.0) trial.diagonal().array() += jitter;
    Eigen::LLT<Eigen::MatrixXd> llt(trial);
    if (llt.info() == Eigen::Success) {
      CholeskyResult res{SpectralFactor(llt.matrixL()), jitter, std::max(0, attempt - 1)};
      return res;
    }
    if (attempt == 0) {
      jitter = base_jitter;
    } else {
      jitter *= opts.growth;
    }
  }
  std::ostringstream os;
  double mne = most_negative_eigenvalue();
  os << "cholesky_factor: not positive definite after jitter up to "
     << base_jitter * std::pow(opts.growth, opts.max_escalations)
     << " (most negative eigenvalue " << mne << ")";
  throw NotPositiveDefiniteError(os.str(), mne);
}

namespace {

SampleMatrix centered(const SampleMatrix& draws) {
  Eigen::RowVectorXd mean = draws.colwise().mean();
  return draws.rowwise() - mean;
}

}  // namespace

SpectralFactor sample_covariance_factor(const SampleMatrix& draws) {
  const Eigen::Index S = draws.rows();
  const Eigen::Index N = draws.cols();
  if (S <= N) {
    std::ostringstream os;
    os << "sample_covariance_factor: need more draws than dimensions, got S = " << S
       << " with N = " << N;
    throw RankDeficiencyError(os.str());
  }
  if (!draws.allFinite()) {
    throw InvalidArgumentError("sample_covariance_factor: draws have non-finite entries");
  }
  SampleMatrix X = centered(draws);
  // A jittered Cholesky would silently repair collinear draws, so rank is
  // checked on the centered draws first.
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
  if (qr.rank() < N) {
    std::ostringstream os;
    os << "sample_covariance_factor: centered draws have rank " << qr.rank()
       << " < N = " << N << " (sample covariance is rank deficient)";
    throw RankDeficiencyError(os.str());
  }
  Eigen::MatrixXd C = (X.transpose() * X) / static_cast<double>(S - 1);
  return cholesky_factor(C).factor;
}

SpectralFactor diagonal_stddev_factor(const SampleMatrix& draws) {
  const Eigen::Index S = draws.rows();
  const Eigen::Index N = draws.cols();
  if (S < 2) throw RankDeficiencyError("diagonal_stddev_factor: need at least 2 draws");
  SampleMatrix X = centered(draws);
  Eigen::VectorXd sd(N);
  for (Eigen::Index j = 0; j < N; ++j) {
    double var = X.col(j).squaredNorm() / static_cast<double>(S - 1);
    double mean_scale = std::abs(draws.col(j).mean()) + 1.0;
    sd[j] = std::sqrt(var);
    if (sd[j] <= 1e-12 * mean_scale) {
      std::ostringstream os;
      os << "diagonal_stddev_factor: dimension " << j << " has zero variance";
      throw DegenerateDimensionError(os.str(), static_cast<int>(j));
    }
  }
  Eigen::MatrixXd D = sd.asDiagonal();
  return SpectralFactor(D);
}

double inverse_wishart_kappa_asymptote(int N, double omega) {
  if (N < 1) throw InvalidArgumentError("inverse_wishart_kappa_asymptote: N must be >= 1");
  if (!(omega > 1.0)) {
    throw InvalidArgumentError(
        "inverse_wishart_kappa_asymptote: omega = S/N must exceed 1");
  }
  double n4 = std::pow(static_cast<double>(N), 0.25);
  if (std::isinf(omega)) return n4;
  return n4 * std::pow(1.0 + 1.0 / omega, 0.25) / (1.0 - 1.0 / std::sqrt(omega));
}

std::vector<double> sample_kappa_after_preconditioning(int N, int S, int trials,
                                                       CounterRng& rng,
                                                       const Eigen::MatrixXd* true_factor) {
  if (trials < 1) throw InvalidArgumentError("sample_kappa_after_preconditioning: trials >= 1");
  if (S <= N + 1) {
    throw InvalidArgumentError(
        "sample_kappa_after_preconditioning: need S > N + 1 draws per trial");
  }
  Eigen::MatrixXd L = true_factor ? *true_factor
                                  : Eigen::MatrixXd(Eigen::MatrixXd::Identity(N, N));
  if (L.rows() != N || L.cols() != N) {
    throw InvalidArgumentError("sample_kappa_after_preconditioning: true_factor must be N x N");
  }
  std::vector<double> out;
  out.reserve(trials);
  for (int t = 0; t < trials; ++t) {
    SampleMatrix X(S, N);
    for (int s = 0; s < S; ++s) X.row(s) = (L * rng.normal_vector(N)).transpose();
    SpectralFactor Lhat = sample_covariance_factor(X);
    Eigen::MatrixXd M = Lhat.solve_matrix(L);
    out.push_back(kappa(M));
  }
  return out;
}

double largest_eigenvalue_power_iteration(const Eigen::MatrixXd& sym, double tol,
                                          int max_iters) {
  require_square_finite(sym, "largest_eigenvalue_power_iteration");
  const Eigen::Index n = sym.rows();
  Eigen::VectorXd v = Eigen::VectorXd::Ones(n) / std::sqrt(static_cast<double>(n));
  double lambda = 0.0;
  for (int it = 0; it < max_iters; ++it) {
    Eigen::VectorXd w = sym.selfadjointView<Eigen::Lower>() * v;
    double norm = w.norm();
    if (norm == 0.0) return 0.0;
    v = w / norm;
    double next = v.dot(sym.selfadjointView<Eigen::Lower>() * v);
    if (it > 0 && std::abs(next - lambda) <= tol * std::abs(next)) return next;
    lambda = next;
  }
  return lambda;
}

Eigen::MatrixXd pooled_covariance(const std::vector<SampleMatrix>& per_chain_draws) {
  if (per_chain_draws.empty()) {
    throw InvalidArgumentError("pooled_covariance: no chains");
  }
  const Eigen::Index N = per_chain_draws.front().cols();
  Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(N, N);
  double dof = 0.0;
  for (const SampleMatrix& draws : per_chain_draws) {
    if (draws.cols() != N) throw InvalidArgumentError("pooled_covariance: dimension mismatch");
    if (draws.rows() < 2) continue;
    SampleMatrix X = centered(draws);
    acc.noalias() += X.transpose() * X;
    dof += static_cast<double>(draws.rows() - 1);
  }
  if (dof <= 0.0) throw RankDeficiencyError("pooled_covariance: fewer than 2 draws per chain");
  return acc / dof;
}

}  // namespace ips
