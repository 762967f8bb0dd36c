#pragma once

// Change of variables for densities. Sampling z from
//   g(z) = |det DF(z)| p(F(z))
// and mapping through F gives draws from p, so a well chosen F (for instance
// a covariance factor) turns an ill conditioned target into a round one.

#include <functional>
#include <memory>
#include <sstream>
#include <utility>

#include <Eigen/Core>
#include <Eigen/LU>

#include "ipsampler/errors.hpp"
#include "ipsampler/target.hpp"

namespace ips {

class Diffeomorphism {
 public:
  virtual ~Diffeomorphism() = default;
  virtual Eigen::Index dimension() const = 0;
  virtual Eigen::VectorXd forward(const Eigen::VectorXd& z) const = 0;
  // DF(z)^T v, the pullback of a gradient at x = F(z).
  virtual Eigen::VectorXd pullback(const Eigen::VectorXd& z,
                                   const Eigen::VectorXd& v) const = 0;
  virtual double log_abs_det_jacobian(const Eigen::VectorXd& z) const = 0;
  virtual Eigen::VectorXd grad_log_abs_det_jacobian(const Eigen::VectorXd& z) const = 0;
};

// x = A z. The determinant is checked once at construction.
class LinearMap : public Diffeomorphism {
 public:
  explicit LinearMap(Eigen::MatrixXd A) : A_(std::move(A)) {
    if (A_.rows() != A_.cols() || A_.rows() == 0) {
      throw InvalidArgumentError("LinearMap: matrix must be square and nonempty");
    }
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(A_);
    double log_det = 0.0;
    Eigen::MatrixXd U = lu.matrixLU();
    for (Eigen::Index i = 0; i < U.rows(); ++i) {
      double d = std::abs(U(i, i));
      if (d <= 0.0 || !std::isfinite(d)) {
        throw SingularMatrixError("LinearMap: Jacobian is singular");
      }
      log_det += std::log(d);
    }
    double scale = A_.cwiseAbs().maxCoeff();
    if (log_det < std::log(1e-300) + A_.rows() * std::log(std::max(scale, 1.0))) {
      throw SingularMatrixError("LinearMap: Jacobian is numerically singular");
    }
    log_abs_det_ = log_det;
  }

  Eigen::Index dimension() const override { return A_.rows(); }
  Eigen::VectorXd forward(const Eigen::VectorXd& z) const override { return A_ * z; }
  Eigen::VectorXd pullback(const Eigen::VectorXd&, const Eigen::VectorXd& v) const override {
    return A_.transpose() * v;
  }
  double log_abs_det_jacobian(const Eigen::VectorXd&) const override { return log_abs_det_; }
  Eigen::VectorXd grad_log_abs_det_jacobian(const Eigen::VectorXd& z) const override {
    return Eigen::VectorXd::Zero(z.size());
  }
  const Eigen::MatrixXd& matrix() const { return A_; }

 private:
  Eigen::MatrixXd A_;
  double log_abs_det_;
};

// x_i = f(z_i) with user supplied first and second derivatives. The Jacobian
// is diagonal; a vanishing f' at the evaluation point is an error there.
class CoordinatewiseMap : public Diffeomorphism {
 public:
  using Scalar = std::function<double(double)>;
  CoordinatewiseMap(Eigen::Index n, Scalar f, Scalar df, Scalar d2f)
      : n_(n), f_(std::move(f)), df_(std::move(df)), d2f_(std::move(d2f)) {
    if (n_ < 1) throw InvalidArgumentError("CoordinatewiseMap: dimension must be >= 1");
  }

  Eigen::Index dimension() const override { return n_; }

  Eigen::VectorXd forward(const Eigen::VectorXd& z) const override {
    Eigen::VectorXd x(z.size());
    for (Eigen::Index i = 0; i < z.size(); ++i) x[i] = f_(z[i]);
    return x;
  }

  Eigen::VectorXd pullback(const Eigen::VectorXd& z, const Eigen::VectorXd& v) const override {
    Eigen::VectorXd out(z.size());
    for (Eigen::Index i = 0; i < z.size(); ++i) out[i] = df_(z[i]) * v[i];
    return out;
  }

  double log_abs_det_jacobian(const Eigen::VectorXd& z) const override {
    double acc = 0.0;
    for (Eigen::Index i = 0; i < z.size(); ++i) {
      double d = df_(z[i]);
      if (d == 0.0 || !std::isfinite(d)) {
        std::ostringstream os;
        os << "CoordinatewiseMap: Jacobian vanishes at coordinate " << i;
        throw SingularMatrixError(os.str());
      }
      acc += std::log(std::abs(d));
    }
    return acc;
  }

  Eigen::VectorXd grad_log_abs_det_jacobian(const Eigen::VectorXd& z) const override {
    Eigen::VectorXd out(z.size());
    for (Eigen::Index i = 0; i < z.size(); ++i) {
      double d = df_(z[i]);
      if (d == 0.0) {
        std::ostringstream os;
        os << "CoordinatewiseMap: Jacobian vanishes at coordinate " << i;
        throw SingularMatrixError(os.str());
      }
      out[i] = d2f_(z[i]) / d;
    }
    return out;
  }

 private:
  Eigen::Index n_;
  Scalar f_, df_, d2f_;
};

// g(z) = |det DF(z)| p(F(z)) as a TargetDensity over z.
class PushforwardTarget : public TargetDensity {
 public:
  PushforwardTarget(std::shared_ptr<const TargetDensity> base,
                    std::shared_ptr<const Diffeomorphism> map)
      : base_(std::move(base)), map_(std::move(map)) {
    if (base_->dimension() != map_->dimension()) {
      throw InvalidArgumentError("PushforwardTarget: dimension mismatch");
    }
  }

  Eigen::Index dimension() const override { return base_->dimension(); }

  LogDensityValue eval(const Eigen::VectorXd& z) const override {
    require_dimension(z, "PushforwardTarget");
    Eigen::VectorXd x = map_->forward(z);
    LogDensityValue base = base_->eval(x);
    LogDensityValue out;
    out.value = base.value + map_->log_abs_det_jacobian(z);
    out.gradient = map_->pullback(z, base.gradient) + map_->grad_log_abs_det_jacobian(z);
    return out;
  }

  const Diffeomorphism& map() const { return *map_; }
  const TargetDensity& base() const { return *base_; }

 private:
  std::shared_ptr<const TargetDensity> base_;
  std::shared_ptr<const Diffeomorphism> map_;
};

}  // namespace ips
