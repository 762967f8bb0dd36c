#pragma once

// Centered finite difference validation of analytic gradients. Used both by
// the test suites and by the `check gradients` command.

#include <algorithm>
#include <cmath>
#include <vector>

#include <Eigen/Core>

#include "ipsampler/target.hpp"

namespace ips {

struct GradientCheckResult {
  int points = 0;
  double max_rel_error = 0.0;
  int worst_point = -1;
  bool pass = false;
};

// Per-coordinate step step * (1 + |x_i|); error is the vector norm of
// (analytic - finite difference) relative to the analytic norm.
inline GradientCheckResult check_gradient(const TargetDensity& target,
                                          const std::vector<Eigen::VectorXd>& points,
                                          double step = 1e-5, double tol = 1e-5) {
  GradientCheckResult res;
  res.points = static_cast<int>(points.size());
  for (std::size_t p = 0; p < points.size(); ++p) {
    const Eigen::VectorXd& x = points[p];
    Eigen::VectorXd g = target.gradient(x);
    Eigen::VectorXd fd(x.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      double h = step * (1.0 + std::abs(x[i]));
      Eigen::VectorXd xp = x, xm = x;
      xp[i] += h;
      xm[i] -= h;
      fd[i] = (target.log_density(xp) - target.log_density(xm)) / (2.0 * h);
    }
    double denom = std::max(g.norm(), 1e-10);
    double rel = (g - fd).norm() / denom;
    if (rel > res.max_rel_error) {
      res.max_rel_error = rel;
      res.worst_point = static_cast<int>(p);
    }
  }
  res.pass = res.max_rel_error < tol;
  return res;
}

}  // namespace ips
