#pragma once

// Exact sampling from arbitrary 1-D densities by tabulated inverse CDF.
// Good enough to serve as an oracle: with a few thousand grid cells the
// trapezoid CDF is accurate to O(h^2) and sampling is a binary search.

#include <cmath>
#include <functional>
#include <vector>

#include "ipsampler/errors.hpp"
#include "ipsampler/rng.hpp"

namespace ips {

class GridInverseCdf {
 public:
  GridInverseCdf(const std::function<double(double)>& log_unnormalized, double lo,
                 double hi, int n = 4097)
      : lo_(lo), hi_(hi) {
    if (!(hi > lo) || n < 16) {
      throw InvalidArgumentError("GridInverseCdf: bad range or grid size");
    }
    x_.resize(n);
    double h = (hi - lo) / (n - 1);
    std::vector<double> logf(n);
    double mx = -1e300;
    for (int i = 0; i < n; ++i) {
      x_[i] = lo + h * i;
      logf[i] = log_unnormalized(x_[i]);
      if (logf[i] > mx) mx = logf[i];
    }
    cdf_.assign(n, 0.0);
    for (int i = 1; i < n; ++i) {
      double fa = std::exp(logf[i - 1] - mx);
      double fb = std::exp(logf[i] - mx);
      cdf_[i] = cdf_[i - 1] + 0.5 * (fa + fb) * h;
    }
    double total = cdf_.back();
    if (!(total > 0.0) || !std::isfinite(total)) {
      throw InvalidArgumentError("GridInverseCdf: density mass is not positive");
    }
    for (double& c : cdf_) c /= total;
  }

  double quantile(double u) const {
    if (u <= 0.0) return x_.front();
    if (u >= 1.0) return x_.back();
    // Binary search for the cell, then linear interpolation inside it.
    std::size_t lo = 0, hi = cdf_.size() - 1;
    while (hi - lo > 1) {
      std::size_t mid = (lo + hi) / 2;
      if (cdf_[mid] < u) {
        lo = mid;
      } else {
        hi = mid;
      }
    }
    double span = cdf_[hi] - cdf_[lo];
    double t = span > 0.0 ? (u - cdf_[lo]) / span : 0.5;
    return x_[lo] + t * (x_[hi] - x_[lo]);
  }

  double sample(CounterRng& rng) const { return quantile(rng.uniform()); }

 private:
  double lo_, hi_;
  std::vector<double> x_;
  std::vector<double> cdf_;
};

}  // namespace ips
