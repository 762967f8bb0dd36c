#pragma once

// Small statistical helpers shared by the property-check suites and the tests:
// Kolmogorov-Smirnov distances and the asymptotic KS tail probability.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "ipsampler/errors.hpp"

namespace ips {

// P(K > lambda) for the Kolmogorov distribution.
inline double ks_tail_probability(double lambda) {
  if (lambda <= 0.0) return 1.0;
  double sum = 0.0;
  double sign = 1.0;
  for (int j = 1; j <= 100; ++j) {
    double term = std::exp(-2.0 * j * j * lambda * lambda);
    sum += sign * term;
    sign = -sign;
    if (term < 1e-16) break;
  }
  return std::max(0.0, std::min(1.0, 2.0 * sum));
}

// One-sample KS test against a CDF. Returns the p-value.
inline double ks_test_pvalue(std::vector<double> sample,
                             const std::function<double(double)>& cdf) {
  if (sample.size() < 5) throw InvalidArgumentError("ks_test_pvalue: sample too small");
  std::sort(sample.begin(), sample.end());
  double n = static_cast<double>(sample.size());
  double d = 0.0;
  for (std::size_t i = 0; i < sample.size(); ++i) {
    double f = cdf(sample[i]);
    d = std::max(d, std::abs(f - static_cast<double>(i) / n));
    d = std::max(d, std::abs(static_cast<double>(i + 1) / n - f));
  }
  double sqrt_n = std::sqrt(n);
  double lambda = (sqrt_n + 0.12 + 0.11 / sqrt_n) * d;
  return ks_tail_probability(lambda);
}

// Two-sample KS test. Returns the p-value.
inline double ks_two_sample_pvalue(std::vector<double> a, std::vector<double> b) {
  if (a.size() < 5 || b.size() < 5) {
    throw InvalidArgumentError("ks_two_sample_pvalue: samples too small");
  }
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  double na = static_cast<double>(a.size());
  double nb = static_cast<double>(b.size());
  double d = 0.0;
  std::size_t i = 0, j = 0;
  while (i < a.size() && j < b.size()) {
    if (a[i] <= b[j]) {
      ++i;
    } else {
      ++j;
    }
    double fa = static_cast<double>(i) / na;
    double fb = static_cast<double>(j) / nb;
    d = std::max(d, std::abs(fa - fb));
  }
  double ne = na * nb / (na + nb);
  double sqrt_ne = std::sqrt(ne);
  double lambda = (sqrt_ne + 0.12 + 0.11 / sqrt_ne) * d;
  return ks_tail_probability(lambda);
}

inline double sample_mean(const std::vector<double>& v) {
  double acc = 0.0;
  for (double x : v) acc += x;
  return acc / static_cast<double>(v.size());
}

inline double sample_variance(const std::vector<double>& v) {
  double m = sample_mean(v);
  double acc = 0.0;
  for (double x : v) acc += (x - m) * (x - m);
  return acc / static_cast<double>(v.size() - 1);
}

}  // namespace ips
