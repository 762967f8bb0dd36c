#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace ips {

// One verified property: how many randomized instances ran, how many violated
// the bound, and the headline statistic against its threshold. For
// probabilistic bounds a violation budget is part of the claim itself;
// deterministic inequalities allow none.
struct PropertyResult {
  std::string name;
  int instances = 0;
  int violations = 0;
  double allowed_violation_rate = 0.0;
  double statistic = 0.0;
  double threshold = 0.0;
  bool pass = false;
};

// Randomized-instance checks of the diagonal preconditioning bounds: the
// Schatten scaling inequality, the spectral bound for row-normalized factors
// with sparse Gram matrices, near-optimality of the standard-deviation
// diagonal, and the dominant-diagonal condition bound. All inequalities are
// deterministic; instances vary dimension up to 16 and conditioning.
std::vector<PropertyResult> check_preconditioning_bounds(int instances, std::uint64_t seed);

// Tail bounds behind the sample-standard-deviation guarantees: concentration
// of the biased variance estimate around 1, and the resulting tolerance on
// the condition number when the diagonal is estimated from samples.
std::vector<PropertyResult> check_variance_tail_bounds(int instances, std::uint64_t seed);

// Finite-difference validation of every analytic gradient in the model zoo;
// `points` prior draws per model.
std::vector<PropertyResult> check_gradient_suite(int points, std::uint64_t seed);

// Replica-communication identities on conjugate Gaussian targets: the swap
// rate as twice an ordering probability, the potential-variance identity
// Var[U] = -T^2 dE[U]/dT, and the even-odd vs random-parity round trip gap.
std::vector<PropertyResult> check_swap_suite(std::uint64_t seed);

// Behavior of the sample-quality estimators: effective size approaching the
// total for independent draws, the estimator cap, and monotone growth of the
// scale-reduction statistic with chain separation.
std::vector<PropertyResult> check_ess_suite(std::uint64_t seed);

// Named bundle used by the command line: lemmas, gradients, swaps, or ess.
// Unknown names raise ConfigError listing the valid suites.
std::vector<PropertyResult> run_check_suite(const std::string& suite, int instances,
                                            std::uint64_t seed);

bool all_pass(const std::vector<PropertyResult>& results);

// "# schema: check_results v1" with one row per property.
void write_check_csv(const std::string& suite, const std::vector<PropertyResult>& results,
                     std::ostream& os);

}  // namespace ips
