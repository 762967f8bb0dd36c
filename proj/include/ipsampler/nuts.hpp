#pragma once

#include <string>

#include <Eigen/Core>

#include "ipsampler/hmc.hpp"
#include "ipsampler/samples.hpp"
#include "ipsampler/target.hpp"

namespace ips {

struct NutsOptions {
  int max_doublings = 8;
  double divergence_threshold = 1000.0;
};

struct NutsDrawStats {
  int depth = 0;  // completed doublings for this draw
  int gradient_evals = 0;
  bool divergent = false;
  bool stopped_at_depth_zero = false;  // very first doubling was already invalid
};

struct NutsRunStats {
  long long draws = 0;
  long long divergences = 0;
  long long depth_zero_stops = 0;
  long long gradient_evals = 0;
  double mean_depth = 0.0;
  std::string warning;  // set when most draws terminate before the first doubling
};

// One self-terminating trajectory update of a single chain. The trajectory is
// doubled in a random direction until either end-to-end momentum alignment
// flips sign, a doubling turns out invalid (internal turn or divergence), or
// the doubling budget runs out; the new state is drawn from the whole
// trajectory with weights proportional to the canonical density.
NutsDrawStats nuts_transition_chain(const TargetDensity& target, ChainBatch& batch, int chain,
                                    double step_size, const NutsOptions& opts = {});

// Advance every chain `draws` times, recording post-transition positions in
// original coordinates when `out` is non-null.
NutsRunStats nuts_run(const TargetDensity& target, ChainBatch& batch, double step_size,
                      int draws, SampleTensor* out, const NutsOptions& opts = {},
                      int threads = 1);

}  // namespace ips
