#pragma once

// Counter-based random streams.
//
// Every chain, replica, and bookkeeping task owns an independent stream keyed
// by (seed, ids...). Draws depend only on the stream key and the stream's own
// position, never on which thread advanced it or in what order other streams
// were consumed, so runs are bit-reproducible under any --threads setting.
//
// The generator is Philox 4x32-10. Stream keys are derived from the user seed
// and the id tuple with splitmix64 so that nearby ids give unrelated keys.

#include <array>
#include <cmath>
#include <cstdint>
#include <initializer_list>

#include <Eigen/Core>

namespace ips {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// Collapses (seed, id0, id1, ...) into one 64-bit stream key.
inline std::uint64_t derive_stream_key(std::uint64_t seed,
                                       std::initializer_list<std::uint64_t> ids) {
  std::uint64_t k = splitmix64(seed);
  for (std::uint64_t id : ids) k = splitmix64(k ^ id);
  return k;
}

class CounterRng {
 public:
  CounterRng() : CounterRng(0, {}) {}
  CounterRng(std::uint64_t seed, std::initializer_list<std::uint64_t> ids) {
    std::uint64_t k = derive_stream_key(seed, ids);
    key_[0] = static_cast<std::uint32_t>(k);
    key_[1] = static_cast<std::uint32_t>(k >> 32);
    counter_ = {0, 0, 0, 0};
    buffer_pos_ = 4;  // forces a refill on first use
    have_cached_normal_ = false;
    cached_normal_ = 0.0;
  }

  std::uint32_t next_u32() {
    if (buffer_pos_ >= 4) refill();
    return buffer_[buffer_pos_++];
  }

  std::uint64_t next_u64() {
    std::uint64_t hi = next_u32();
    std::uint64_t lo = next_u32();
    return (hi << 32) | lo;
  }

  // Uniform on [0, 1) with 53 random mantissa bits.
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform on (0, 1], handy as a log() argument.
  double uniform_pos() { return 1.0 - uniform(); }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller. The pair partner is cached, which keeps
  // the stream deterministic as long as each stream is advanced sequentially.
  double normal() {
    if (have_cached_normal_) {
      have_cached_normal_ = false;
      return cached_normal_;
    }
    double u1 = uniform_pos();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 6.283185307179586476925286766559 * u2;
    cached_normal_ = r * std::sin(theta);
    have_cached_normal_ = true;
    return r * std::cos(theta);
  }

  Eigen::VectorXd normal_vector(Eigen::Index n) {
    Eigen::VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = normal();
    return v;
  }

  // Integer in [0, n).
  std::uint64_t uniform_index(std::uint64_t n) {
    // Rejection-free modulo is fine here: n is tiny compared to 2^64 in every
    // use (chain counts, rung counts), so the bias is unmeasurable.
    return next_u64() % n;
  }

 private:
  void refill() {
    std::array<std::uint32_t, 4> c = counter_;
    std::uint32_t k0 = key_[0];
    std::uint32_t k1 = key_[1];
    for (int round = 0; round < 10; ++round) {
      std::uint64_t p0 = 0xD2511F53ULL * c[0];
      std::uint64_t p1 = 0xCD9E8D57ULL * c[2];
      std::uint32_t hi0 = static_cast<std::uint32_t>(p0 >> 32);
      std::uint32_t lo0 = static_cast<std::uint32_t>(p0);
      std::uint32_t hi1 = static_cast<std::uint32_t>(p1 >> 32);
      std::uint32_t lo1 = static_cast<std::uint32_t>(p1);
      c = {hi1 ^ c[1] ^ k0, lo1, hi0 ^ c[3] ^ k1, lo0};
      k0 += 0x9E3779B9U;
      k1 += 0xBB67AE85U;
    }
    buffer_ = c;
    buffer_pos_ = 0;
    // 128-bit counter increment.
    if (++counter_[0] == 0 && ++counter_[1] == 0 && ++counter_[2] == 0) ++counter_[3];
  }

  std::array<std::uint32_t, 2> key_;
  std::array<std::uint32_t, 4> counter_;
  std::array<std::uint32_t, 4> buffer_;
  int buffer_pos_;
  bool have_cached_normal_;
  double cached_normal_;
};

}  // namespace ips
