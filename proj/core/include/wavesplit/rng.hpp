#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace wavesplit {

// splitmix64; used to derive independent sub-stream seeds from one master seed.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// Seeded random stream. Distribution code is written out explicitly (instead
// of std::*_distribution) so sequences do not depend on the standard library
// implementation.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : engine_(seed), seed_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [lo, hi] inclusive.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<std::int64_t>(engine_() % span);
  }

  // Standard normal via Box-Muller (one value per call, no caching, so the
  // stream position is predictable).
  double normal() {
    double u1 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  bool bernoulli(double p) { return uniform() < p; }

  std::uint64_t seed() const { return seed_; }

  // Independent child stream; identical (seed, salt) pairs give identical streams.
  RngStream fork(std::uint64_t salt) const { return RngStream(mix_seed(seed_, salt)); }

 private:
  std::mt19937_64 engine_;
  std::uint64_t seed_;
};

}  // namespace wavesplit
