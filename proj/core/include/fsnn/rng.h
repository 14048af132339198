#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace fsnn {

// Deterministic random source. std::mt19937_64 has a fixed, portable output
// sequence, but the standard <random> distributions do not, so the
// conversions to doubles are done by hand here. Every stochastic code path
// in the library draws from this class, which makes runs bit-reproducible
// for a fixed seed on any conforming platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller; consumes exactly two draws per value.
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    // Guard against log(0).
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    constexpr double two_pi = 6.283185307179586476925286766559;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
  }

  // Uniform integer in [0, n). Modulo bias is far below any tolerance used
  // in this codebase (n is always tiny relative to 2^64).
  std::uint64_t below(std::uint64_t n) { return engine_() % n; }

 private:
  std::mt19937_64 engine_;
};

// Derives an independent stream seed from a base seed and a row/stream
// index (splitmix64 finalizer). Used so that sweep rows and dataset splits
// get decorrelated streams while remaining a pure function of the base seed.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) {
  std::uint64_t z = base + 0x9e3779b97f4a7c15ull * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

}  // namespace fsnn
