#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

#include "viewdistill/errors.hpp"

namespace viewdistill {

// SplitMix64 finalizer. Bijective on 64-bit words; used both as the
// generator step and to fold stream keys into a seed.
inline uint64_t mix64(uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Small deterministic generator. std::mt19937 plus the standard
// distributions are avoided on purpose: distribution output is not
// pinned by the standard, and reproducibility here is a contract.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ULL;
    uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1), 53-bit resolution.
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [lo, hi). Rejection keeps the draw unbiased.
  int64_t uniform_int(int64_t lo, int64_t hi) {
    if (lo >= hi) throw DegenerateError("uniform_int: empty range");
    const uint64_t range = static_cast<uint64_t>(hi - lo);
    const uint64_t limit = UINT64_MAX - UINT64_MAX % range;
    uint64_t x = next_u64();
    while (x >= limit) x = next_u64();
    return lo + static_cast<int64_t>(x % range);
  }

  // Standard normal via Box-Muller. Consumes exactly two uniforms per
  // call (no cached spare) so the stream position stays predictable.
  double normal() {
    const double u1 =
        static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  uint64_t state_;
};

// Derives an independent generator from a master seed and a key path,
// e.g. stream(seed, epoch, take, view). Distinct key paths give
// unrelated streams; the same path always gives the same stream.
template <typename... Keys>
Rng stream(uint64_t seed, Keys... keys) {
  uint64_t h = mix64(seed);
  ((h = mix64(h ^ static_cast<uint64_t>(keys))), ...);
  return Rng(h);
}

}  // namespace viewdistill
