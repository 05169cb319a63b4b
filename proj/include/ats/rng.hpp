#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace ats {

// Deterministic counter-based generator, "atscore-rng v1".
//
// Every randomized operation in this codebase derives named streams from
// (seed, label) and documents its draw order next to its implementation, so
// an independently written checker can replay the exact sequence:
//
//   state0       = splitmix_mix(seed) ^ fnv1a64(label)
//   next()       : state += 0x9E3779B97F4A7C15; return splitmix_mix(state)
//   u01()        : (next() >> 11) * 2^-53, a double in [0, 1)
//   uniform_int(n): (next() * n) >> 64 via 128-bit multiply, in [0, n)
//   normal()     : Box-Muller, exactly two next() draws:
//                  sqrt(-2 ln u1) * cos(2 pi u2), with u1 == 0 mapped to 2^-53
//   unit_vector(d): d normal() draws, then L2-normalize
//
// splitmix_mix is the splitmix64 finalizer:
//   z ^= z >> 30; z *= 0xBF58476D1CE4E5B9;
//   z ^= z >> 27; z *= 0x94D049BB133111EB;
//   z ^= z >> 31;

constexpr uint64_t kRngGamma = 0x9E3779B97F4A7C15ULL;

constexpr uint64_t splitmix_mix(uint64_t z) {
  z ^= z >> 30;
  z *= 0xBF58476D1CE4E5B9ULL;
  z ^= z >> 27;
  z *= 0x94D049BB133111EBULL;
  z ^= z >> 31;
  return z;
}

constexpr uint64_t fnv1a64(std::string_view s) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Stable seed for a derived stream (per-epoch, per-record, ...).
constexpr uint64_t derive_seed(uint64_t seed, std::string_view label) {
  return splitmix_mix(splitmix_mix(seed) ^ fnv1a64(label));
}

class CounterRng {
 public:
  CounterRng(uint64_t seed, std::string_view label)
      : state_(splitmix_mix(seed) ^ fnv1a64(label)) {}

  uint64_t next() {
    state_ += kRngGamma;
    return splitmix_mix(state_);
  }

  double u01() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n), n >= 1. Lemire multiply-shift, no rejection.
  uint64_t uniform_int(uint64_t n) {
    return static_cast<uint64_t>(
        (static_cast<__uint128_t>(next()) * n) >> 64);
  }

  double normal() {
    double u1 = u01();
    double u2 = u01();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  std::vector<double> unit_vector(int dim) {
    std::vector<double> v(static_cast<size_t>(dim));
    double norm_sq = 0.0;
    for (auto& x : v) {
      x = normal();
      norm_sq += x * x;
    }
    if (norm_sq > 0.0) {
      const double inv = 1.0 / std::sqrt(norm_sq);
      for (auto& x : v) x *= inv;
    }
    return v;
  }

 private:
  uint64_t state_;
};

}  // namespace ats
