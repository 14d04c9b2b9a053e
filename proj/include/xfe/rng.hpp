#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>
#include <string>

namespace xfe {

// All randomness flows through one engine type. The helpers below keep no hidden
// state, so the engine state alone (see save_rng/load_rng) reproduces a stream.
using Rng = std::mt19937_64;

// Uniform in [0, 1) with 53 random bits.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

// Unbiased integer in [0, n) by rejection.
inline std::uint64_t uniform_index(Rng& rng, std::uint64_t n) {
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t r;
  do {
    r = rng();
  } while (r >= limit);
  return r % n;
}

// Standard normal via Box-Muller (one draw consumes two engine outputs).
inline double normal(Rng& rng) {
  const double u1 = 1.0 - uniform01(rng);  // (0, 1]
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

inline std::string save_rng(const Rng& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

inline Rng load_rng(const std::string& state) {
  Rng rng;
  std::istringstream is(state);
  is >> rng;
  return rng;
}

}  // namespace xfe
