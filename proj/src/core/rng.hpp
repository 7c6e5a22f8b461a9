#pragma once

#include <cmath>
#include <cstdint>

namespace gapkit {

// Counter-based RNG. Every draw is a pure hash of a (seed, stream ids...)
// key, so results do not depend on call order, batch partitioning or
// thread count.

inline uint64_t mix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline uint64_t rng_key(uint64_t seed) { return mix64(seed); }

template <class... Ids>
uint64_t rng_key(uint64_t seed, uint64_t id, Ids... rest) {
  return rng_key(mix64(seed) ^ mix64(id ^ 0xa5a5a5a5a5a5a5a5ull), rest...);
}

inline uint64_t rng_u64(uint64_t key) { return mix64(key ^ 0xd1b54a32d192ed03ull); }

// Uniform double in [0, 1).
inline double rng_u01(uint64_t key) {
  return static_cast<double>(rng_u64(key) >> 11) * 0x1.0p-53;
}

inline double rng_uniform(uint64_t key, double lo, double hi) {
  return lo + (hi - lo) * rng_u01(key);
}

// Unbiased-enough integer in [0, n) via fixed-point multiply.
inline uint64_t rng_below(uint64_t key, uint64_t n) {
  return static_cast<uint64_t>(
      (static_cast<__uint128_t>(rng_u64(key)) * n) >> 64);
}

// Standard normal via Box-Muller on two derived sub-draws.
inline double rng_normal(uint64_t key) {
  double u1 = rng_u01(rng_key(key, 0x5bd1));
  double u2 = rng_u01(rng_key(key, 0x7f4a));
  if (u1 < 1e-300) u1 = 1e-300;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

}  // namespace gapkit
