#pragma once

#include <cstdint>
#include <cmath>

namespace krls {

// Counter-based generator: every draw is a pure function of (key, counter),
// and streams can be derived from a parent key without sharing state.
// Runs replay bit-exactly given the same seed and draw order.
class Rng {
 public:
  static Rng from_seed(uint64_t seed) { return Rng(mix(seed ^ 0x9e3779b97f4a7c15ull)); }

  // Derive an independent stream, e.g. split(episode_id, sample_index).
  Rng split(uint64_t a, uint64_t b = 0) const {
    uint64_t k = mix(key_ ^ mix(a + 0x632be59bd9b4e019ull));
    return Rng(mix(k ^ mix(b + 0xd1342543de82ef95ull)));
  }

  uint64_t next_u64() { return mix(key_ + 0x9e3779b97f4a7c15ull * ++counter_); }

  // Uniform in [0, 1) with 53 bits of mantissa.
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Unbiased-enough for desk scale (n << 2^64).
  uint64_t next_below(uint64_t n) { return next_u64() % n; }

  // Box-Muller; draws two uniforms per call, no cached state.
  double next_gaussian() {
    double u1 = next_double();
    double u2 = next_double();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

 private:
  explicit Rng(uint64_t key) : key_(key) {}

  // splitmix64 finalizer
  static uint64_t mix(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
  }

  uint64_t key_;
  uint64_t counter_ = 0;
};

}  // namespace krls
