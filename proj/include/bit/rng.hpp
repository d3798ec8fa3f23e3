#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>

#include <ATen/CPUGeneratorImpl.h>
#include <ATen/core/Generator.h>

namespace bit {

/// Seedable generator with portable (bit-exact across standard libraries)
/// conversions; std distributions are implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform double in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Unbiased integer in [0, n).
  std::uint64_t uniform_int(std::uint64_t n) {
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x = engine_();
    while (x >= limit) x = engine_();
    return x % n;
  }

  /// Standard normal via Box-Muller.
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  /// Derive an independent child seed (splitmix64 of the next draw).
  std::uint64_t fork_seed() { return mix(engine_()); }

  static std::uint64_t mix(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  bool operator==(const Rng&) const = default;

 private:
  std::mt19937_64 engine_;
};

/// Seed combination used wherever a stream needs (base, salt) derivation.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t salt) {
  return Rng::mix(base ^ Rng::mix(salt + 0x632be59bd9b4e019ULL));
}

inline at::Generator make_torch_generator(std::uint64_t seed) {
  return at::detail::createCPUGenerator(seed);
}

}  // namespace bit
