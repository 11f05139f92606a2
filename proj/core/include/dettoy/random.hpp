#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace dettoy {

/// SplitMix64 finalizer; used to derive independent seeds from structured keys.
std::uint64_t mix64(std::uint64_t x);

/// Stable 64-bit FNV-1a hash (unlike std::hash, identical across platforms and runs).
std::uint64_t stable_hash(std::string_view text);

/// Combines a seed with further key material, order-sensitively.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t key);

/// Engine with portable sampling helpers. std:: distributions are implementation
/// defined, so everything that must be reproducible goes through these methods.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(mix64(seed)) {}

  std::uint64_t next() { return engine_(); }
  /// Uniform integer in [0, bound), unbiased. Requires bound > 0.
  std::uint64_t below(std::uint64_t bound);
  /// Uniform integer in [lo, hi].
  std::int64_t between(std::int64_t lo, std::int64_t hi);
  /// Uniform real in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Standard normal via Box-Muller.
  double normal();

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace dettoy
