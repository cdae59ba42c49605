#pragma once

#include <cstddef>
#include <cstdint>

namespace mpcflow {

/// Counter-based generator built on the SplitMix64 finalizer.
///
/// Draw i of a stream with key k is mix(k + i * 0x9E3779B97F4A7C15), i = 1, 2, ...
/// where mix is the SplitMix64 output function. A stream key is mix(seed).
/// split(s) derives an independent child stream with key mix(k ^ mix(s + 1)).
/// Uniform doubles use the top 53 bits; normals use Box-Muller with the sine
/// branch cached for the next call.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();
  /// Uniform on [0, 1).
  double uniform();
  double uniform(double lo, double hi);
  /// Uniform integer in [0, n). n must be positive.
  std::size_t below(std::size_t n);
  /// Standard normal.
  double normal();

  Rng split(std::uint64_t stream) const;

  static std::uint64_t mix(std::uint64_t z);

 private:
  struct KeyTag {};
  Rng(std::uint64_t key, KeyTag);

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace mpcflow
