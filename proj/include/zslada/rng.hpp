#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace zslada {

std::uint64_t splitmix64(std::uint64_t x);

/// Named-stream random generator.
///
/// Every stream is derived from a root seed and a name, so adding a new
/// consumer of randomness never perturbs the draws of an existing one.
/// Uniform and normal variates are produced by hand from the raw 64-bit
/// engine output, which keeps sequences identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : key_(seed), engine_(splitmix64(seed)) {}

  static Rng stream(std::uint64_t seed, std::string_view name);

  /// Child stream keyed by this stream's key and `name`. Does not advance this stream.
  Rng split(std::string_view name) const { return stream(key_, name); }

  std::uint64_t key() const noexcept { return key_; }

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53 bits of resolution.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Unbiased integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  double normal();

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

 private:
  std::uint64_t key_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace zslada
