#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>

namespace treegress {

/// Seeded random source with platform-independent output.
///
/// The engine is std::mt19937_64, whose sequence the standard pins down. The
/// standard distributions are not portable across library implementations, so
/// the variates are derived here directly from raw engine output: uniform
/// doubles from the top 53 bits, normals by the Marsaglia polar method,
/// exponentials by inversion.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n);
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }
  double exponential(double rate);
  /// Draws an index with probability proportional to `weights` (non-negative, positive sum).
  std::size_t categorical(std::span<const double> weights);

 private:
  std::mt19937_64 engine_;
  double spare_normal_ = 0.0;
  bool has_spare_ = false;
};

/// SplitMix64 finalizer; used to derive independent stream seeds.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);
std::uint64_t mix_seed(std::uint64_t seed, std::string_view stream);

}  // namespace treegress
