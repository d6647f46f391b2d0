#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace pwtp {

/// SplitMix64 generator. The stream is a pure function of the seed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : state_(seed) {}

  std::uint64_t next_u64();
  /// Uniform double in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n). n must be positive.
  std::size_t below(std::size_t n);
  double normal();

  std::uint64_t state() const { return state_; }

 private:
  std::uint64_t state_;
};

/// n draws from rng.uniform(); n == 0 leaves the state untouched.
std::vector<double> rng_uniform(Rng& rng, std::size_t n);

/// Stateless mix of a seed with a stream tag, for independent substreams.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag);

}  // namespace pwtp
