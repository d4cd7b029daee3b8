#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace pspg {

// SplitMix64 stream. The exact output sequence is part of the on-disk
// contract: datasets and initial parameters are reproducible from a seed on
// any platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : state_(seed) {}

  std::uint64_t next();

  // Uniform in [0, 1) with 53 random bits.
  double uniform();

  // Standard normal via Box-Muller. The second variate of each pair is cached.
  double normal();

  // Uniform integer in [0, n). n must be > 0.
  std::size_t below(std::size_t n);

  std::uint64_t state() const { return state_; }

 private:
  std::uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Stateless SplitMix64 mix of a single value; used to derive sub-seeds.
std::uint64_t splitmix64(std::uint64_t x);

// Fisher-Yates shuffle of 0..n-1 driven by `rng`.
std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng);

}  // namespace pspg
