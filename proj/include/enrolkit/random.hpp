#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

namespace enrolkit {

// Seeded generator with platform-independent derived distributions.
// std::uniform_int_distribution and std::normal_distribution are
// implementation-defined, so reproducible outputs are built directly on
// the (fully specified) 64-bit Mersenne Twister.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  // Uniform integer in [0, bound); bound must be > 0.
  std::uint64_t uniform_below(std::uint64_t bound);

  // Uniform double in [0, 1) with 53 random bits.
  double uniform01();

  // Standard normal via Box-Muller.
  double normal();

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// SplitMix64 finaliser; used to derive independent per-index streams.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

// First `n` entries of a seeded Fisher-Yates shuffle of [0, available).
// Returns min(n, available) distinct indices.
std::vector<std::size_t> sample_without_replacement(std::size_t available,
                                                    std::size_t n,
                                                    std::uint64_t seed);

}  // namespace enrolkit
