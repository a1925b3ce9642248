#pragma once

#include <cstdint>
#include <random>

namespace dfr {

using Rng = std::mt19937_64;

/// splitmix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Per-item seed: reproducible from (global seed, item index), independent across items.
constexpr std::uint64_t derive_seed(std::uint64_t global_seed, std::uint64_t item_index) {
  return mix64(mix64(global_seed) ^ mix64(item_index + 0x632BE59BD9B4E019ULL));
}

inline double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

inline bool bernoulli(Rng& rng, double p) { return std::bernoulli_distribution(p)(rng); }

}  // namespace dfr
