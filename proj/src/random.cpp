#include "covsynth/random.hpp"

#include <numeric>

#include "covsynth/errors.hpp"

namespace covsynth {

double Rng::uniform() {
  double u = 0.0;
  do {
    u = unit_(engine_);
  } while (u <= 0.0);
  return u;
}

double Rng::normal() { return gauss_(engine_); }

std::size_t Rng::categorical(std::span<const double> weights) {
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  if (!(total > 0.0)) throw ArgumentError("categorical: weights must have positive total mass");
  const double target = uniform() * total;
  double cumulative = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (weights[i] <= 0.0) continue;
    cumulative += weights[i];
    last_positive = i;
    if (target < cumulative) return i;
  }
  return last_positive;
}

std::uint64_t Rng::derive_seed(std::uint64_t seed, std::uint64_t index) {
  // splitmix64 finalizer over the pair
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace covsynth
