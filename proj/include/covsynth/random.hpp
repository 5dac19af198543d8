#pragma once

#include <cstdint>
#include <random>
#include <span>

namespace covsynth {

/// Random source shared by every sampler in the library.
///
/// All discrete and continuous draws are routed through `uniform()` and
/// `normal()`, so a test double only has to override those two to script
/// a code path.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}
  virtual ~Rng() = default;

  Rng(const Rng&) = default;
  Rng& operator=(const Rng&) = default;

  /// Uniform draw on the open interval (0, 1).
  virtual double uniform();
  virtual double normal();

  bool flip(double p) { return uniform() < p; }

  /// Index drawn with probability proportional to `weights`; zero weights are never chosen.
  std::size_t categorical(std::span<const double> weights);

  /// Independent seed for a child stream (chain `index` of a run seeded with `seed`).
  static std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

 private:
  std::mt19937_64 engine_;
  std::uniform_real_distribution<double> unit_{0.0, 1.0};
  std::normal_distribution<double> gauss_{0.0, 1.0};
};

}  // namespace covsynth
