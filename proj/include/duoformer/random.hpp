#pragma once

#include <cstdint>

namespace duo {

// SplitMix64 generator. split() derives an independent stream so that each
// consumer (a layer initializer, a data shuffler, a sample) gets its own
// reproducible sequence regardless of how many draws its siblings make.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : state_(seed) {}

  std::uint64_t next();
  Rng split();

  // Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  double normal();
  // Normal(0, sigma) resampled until within ±2 sigma.
  double truncated_normal(double sigma);

  std::uint64_t state() const { return state_; }

 private:
  std::uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace duo
