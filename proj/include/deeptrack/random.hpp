// SPDX-License-Identifier: Apache-2.0

#ifndef DEEPTRACK_RANDOM_HPP_
#define DEEPTRACK_RANDOM_HPP_

#include <cstdint>
#include <random>

namespace deeptrack {

/// Seeded generator with portable draws (the std:: distributions are
/// implementation-defined, the engine sequence is not).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Inclusive range.
  int integer(int lo, int hi) { return lo + static_cast<int>(engine_() % static_cast<std::uint64_t>(hi - lo + 1)); }
  bool coin() { return (engine_() >> 63) != 0; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace deeptrack

#endif  // DEEPTRACK_RANDOM_HPP_
