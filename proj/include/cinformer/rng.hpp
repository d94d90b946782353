#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace cinformer {

/// splitmix64 stream. Reals are built from the top 53 bits so two
/// implementations with IEEE doubles produce identical sequences.
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed = 0) : state_(seed) {}

  std::uint64_t next_u64() {
    state_ += 0x9E3779B97F4A7C15ull;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  // [0, 1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // [0, n) by modulo reduction.
  std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

  // Box-Muller, cosine branch only; 1 - u keeps the log argument in (0, 1].
  double normal() {
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  std::uint64_t state() const { return state_; }

  /// Independent stream for item `index`: one splitmix64 step from seed ^ index.
  static SeededRng substream(std::uint64_t seed, std::uint64_t index) {
    SeededRng mix(seed ^ index);
    return SeededRng(mix.next_u64());
  }

 private:
  std::uint64_t state_;
};

}  // namespace cinformer
