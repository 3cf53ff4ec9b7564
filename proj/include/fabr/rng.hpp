#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace fabr {

// splitmix64; used to derive independent substream seeds from (seed, tags).
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) {
  return mix64(mix64(seed) ^ mix64(tag * 0x9E3779B97F4A7C15ull + 1));
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  return derive_seed(derive_seed(seed, a), b);
}

// Draws go through these helpers only; std::*_distribution is not used
// because its output sequence is implementation-defined and reproducibility
// across toolchains is part of the contract.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  // uniform in [0, 1), 53-bit resolution
  double uniform() {
    return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // uniform integer in [0, n)
  std::uint64_t below(std::uint64_t n) {
    // rejection-free modulo is biased for huge n; desk-scale n is tiny
    return eng_() % n;
  }

  bool coin() { return (eng_() & 1ull) != 0; }

  // Box-Muller, fixed two draws per sample
  double gaussian() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  double gaussian(double mean, double stddev) { return mean + stddev * gaussian(); }

  std::mt19937_64& engine() { return eng_; }

 private:
  std::mt19937_64 eng_;
};

} // namespace fabr
