#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <utility>
#include <vector>

namespace patcls {

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Seedable 64-bit generator with hand-rolled draws so that every stream is
/// bit-identical across platforms. The engine is std::mt19937_64 (the
/// algorithm is fixed by the standard); bounded integers use rejection
/// sampling, reals use the 53-bit mantissa recipe, normals use Box-Muller.
/// None of the implementation-defined std <random> distributions are used.
class Rng {
 public:
  explicit Rng(uint64_t seed) : seed_(seed), gen_(splitmix64(seed)) {}

  uint64_t next_u64() { return gen_(); }

  // Uniform integer in [0, n). Rejection sampling over the top of the range
  // keeps the draw exactly uniform.
  uint64_t below(uint64_t n) {
    if (n == 0) return 0;
    const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t x;
    do {
      x = gen_();
    } while (x >= limit);
    return x % n;
  }

  // Uniform double in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double normal(double mean = 0.0, double stddev = 1.0) {
    double u1 = uniform();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    const double u2 = uniform();
    const double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    return mean + stddev * z;
  }

  // Normal(0, stddev) resampled until |z| <= cutoff standard deviations.
  double truncated_normal(double stddev, double cutoff = 2.0) {
    double z;
    do {
      z = normal(0.0, 1.0);
    } while (std::fabs(z) > cutoff);
    return z * stddev;
  }

  // Fisher-Yates, driven by below().
  template <class T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      const size_t j = static_cast<size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  /// Derive an independent stream; used to give loops and parallel trainings
  /// their own deterministic generators.
  Rng fork(uint64_t stream) const {
    return Rng(splitmix64(seed_ ^ splitmix64(stream + 0x632be59bd9b4e019ULL)));
  }

 private:
  uint64_t seed_;
  std::mt19937_64 gen_;
};

}  // namespace patcls
