#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "common.hpp"

namespace add {

// Deterministic RNG. All distribution code is spelled out here so that a
// given seed produces the same stream on every platform; std:: distribution
// objects are implementation-defined and must not be used.
class Rng {
 public:
  explicit Rng(uint64_t seed) : seed_(seed), eng_(seed) {}

  uint64_t seed() const { return seed_; }

  uint64_t next_u64() { return eng_(); }

  // [0, 1)
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // [0, n)
  int64_t uniform_int(int64_t n) { return static_cast<int64_t>(uniform() * static_cast<double>(n)); }

  // Box-Muller; one fresh pair per call keeps the stream position
  // independent of call history.
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (int64_t i = static_cast<int64_t>(v.size()) - 1; i > 0; --i) {
      int64_t j = uniform_int(i + 1);
      std::swap(v[i], v[static_cast<size_t>(j)]);
    }
  }

  // Derives an independent deterministic stream from this RNG's seed,
  // e.g. one stream per dataset sample.
  Rng split(uint64_t stream) const {
    uint64_t x = seed_ ^ (stream + 0x9e3779b97f4a7c15ULL);
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return Rng(x ^ (x >> 31));
  }

 private:
  uint64_t seed_;
  std::mt19937_64 eng_;
};

}  // namespace add
