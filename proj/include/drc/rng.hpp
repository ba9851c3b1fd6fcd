#pragma once

#include <cstdint>
#include <random>
#include <utility>
#include <vector>

namespace drc {

// splitmix64 finalizer.
inline std::uint64_t mix_bits(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Derives an independent stream seed from a base seed, so that e.g. grid
// cells and CV folds get reproducible RNGs regardless of scheduling order.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  return mix_bits(base ^ mix_bits(stream));
}

// Seeded generator. mt19937_64 output is pinned by the standard; the helpers
// below avoid std::uniform_* distributions, whose mapping is
// implementation-defined, so the same seed gives the same stream everywhere.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  // Uniform in [0, 1), 53 random bits.
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  std::uint64_t next() { return gen_(); }

  std::size_t below(std::size_t n) {
    return static_cast<std::size_t>(gen_() % static_cast<std::uint64_t>(n));
  }

  // Fisher-Yates in place.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[below(i)]);
    }
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace drc
