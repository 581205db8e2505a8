#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

namespace smartbird {

// SplitMix64 finalizer. Used both as the generator step and to hash seed
// tuples into non-overlapping substream seeds.
inline uint64_t mix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Derives a substream seed from up to four tuple components, e.g.
// (sampling_seed, example_id, layer, head). Deterministic and
// platform-independent.
inline uint64_t stream_seed(uint64_t seed, uint64_t a = 0, uint64_t b = 0,
                            uint64_t c = 0) {
  uint64_t s = mix64(seed);
  s = mix64(s ^ (a * 0x9e3779b97f4a7c15ull + 1));
  s = mix64(s ^ (b * 0x632be59bd9b4e019ull + 2));
  s = mix64(s ^ (c * 0xd1342543de82ef95ull + 3));
  return s;
}

// Small deterministic PRNG. We avoid <random> distributions on purpose:
// their output is implementation-defined, and reproducible experiment
// artifacts require bit-stable draws.
class SplitMix64 {
 public:
  explicit SplitMix64(uint64_t seed) : state_(seed) {}

  uint64_t next() {
    state_ += 0x9e3779b97f4a7c15ull;
    uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // Uniform double in [0, 1).
  double uniform01() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) {
    return lo + (hi - lo) * uniform01();
  }

  // Unbiased integer in [0, n).
  uint64_t bounded(uint64_t n) {
    const uint64_t threshold = (0 - n) % n;
    for (;;) {
      const uint64_t r = next();
      if (r >= threshold) return r % n;
    }
  }

  int uniform_int(int lo, int hi_inclusive) {
    return lo + static_cast<int>(bounded(
                    static_cast<uint64_t>(hi_inclusive - lo + 1)));
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      const size_t j = static_cast<size_t>(bounded(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  uint64_t state_;
};

// Xavier-uniform fill: U(-b, b) with b = sqrt(6 / (fan_in + fan_out)).
inline void xavier_fill(std::span<float> w, int fan_in, int fan_out,
                        SplitMix64& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (float& x : w) x = static_cast<float>(rng.uniform(-bound, bound));
}

}  // namespace smartbird
