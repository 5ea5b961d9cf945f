#pragma once

// Deterministic randomness. Everything that needs random numbers (dataset
// split, epoch shuffles, weight init, test generators) runs off SplitMix64
// so results are identical across platforms and standard-library versions.
// std::uniform_*_distribution is implementation-defined and is not used.

#include <cstdint>
#include <vector>

namespace weednet {

class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    state_ += 0x9E3779B97F4A7C15ull;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1) with 53 bits of mantissa.
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform in [lo, hi).
  double next_double(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  // Uniform in [0, n) via 128-bit multiply-shift.
  std::uint64_t next_below(std::uint64_t n) {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

 private:
  std::uint64_t state_;
};

// Stable combination of a base seed with a stream index (epoch number etc.).
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  SplitMix64 rng(seed ^ (0x9E3779B97F4A7C15ull * (stream + 1)));
  return rng.next_u64();
}

// In-place Fisher-Yates shuffle driven by the given generator.
template <class T>
void shuffle(std::vector<T>& items, SplitMix64& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    std::size_t j = static_cast<std::size_t>(rng.next_below(i));
    std::swap(items[i - 1], items[j]);
  }
}

}  // namespace weednet
