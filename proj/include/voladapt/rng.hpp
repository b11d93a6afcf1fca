// Platform-independent seeded randomness. Every stream is derived from a
// root seed and a purpose label so unrelated consumers never share state.

#ifndef VOLADAPT_RNG_HPP
#define VOLADAPT_RNG_HPP

#include <cstdint>
#include <random>
#include <string_view>

namespace voladapt {

inline std::uint64_t splitmix64_mix(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t label) {
  return splitmix64_mix(parent + 0x9e3779b97f4a7c15ULL * (label + 1));
}

inline std::uint64_t derive_seed(std::uint64_t parent, std::string_view label) {
  return derive_seed(parent, fnv1a64(label));
}

/// std::mt19937_64 (whose raw output is fixed by the standard) with
/// portable conversions; the std distributions are implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  /// Uniform double in [0, 1) from the top 53 bits.
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
  /// Uniform integer in [0, n) by rejection, n > 0.
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = next();
    } while (x >= limit);
    return x % n;
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace voladapt

#endif  // VOLADAPT_RNG_HPP
