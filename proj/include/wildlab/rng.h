#ifndef WILDLAB_RNG_H_
#define WILDLAB_RNG_H_

#include <cstdint>
#include <random>
#include <string_view>

namespace wildlab {

using Rng = std::mt19937_64;

// SplitMix64 finalizer; used to derive independent sub-seeds.
constexpr uint64_t mix_seed(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Deterministic sub-seed for a named stream, so that adding a consumer of
// randomness in one stage does not perturb another.
constexpr uint64_t derive_seed(uint64_t seed, std::string_view stream) {
  uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (char c : stream) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return mix_seed(seed ^ mix_seed(h));
}

inline Rng make_rng(uint64_t seed, std::string_view stream) {
  return Rng(derive_seed(seed, stream));
}

// Uniform double in [0, 1) with 53 random bits.
inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

}  // namespace wildlab

#endif  // WILDLAB_RNG_H_
