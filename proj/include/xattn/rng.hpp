#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace xattn {

// 64-bit FNV-1a. Stable across platforms; used for run ids and seed derivation.
constexpr uint64_t fnv1a64(std::string_view s,
                           uint64_t h = 1469598103934665603ull) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

// Derives an independent stream seed from (seed, tag) via a splitmix64 step.
inline uint64_t mix_seed(uint64_t seed, std::string_view tag) {
  uint64_t z = seed ^ fnv1a64(tag);
  z += 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

inline std::mt19937_64 make_rng(uint64_t seed, std::string_view tag) {
  return std::mt19937_64(mix_seed(seed, tag));
}

}  // namespace xattn
