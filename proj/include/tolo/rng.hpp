#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace tolo {

/// 64-bit FNV-1a; stable across platforms, used to key random streams by name.
constexpr std::uint64_t fnv1a64(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Seed of the named sub-stream of a run seed ("init", "drift", "embeddings", ...).
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream) {
  return splitmix64(seed ^ fnv1a64(stream));
}

inline std::mt19937_64 make_stream(std::uint64_t seed, std::string_view stream) {
  return std::mt19937_64(derive_seed(seed, stream));
}

}  // namespace tolo
