#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace qdot {

using Engine = std::mt19937_64;

/// SplitMix64 finalizer; used to derive independent sub-seeds.
constexpr std::uint64_t mix_seed(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t hash_label(std::string_view label) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : label) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Independent engine for a named sub-stream of a run seed.
inline Engine make_engine(std::uint64_t seed, std::string_view stream_label, std::uint64_t index = 0) {
  return Engine(mix_seed(seed ^ mix_seed(hash_label(stream_label) + index)));
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view label, std::uint64_t index = 0) {
  return mix_seed(seed ^ mix_seed(hash_label(label) + 0x51ed27ULL * (index + 1)));
}

}  // namespace qdot
