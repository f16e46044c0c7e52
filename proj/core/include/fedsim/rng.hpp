#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace fedsim {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Derives an independent stream seed from a base seed and a tag path, so
/// that e.g. (seed, round, user) streams do not depend on execution order.
inline std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> tags) {
  std::uint64_t h = splitmix64(base);
  for (std::uint64_t t : tags) h = splitmix64(h ^ splitmix64(t + 0x632be59bd9b4e019ULL));
  return h;
}

// Stream tags.
inline constexpr std::uint64_t kTagPartition = 1;
inline constexpr std::uint64_t kTagInit = 2;
inline constexpr std::uint64_t kTagSchedule = 3;
inline constexpr std::uint64_t kTagSampling = 4;
inline constexpr std::uint64_t kTagLocal = 5;
inline constexpr std::uint64_t kTagAttack = 6;
inline constexpr std::uint64_t kTagAttackerData = 7;
inline constexpr std::uint64_t kTagTestData = 8;
inline constexpr std::uint64_t kTagTrainData = 9;
inline constexpr std::uint64_t kTagPretrain = 10;

}  // namespace fedsim
