#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace mealtwin {

using Rng = std::mt19937_64;

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Mixes a base seed with a path of stream labels into an independent seed.
constexpr std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> path) {
  std::uint64_t s = splitmix64(base);
  for (auto p : path) s = splitmix64(s ^ splitmix64(p + 0x632BE59BD9B4E019ULL));
  return s;
}

// Stream labels.
namespace stream {
inline constexpr std::uint64_t kOrders = 1;
inline constexpr std::uint64_t kPolicy = 2;
inline constexpr std::uint64_t kTieBreak = 3;
inline constexpr std::uint64_t kWarmup = 4;
inline constexpr std::uint64_t kFleet = 5;
inline constexpr std::uint64_t kInit = 6;
inline constexpr std::uint64_t kReplay = 7;
inline constexpr std::uint64_t kHistory = 8;
}  // namespace stream

}  // namespace mealtwin
