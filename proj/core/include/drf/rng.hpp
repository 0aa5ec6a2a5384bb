#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace drf::rng {

using Engine = std::mt19937_64;

constexpr std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (char c : s) {
    h ^= static_cast<std::uint8_t>(c);
    h *= 0x100000001b3ull;
  }
  return h;
}

/// Independent stream per (seed, tag) pair so that adding or removing one
/// consumer does not shift the draws seen by another.
inline std::uint64_t derive(std::uint64_t seed, std::string_view tag) {
  std::uint64_t h = fnv1a(tag);
  h ^= seed + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
  return h;
}

inline Engine make_engine(std::uint64_t seed) { return Engine(seed); }

inline double uniform01(Engine& eng) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(eng);
}

inline double uniform(Engine& eng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(eng);
}

inline double gaussian(Engine& eng, double mean, double stddev) {
  return std::normal_distribution<double>(mean, stddev)(eng);
}

}  // namespace drf::rng
