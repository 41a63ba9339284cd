#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace fairfl {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Mixes a base seed with an ordered list of integer coordinates (run, round, client id, ...).
/// Distinct coordinate tuples give statistically independent streams.
inline std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::int64_t> coords) noexcept {
  std::uint64_t h = splitmix64(base);
  for (auto c : coords) h = splitmix64(h ^ splitmix64(static_cast<std::uint64_t>(c) + 0x632be59bd9b4e019ULL));
  return h;
}

// Stream tags, so that e.g. data generation and model init never share a stream.
namespace stream {
inline constexpr std::int64_t kData = 0x44415441;
inline constexpr std::int64_t kSplit = 0x53504c54;
inline constexpr std::int64_t kInit = 0x494e4954;
inline constexpr std::int64_t kTrain = 0x5452414e;
inline constexpr std::int64_t kCluster = 0x434c5354;
inline constexpr std::int64_t kPartition = 0x50415254;
}  // namespace stream

}  // namespace fairfl
