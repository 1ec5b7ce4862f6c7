#pragma once

// Named random streams. Every subsystem draws from its own engine seeded by
// (root seed, stream name), so changing one consumer never shifts another.

#include <cstdint>
#include <random>
#include <string_view>

namespace rfpt {

using Rng = std::mt19937_64;

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline constexpr std::uint64_t stream_seed(std::uint64_t root, std::string_view name) {
  std::uint64_t h = 0xCBF29CE484222325ULL;  // FNV-1a
  for (char c : name) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ULL;
  }
  return splitmix64(splitmix64(root) ^ h);
}

inline constexpr std::uint64_t stream_seed(std::uint64_t root, std::string_view name,
                                           std::uint64_t index) {
  return splitmix64(stream_seed(root, name) + splitmix64(index + 1));
}

inline Rng make_rng(std::uint64_t root, std::string_view name) {
  return Rng(stream_seed(root, name));
}

inline Rng make_rng(std::uint64_t root, std::string_view name, std::uint64_t index) {
  return Rng(stream_seed(root, name, index));
}

}  // namespace rfpt
