#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace fairmtl {

using Rng = std::mt19937_64;

// splitmix64 finalizer; used to decorrelate derived seeds.
constexpr std::uint64_t MixSeed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Derives the seed of a named sub-stream. All randomness in a run flows from
// one root seed through these names, optionally indexed (epoch, sample, ...).
constexpr std::uint64_t SubSeed(std::uint64_t root, std::string_view name,
                                std::uint64_t index_a = 0, std::uint64_t index_b = 0) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char ch : name) {
    h ^= static_cast<unsigned char>(ch);
    h *= 0x100000001b3ULL;
  }
  return MixSeed(MixSeed(MixSeed(root ^ h) + index_a) + index_b);
}

inline Rng MakeRng(std::uint64_t root, std::string_view name, std::uint64_t index_a = 0,
                   std::uint64_t index_b = 0) {
  return Rng(SubSeed(root, name, index_a, index_b));
}

}  // namespace fairmtl
