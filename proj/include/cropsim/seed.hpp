#pragma once

#include <cstdint>

namespace cropsim {

// SplitMix64 finalizer; good avalanche, cheap, stable across platforms.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Seed for item `index` of a stream identified by `salt`, independent of the
// order in which items are produced.
constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index,
                                    std::uint64_t salt = 0) {
  return mix64(master ^ mix64(index ^ mix64(salt)));
}

}  // namespace cropsim
