#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include "shadowpeft/tensor.hpp"

namespace shadowpeft {

/// Hands out independent, reproducible RNG streams keyed by a scope string
/// plus up to two integers (layer index, step counter, ...). The same
/// (seed, scope, a, b) always yields the same stream.
class RngFactory {
 public:
  explicit RngFactory(uint64_t seed) : seed_(seed) {}

  uint64_t seed() const { return seed_; }

  std::mt19937_64 stream(std::string_view scope, uint64_t a = 0, uint64_t b = 0) const {
    uint64_t h = 0xcbf29ce484222325ull ^ seed_;
    for (char c : scope) {
      h ^= static_cast<uint8_t>(c);
      h *= 0x100000001b3ull;
    }
    h = mix(h ^ mix(a + 0x9e3779b97f4a7c15ull));
    h = mix(h ^ mix(b + 0x7f4a7c159e3779b9ull));
    return std::mt19937_64(h);
  }

 private:
  static uint64_t mix(uint64_t z) {
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  uint64_t seed_;
};

/// N(0, stdev^2) init.
Tensor randn(Shape shape, std::mt19937_64& rng, double stdev, DType dtype = DType::kF64);

}  // namespace shadowpeft
