#pragma once

// SPDX-License-Identifier: Apache-2.0

#include <cstdint>
#include <string_view>
#include <vector>

#include "proxex/hash.hpp"

namespace proxex {

// SplitMix64. The standard <random> engines are portable but the
// distributions are not, and mask sampling must be bit-reproducible across
// platforms, so bounded draws are implemented here as well.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, bound). Rejection sampling keeps the draw unbiased.
  std::uint64_t below(std::uint64_t bound) {
    if (bound == 0) return 0;
    const std::uint64_t threshold = (~bound + 1) % bound;  // 2^64 mod bound
    for (;;) {
      const std::uint64_t r = next_u64();
      if (r >= threshold) return r % bound;
    }
  }

  // Uniform in [0, 1) with 53 random bits.
  double unit() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // k distinct values from {0, .., n-1} via partial Fisher-Yates; order is
  // the draw order, deterministic for a given state.
  std::vector<std::size_t> distinct(std::size_t n, std::size_t k) {
    std::vector<std::size_t> pool(n);
    for (std::size_t i = 0; i < n; ++i) pool[i] = i;
    if (k > n) k = n;
    for (std::size_t i = 0; i < k; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(below(n - i));
      std::swap(pool[i], pool[j]);
    }
    pool.resize(k);
    return pool;
  }

  std::vector<std::size_t> permutation(std::size_t n) { return distinct(n, n); }

 private:
  std::uint64_t state_;
};

// Named sub-seed so every randomness consumer hangs off the single run seed.
inline std::uint64_t derive_seed(std::uint64_t base, std::string_view tag) {
  std::uint64_t h = fnv1a64(tag);
  h ^= base + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
  Rng mix(h);
  return mix.next_u64();
}

inline std::uint64_t derive_seed(std::uint64_t base, std::string_view tag, std::uint64_t index) {
  return derive_seed(derive_seed(base, tag), hex64(index));
}

}  // namespace proxex
