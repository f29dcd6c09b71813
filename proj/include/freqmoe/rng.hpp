// Copyright (c) 2026 the freqmoe authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace freqmoe {

// Deterministic xoshiro256++ generator. std::mt19937 plus the standard
// distributions would leave sampled values implementation-defined, so both
// the generator and the uniform/normal transforms are fixed here; results
// are bit-identical across platforms.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  // Independent substream: hashes the purpose label into the seed so that
  // e.g. "init", "data" and "shuffle" streams never overlap.
  static Rng stream(std::uint64_t seed, const std::string& purpose);

  std::uint64_t next_u64();

  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  // Uniform in [lo, hi).
  double uniform(double lo, double hi);
  // Standard normal via Box-Muller (caches the second variate).
  double normal();

  // Fisher-Yates shuffle of {0, ..., n-1}.
  std::vector<int> permutation(int n);

 private:
  std::uint64_t s_[4];
  double cached_normal_ = 0.0;
  bool has_cached_normal_ = false;
};

}  // namespace freqmoe
