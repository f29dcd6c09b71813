// Copyright (c) 2026 the freqmoe authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>

#include "freqmoe/moe.hpp"

namespace freqmoe {

// Turns a pretrained dense model into a frequency-band mixture: the dense
// mode window becomes the base band, experts start as exact copies of the
// base behavior (A random, B zero, so every delta is zero) and gates start
// neutral at 0.5 (w = 0).
struct UpcycleSpec {
  int n_experts = 0;
  int rank = 4;
  double alpha = 1.0;
  BandLayout layout;  // chunk must equal the base model's mode window
  int top_k = 2;
  double tau = 1.0;
  std::uint64_t seed = 0;
  std::vector<int> bands;  // optional explicit band ids; empty = lowest first
};

FreqMoe upcycle(const DenseFno& base, const UpcycleSpec& spec);

struct UpcycleReport {
  // max |dense(x) - moe(x) with experts masked| over the probe batch;
  // exactly 0 for a faithful upcycle.
  double max_masked_deviation = 0.0;
  // Frobenius norm of each expert's delta over all modes: [layer][expert].
  std::vector<std::vector<double>> delta_norms;
  long long base_params = 0;
  long long moe_total_params = 0;
  long long moe_active_params = 0;
};

// Probes both models on random inputs and reports the Alg.-1 safety
// numbers. Architecture mismatch (width, depth, grid, channels, chunk vs
// base modes) raises ConfigError instead of producing a report.
UpcycleReport verify_upcycle(const DenseFno& base, const FreqMoe& moe, int probes,
                             std::uint64_t seed);

}  // namespace freqmoe
