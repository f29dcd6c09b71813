// Copyright (c) 2026 the freqmoe authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>

#include "freqmoe/moe.hpp"
#include "freqmoe/pde.hpp"

namespace freqmoe {

using ForwardFn = std::function<Field(const Field&)>;

ForwardFn make_forward(const DenseFno& m);
// Inference path: top-k experts per layer.
ForwardFn make_forward(const FreqMoe& m, int top_k);

struct EvalReport {
  std::vector<double> per_sample;
  double mean = 0.0;
  double stddev = 0.0;
  std::vector<double> per_channel;  // mean relative L2 per output channel
};

// Single-step prediction error over a dataset. Empty dataset is an error.
EvalReport eval_single_step(const ForwardFn& forward, const Dataset& ds);

struct RolloutResult {
  std::vector<double> errors;  // per autoregressive step, 1-based steps
  bool blew_up = false;        // non-finite prediction; curve truncated
};

// Feeds predictions back as inputs; truth[i] is the state after i+1 steps.
RolloutResult rollout(const ForwardFn& forward, const Field& initial,
                      const std::vector<Field>& truth);

struct GateMap {
  bool has_gates = false;  // false: dense model, explicit "no gates" result
  int bands1 = 0;
  int bands2 = 0;
  // J1 x J2 grids averaged over samples and layers. The base cell is 1.0 by
  // convention; cells without an expert are 0.
  Eigen::MatrixXd mean_gate;
  Eigen::MatrixXd active_freq;  // fraction of (sample, layer) top-k activations
};

GateMap gate_activation_map(const FreqMoe& m, const Dataset& ds, int top_k);
// The dense counterpart carries no gates; callers emit it verbatim.
GateMap gate_activation_map_dense();

struct BenchRow {
  int modes = 0;  // retained modes per axis; band grid is modes/chunk
  long long dense_flops = 0;
  long long dense_spectral_flops = 0;
  long long moe_flops = 0;
  long long moe_expert_flops = 0;
  long long moe_gating_flops = 0;
  long long dense_params = 0;
  long long moe_active_params = 0;
  double dense_time_ms = -1.0;  // best of 5; negative when not timed
  double moe_time_ms = -1.0;
};

// Analytic dense-vs-mixture scaling table. Every entry in `mode_list` must
// be a multiple of `chunk`; the mixture uses a (m/chunk)^2 band grid with
// all non-base experts present and k = top_k active.
std::vector<BenchRow> bench_modes(const std::vector<int>& mode_list, int chunk, int top_k,
                                  int rank, const FnoConfig& base_cfg, bool time_it);

std::string bench_rows_csv(const std::vector<BenchRow>& rows);

}  // namespace freqmoe
