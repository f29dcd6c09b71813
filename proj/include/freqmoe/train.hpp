// Copyright (c) 2026 the freqmoe authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "freqmoe/moe.hpp"
#include "freqmoe/pde.hpp"

namespace freqmoe {

struct TrainConfig {
  int batch = 32;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.99;
  int warmup_steps = 50;
  int cosine_epochs = 70;
  int steady_epochs = 30;
  double min_lr_ratio = 5e-2;
  double sparsity_weight = 0.01;
  double clip_norm = 1.0;
  std::uint64_t seed = 0;
  bool freeze_base = false;       // mixture models: freeze shared R weights
  long long burn_in_masked = 0;   // mask experts for the first N steps

  void validate() const;
};

// Linear warmup over warmup_steps, cosine from lr down to lr*min_lr_ratio
// until step cosine_epochs*steps_per_epoch, constant plateau afterwards.
// Continuous at both boundaries; the plateau value is exactly
// lr * min_lr_ratio. Steps are global (not per epoch), 1-based in the
// trainer; step counts below warmup_steps scale lr linearly.
double lr_at(long long step, long long steps_per_epoch, const TrainConfig& cfg);

// Flat Adam state across a fixed list of parameter views.
struct OptimizerState {
  Eigen::VectorXd m;
  Eigen::VectorXd v;
  long long step = 0;
};

OptimizerState make_adam_state(const std::vector<ParamView>& views);

// Standard bias-corrected Adam, eps = 1e-8. Views must match the state
// layout; frozen[i] skips view i entirely (params and moments untouched).
// Non-finite gradients abort with RuntimeError.
void adam_step(const std::vector<ParamView>& params, const std::vector<ParamView>& grads,
               OptimizerState& state, double lr, const TrainConfig& cfg,
               const std::vector<char>* frozen = nullptr);

// ||pred - target|| / ||target|| over all channels and pixels.
double l2_relative_error(const Field& pred, const Field& target);

// Task loss plus weighted sparsity: both addends are reported separately
// everywhere they are logged.
double total_loss(double task, double sparsity, double lambda);

struct EpochMetrics {
  int epoch = 0;
  double train_loss = 0.0;
  double train_task = 0.0;
  double train_sparsity = 0.0;
  double val_l2re = 0.0;
  double val_l2re_topk = 0.0;  // mixture models only; else equals val_l2re
  double lr_last = 0.0;
  long long clip_events = 0;
  std::vector<double> mean_gate;  // one entry per expert, val-set average
};

struct FitResult {
  std::vector<EpochMetrics> epochs;
  double final_val_l2re = 0.0;
  long long steps = 0;
};

// Trains in place for `epochs` epochs. The dataset splits 90/10 into
// train/validation by whole trajectories (a dataset with a single
// trajectory validates on the training data). Batches follow a per-epoch
// permutation from the "shuffle" RNG stream; everything is deterministic
// given (seed, config, data). metrics, if given, receives one JSON line
// per epoch. NaN loss aborts with RuntimeError.
FitResult fit_dense(DenseFno& model, const Dataset& data, const TrainConfig& cfg, int epochs,
                    std::ostream* metrics = nullptr);
FitResult fit_moe(FreqMoe& model, const Dataset& data, const TrainConfig& cfg, int epochs,
                  std::ostream* metrics = nullptr);

}  // namespace freqmoe
