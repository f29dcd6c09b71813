// Copyright (c) 2026 the freqmoe authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "freqmoe/nn.hpp"

namespace freqmoe {

// Frequency-band mixture of experts on top of the dense FNO skeleton.
// Per Fourier layer the retained spectrum is split into a band grid; the
// base band (0,0) goes through the shared chunk-sized weights R ungated,
// and each expert band i goes through R + Delta_i scaled by a per-band
// sigmoid gate. Bands without an expert are zeroed.
//
// Training forward activates all experts; inference activates the top-K by
// gate value. Expert deltas are low-rank: Delta[blk][mode] = alpha *
// B[blk][mode] * A[blk] with A (r x H) shared across the expert's modes.

struct LoraFactors {
  std::array<Eigen::MatrixXcd, 2> A;               // r x H per corner block
  std::array<std::vector<Eigen::MatrixXcd>, 2> B;  // H x r per mode, m1 fastest
};

struct GateParams {
  Eigen::MatrixXd w;  // experts x width
  double tau = 1.0;
};

struct MoeLayer {
  SpectralWeights base;  // chunk-sized window, shared by every band
  std::vector<LoraFactors> experts;
  GateParams gates;
  AffineParams pointwise;
};

struct FreqMoe {
  FnoConfig config;  // modes1/modes2 hold the chunk (base window) size
  BandLayout layout;
  std::vector<int> expert_bands;  // band id per expert; never the base band
  int rank = 4;
  double alpha = 1.0;
  int top_k = 2;

  AffineParams lift;
  std::vector<MoeLayer> layers;
  AffineParams proj;

  int num_experts() const { return static_cast<int>(expert_bands.size()); }
  void validate() const;
};

// Default expert placement: the first n non-base bands in ascending
// row-major band-id order.
std::vector<int> default_expert_bands(const BandLayout& layout, int n);

// Gate featurization: per-channel mean magnitude of the band's complex
// coefficients. Phase-invariant; a band holding a single coefficient 3+4i
// in one channel yields 5/(2*P1*P2) for that channel.
Eigen::VectorXd band_features(const BandBlock& block);

double sigmoid(double x);

// Gate values for one layer given the input spectrum. Returns features
// (width x N), logits and gates (N).
struct GateEval {
  Eigen::MatrixXd features;
  Eigen::VectorXd logits;
  Eigen::VectorXd gates;
};
GateEval eval_gates(const FreqMoe& m, const MoeLayer& layer, const Spectrum& z_hat);

// Effective expert weights R + Delta_e for one layer, materialized densely.
SpectralWeights materialize_expert(const FreqMoe& m, int layer, int expert);
// Delta alone for one mode (rank/zero-init checks, verification reports).
Eigen::MatrixXcd expert_delta_mode(const LoraFactors& f, double alpha, int blk, int mode_flat);

// Expert indices ranked by gate value, largest first, ties broken by
// ascending band id; the first k are the active set (returned ascending).
std::vector<int> top_k_experts(const Eigen::VectorXd& gates, const std::vector<int>& bands,
                               int k);

struct MoeLayerTape {
  Field z_in;
  Spectrum z_hat;
  Field pre_act;
  bool masked = false;
  Eigen::MatrixXd features;                       // width x N
  Eigen::VectorXd logits, gates;                  // N
  std::vector<Eigen::MatrixXcd> expert_pre_gate;  // per expert, width x 2*P1*P2
};

struct MoeTape {
  Field input;
  std::vector<MoeLayerTape> layers;
  Field features;
  // gates(l, e); zero rows when the layer ran masked.
  Eigen::MatrixXd gates;
};

// Training forward (all experts active, outputs scaled by their gates).
// mask_experts simulates the w -> -inf limit: expert contributions and
// gates are exactly zero and no gate gradients exist (burn-in mode).
Field moe_forward_train(const FreqMoe& m, const Field& x, MoeTape* tape = nullptr,
                        bool mask_experts = false);

// Inference forward: base band plus the top-k experts by gate value.
// k = 0 is base-only; k = N reproduces the training forward bitwise.
// active_sets, if given, receives one ascending index list per layer.
Field moe_forward_infer(const FreqMoe& m, const Field& x, int k,
                        std::vector<std::vector<int>>* active_sets = nullptr,
                        std::vector<Eigen::VectorXd>* gate_log = nullptr);

// Mean over batch (and over layers) of per-sample summed gate values;
// strictly inside (0, N) for nonempty gates.
double sparsity_loss(const std::vector<Eigen::MatrixXd>& batch_gates);

// Reverse mode through the training forward. gate_extra(l, e) adds an
// external dL/dgate term (the sparsity loss); pass a zero matrix if unused.
// Gradients accumulate into `grads`; returns dL/dx.
Field moe_backward(const FreqMoe& m, const MoeTape& tape, const Field& dy,
                   const Eigen::MatrixXd& gate_extra, FreqMoe& grads);

FreqMoe zeros_like(const FreqMoe& m);
std::vector<ParamView> param_views(FreqMoe& m);
std::vector<TensorRecord> tensor_records(FreqMoe& m);

// Real-parameter counters (complex scalars count twice).
long long lora_param_count(int rank, int width, int chunk1, int chunk2);
long long count_params(const FreqMoe& m);
long long active_param_count(const FreqMoe& m, int k);
// Spectral weights only: base window + k experts' factors, all layers.
long long active_spectral_param_count(const FreqMoe& m, int k);

// Cost of one inference forward with k active experts per layer. The
// expert path depends only on chunk size, width, rank and k; gating is
// per-band constant at fixed chunk, hence exactly linear in J1*J2.
FlopBreakdown count_flops_moe(const FnoConfig& cfg, const BandLayout& layout, int rank, int k);

}  // namespace freqmoe
