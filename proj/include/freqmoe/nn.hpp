// Copyright (c) 2026 the freqmoe authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "freqmoe/bands.hpp"
#include "freqmoe/field.hpp"
#include "freqmoe/rng.hpp"

namespace freqmoe {

// Fourier neural operator, dense variant:
//   y = Q( L_n( ... L_1( P(x) ) ) ),  L(z) = gelu( K(z) + W z + b ),
//   K(z) = irfft2( R . rfft2(z) )  restricted to the retained mode window.
// All math is double precision; every op is deterministic (no threads, no
// reduction reordering), so repeated runs are bit-identical.

struct FnoConfig {
  int grid = 64;
  int in_channels = 1;
  int out_channels = 1;
  int width = 32;
  int layers = 4;
  int modes1 = 4;  // retained rows per corner block
  int modes2 = 4;  // retained columns

  void validate() const;
};

// Pointwise affine map: out = W z + b applied at every pixel.
struct AffineParams {
  Eigen::MatrixXd W;  // out x in
  Eigen::VectorXd b;  // out
};

// Per-mode complex mixing matrices for both Hermitian corner blocks.
// blocks[blk][m] is H_out x H_in for mode m = m2 * modes1 + m1.
struct SpectralWeights {
  std::array<std::vector<Eigen::MatrixXcd>, 2> blocks;
  int modes1 = 0;
  int modes2 = 0;

  int mode_count() const { return modes1 * modes2; }
  Eigen::MatrixXcd& mode(int blk, int m1, int m2) {
    return blocks[static_cast<std::size_t>(blk)][static_cast<std::size_t>(m2 * modes1 + m1)];
  }
  const Eigen::MatrixXcd& mode(int blk, int m1, int m2) const {
    return blocks[static_cast<std::size_t>(blk)][static_cast<std::size_t>(m2 * modes1 + m1)];
  }
};

struct DenseFnoLayer {
  SpectralWeights spectral;
  AffineParams pointwise;
};

struct DenseFno {
  FnoConfig config;
  AffineParams lift;
  std::vector<DenseFnoLayer> layers;
  AffineParams proj;
};

// Saved intermediates for one layer's backward pass.
struct FnoLayerTape {
  Field z_in;
  Spectrum z_hat;
  Field pre_act;
};

struct FnoTape {
  Field input;
  std::vector<FnoLayerTape> layers;
  Field features;  // output of the last Fourier layer, input to proj
};

// exact gelu (erf form) and its derivative
double gelu(double x);
double gelu_grad(double x);

Field affine_apply(const AffineParams& p, const Field& z);

// out.col(k) += R_m * in.col(k) over the modes1 x modes2 window of both
// corner blocks: block 0 rows start at row0_blk0 ascending, block 1 rows at
// row0_blk1 ascending, columns at col0. The dense layer anchors the window
// at (0, S - modes1, 0); the mixture base band reuses this exact code path
// so dense and mixture base outputs agree bitwise.
void apply_mode_window(const SpectralWeights& R, const Spectrum& in, Spectrum& out,
                       int row0_blk0, int row0_blk1, int col0);

// Accumulates dR[blk][m] += ds_k zhat_k^H and dzhat.col(k) += R_m^H ds.col(k)
// over the same window. Gradient convention for complex parameters:
// g = dL/dRe + i dL/dIm.
void apply_mode_window_backward(const SpectralWeights& R, const Spectrum& z_hat,
                                const Spectrum& ds, int row0_blk0, int row0_blk1, int col0,
                                SpectralWeights& dR, Spectrum& dz_hat);

Field fno_forward(const DenseFno& m, const Field& x, FnoTape* tape = nullptr);

// Accumulates parameter gradients into `grads` (shaped like `m`, zero
// initialized by the caller) and returns dL/dx.
Field fno_backward(const DenseFno& m, const FnoTape& tape, const Field& dy, DenseFno& grads);

DenseFno init_dense_fno(const FnoConfig& cfg, Rng& rng);
// Correctly shaped, zero-valued model (deserialization target).
DenseFno alloc_dense_fno(const FnoConfig& cfg);
DenseFno zeros_like(const DenseFno& m);

// Spectral weight allocation shared with the mixture module.
SpectralWeights make_spectral(int width, int modes1, int modes2);

// Flat double views over every trainable scalar (complex entries expose
// their re/im pair). Order is the serialization order; `name` identifies the
// owning logical tensor for freezing filters.
struct ParamView {
  std::string name;
  double* data;
  Eigen::Index size;
};
std::vector<ParamView> param_views(DenseFno& m);

// Named logical tensors in serialization order. A tensor may be backed by
// several contiguous buffers (one per stored mode matrix); shapes list dims
// slowest-varying first.
struct TensorRecord {
  std::string name;
  std::string dtype;  // "f64" or "c128"
  std::vector<long long> shape;
  std::vector<std::pair<double*, Eigen::Index>> pieces;  // piece sizes in doubles

  long long elements() const;
  long long doubles() const;
};
std::vector<TensorRecord> tensor_records(DenseFno& m);

// Appends the two corner-block records of one spectral weight; shared with
// the mixture module's record builder.
void spectral_records(const std::string& prefix, SpectralWeights& w,
                      std::vector<TensorRecord>& out);

// Analytic counters. Parameter counts are in real scalars (a complex entry
// counts as two).
long long spectral_param_count(int blocks, int width, int modes1, int modes2, int layers);
long long affine_param_count(int out, int in);
long long count_params(const FnoConfig& cfg);

struct FlopBreakdown {
  long long spectral = 0;
  long long fft = 0;
  long long pointwise = 0;
  long long activation = 0;
  long long lift_proj = 0;
  long long gating = 0;  // zero for dense models

  long long total() const { return spectral + fft + pointwise + activation + lift_proj + gating; }
};

// Cost model for one forward pass on one sample. A complex multiply-add is
// 8 flops; one 2D transform of one channel is 10 * S^2 * log2(S).
FlopBreakdown count_flops_dense(const FnoConfig& cfg);

long long fft2_flop_count(int grid);

}  // namespace freqmoe
