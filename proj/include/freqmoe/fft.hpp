// Copyright (c) 2026 the freqmoe authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <vector>

#include "freqmoe/field.hpp"

namespace freqmoe {

// 2D FFT of real fields with fixed conventions:
//   * forward is unnormalized, kernel exp(-i k.x): DC of a constant field c
//     equals c * S^2,
//   * inverse carries the full 1/S^2,
//   * grids must be powers of two (radix-2 transform), else ConfigError,
//   * non-finite input raises DataError.
// irfft2 Hermitian-packs the stored half spectrum and takes the real part,
// so it is defined (and real-linear) for arbitrary half-spectrum contents,
// not only those produced by rfft2.
Spectrum rfft2(const Field& f);
Field irfft2(const Spectrum& s);

// Exact adjoints of the linear maps above under the real pairing
// <x, y> = sum_i x_i y_i (complex entries contribute re*re + im*im).
// Used by the hand-written backward passes; verified against the
// inner-product identity in tests.
Field rfft2_adjoint(const Spectrum& g);
Spectrum irfft2_adjoint(const Field& g);

// In-place complex 2D FFT on a square matrix; sign -1 forward, +1 inverse,
// both unnormalized. Exposed for tests and the PDE solver.
void fft2_inplace(Eigen::MatrixXcd& m, int sign);

// Energy binned by integer radius round(|k|), summed over channels, with the
// Hermitian mirror counted. Normalized so the bins sum to sum_x f(x)^2
// (Parseval). A pure sine at wavenumber k lands in bin k.
std::vector<double> radial_energy_spectrum(const Field& f);

bool is_power_of_two(int n);

}  // namespace freqmoe
