// Copyright (c) 2026 the freqmoe authors
// SPDX-License-Identifier: Apache-2.0

#include "freqmoe/fft.hpp"

#include <cmath>
#include <complex>

#include "freqmoe/errors.hpp"

namespace freqmoe {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

// Iterative radix-2 Cooley-Tukey; tw holds n/2 twiddles exp(sign*2*pi*i*j/n).
void fft_radix2(std::complex<double>* a, int n, const std::vector<std::complex<double>>& tw) {
  for (int i = 1, j = 0; i < n; ++i) {
    int bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (int len = 2; len <= n; len <<= 1) {
    const int half = len >> 1;
    const int step = n / len;
    for (int i = 0; i < n; i += len) {
      for (int j = 0; j < half; ++j) {
        const std::complex<double> w = tw[static_cast<std::size_t>(j) * step];
        const std::complex<double> u = a[i + j];
        const std::complex<double> v = a[i + j + half] * w;
        a[i + j] = u + v;
        a[i + j + half] = u - v;
      }
    }
  }
}

std::vector<std::complex<double>> twiddles(int n, int sign) {
  std::vector<std::complex<double>> tw(static_cast<std::size_t>(n) / 2);
  for (int j = 0; j < n / 2; ++j)
    tw[static_cast<std::size_t>(j)] = std::polar(1.0, sign * kTwoPi * j / n);
  return tw;
}

void require_grid(int grid) {
  if (!is_power_of_two(grid))
    throw ConfigError("fft: grid size must be a power of two, got " + std::to_string(grid));
}

}  // namespace

bool is_power_of_two(int n) { return n >= 2 && (n & (n - 1)) == 0; }

void fft2_inplace(Eigen::MatrixXcd& m, int sign) {
  const int n = static_cast<int>(m.rows());
  require_grid(n);
  const auto tw = twiddles(n, sign);
  for (int j = 0; j < n; ++j) fft_radix2(m.col(j).data(), n, tw);
  m.transposeInPlace();
  for (int j = 0; j < n; ++j) fft_radix2(m.col(j).data(), n, tw);
  m.transposeInPlace();
}

Spectrum rfft2(const Field& f) {
  require_grid(f.grid);
  if (!f.data.allFinite()) throw DataError("rfft2: input field contains non-finite values");
  const int s = f.grid;
  Spectrum out(f.channels(), s);
  Eigen::MatrixXcd buf(s, s);
  for (int c = 0; c < f.channels(); ++c) {
    buf = f.channel(c).cast<std::complex<double>>();
    fft2_inplace(buf, -1);
    for (int k2 = 0; k2 <= s / 2; ++k2)
      for (int k1 = 0; k1 < s; ++k1) out.at(c, k1, k2) = buf(k1, k2);
  }
  return out;
}

Field irfft2(const Spectrum& sp) {
  require_grid(sp.grid);
  const int s = sp.grid;
  Field out(sp.channels(), s);
  Eigen::MatrixXcd full(s, s);
  for (int c = 0; c < sp.channels(); ++c) {
    for (int k2 = 0; k2 <= s / 2; ++k2)
      for (int k1 = 0; k1 < s; ++k1) full(k1, k2) = sp.at(c, k1, k2);
    // Hermitian mirror for the unstored half: G[k1,k2] = conj(G[-k1,-k2]).
    for (int k2 = s / 2 + 1; k2 < s; ++k2)
      for (int k1 = 0; k1 < s; ++k1)
        full(k1, k2) = std::conj(sp.at(c, (s - k1) % s, s - k2));
    fft2_inplace(full, +1);
    out.set_channel(c, full.real() / (static_cast<double>(s) * s));
  }
  return out;
}

Field rfft2_adjoint(const Spectrum& g) {
  require_grid(g.grid);
  const int s = g.grid;
  Field out(g.channels(), s);
  Eigen::MatrixXcd full = Eigen::MatrixXcd::Zero(s, s);
  for (int c = 0; c < g.channels(); ++c) {
    full.setZero();
    for (int k2 = 0; k2 <= s / 2; ++k2)
      for (int k1 = 0; k1 < s; ++k1) full(k1, k2) = g.at(c, k1, k2);
    fft2_inplace(full, +1);
    out.set_channel(c, full.real());
  }
  return out;
}

Spectrum irfft2_adjoint(const Field& g) {
  require_grid(g.grid);
  const int s = g.grid;
  const double inv = 1.0 / (static_cast<double>(s) * s);
  Spectrum out(g.channels(), s);
  Eigen::MatrixXcd buf(s, s);
  for (int c = 0; c < g.channels(); ++c) {
    buf = (g.channel(c) * inv).cast<std::complex<double>>();
    fft2_inplace(buf, -1);
    // Adjoint of Hermitian packing: interior columns also collect the
    // conjugate contribution of their mirror.
    for (int k1 = 0; k1 < s; ++k1) {
      out.at(c, k1, 0) = buf(k1, 0);
      out.at(c, k1, s / 2) = buf(k1, s / 2);
    }
    for (int k2 = 1; k2 < s / 2; ++k2)
      for (int k1 = 0; k1 < s; ++k1)
        out.at(c, k1, k2) = buf(k1, k2) + std::conj(buf((s - k1) % s, s - k2));
  }
  return out;
}

std::vector<double> radial_energy_spectrum(const Field& f) {
  const Spectrum sp = rfft2(f);
  const int s = f.grid;
  const double norm = 1.0 / (static_cast<double>(s) * s);
  const int half = s / 2;
  const int nbins =
      static_cast<int>(std::ceil(std::sqrt(2.0) * half)) + 1;
  std::vector<double> bins(static_cast<std::size_t>(nbins) + 1, 0.0);
  for (int c = 0; c < sp.channels(); ++c) {
    for (int k2 = 0; k2 <= half; ++k2) {
      // Interior k2 columns stand for themselves and their mirror.
      const double w = (k2 == 0 || k2 == half) ? 1.0 : 2.0;
      for (int k1 = 0; k1 < s; ++k1) {
        const int k1s = (k1 <= half) ? k1 : k1 - s;
        const int bin =
            static_cast<int>(std::lround(std::sqrt(double(k1s) * k1s + double(k2) * k2)));
        // Parseval with this convention: sum_x f^2 = S^-2 sum_k |F|^2.
        bins[static_cast<std::size_t>(bin)] += w * std::norm(sp.at(c, k1, k2)) * norm;
      }
    }
  }
  return bins;
}

}  // namespace freqmoe
