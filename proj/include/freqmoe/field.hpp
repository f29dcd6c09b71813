// Copyright (c) 2026 the freqmoe authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Dense>
#include <complex>

namespace freqmoe {

// Real multichannel field sampled on an S x S periodic grid over [0, 2*pi)^2.
// data(c, p) holds channel c at flat pixel p = i1 * S + i0 (axis 0 fastest),
// so pointwise channel mixes are single matrix products on `data` and a
// channel view is a plain column-major S x S reshape of one row.
struct Field {
  Eigen::MatrixXd data;  // channels x S*S
  int grid = 0;

  Field() = default;
  Field(int channels, int grid_size)
      : data(Eigen::MatrixXd::Zero(channels, static_cast<Eigen::Index>(grid_size) * grid_size)),
        grid(grid_size) {}

  int channels() const { return static_cast<int>(data.rows()); }

  double& at(int c, int i0, int i1) { return data(c, static_cast<Eigen::Index>(i1) * grid + i0); }
  double at(int c, int i0, int i1) const {
    return data(c, static_cast<Eigen::Index>(i1) * grid + i0);
  }

  // Copy of channel c as an S x S matrix indexed (i0, i1).
  Eigen::MatrixXd channel(int c) const {
    Eigen::MatrixXd m(grid, grid);
    for (int i1 = 0; i1 < grid; ++i1)
      m.col(i1) = data.row(c).segment(static_cast<Eigen::Index>(i1) * grid, grid).transpose();
    return m;
  }

  void set_channel(int c, const Eigen::MatrixXd& m) {
    for (int i1 = 0; i1 < grid; ++i1)
      data.row(c).segment(static_cast<Eigen::Index>(i1) * grid, grid) = m.col(i1).transpose();
  }
};

// Half spectrum of a real field: Fourier modes k1 in [0, S), k2 in [0, S/2]
// (the k2 > S/2 half is the Hermitian mirror and is not stored).
// data(c, m) with flat mode m = k2 * S + k1, matching a column-major
// S x (S/2+1) reshape per channel.
struct Spectrum {
  Eigen::MatrixXcd data;  // channels x S*(S/2+1)
  int grid = 0;

  Spectrum() = default;
  Spectrum(int channels, int grid_size)
      : data(Eigen::MatrixXcd::Zero(channels,
                                    static_cast<Eigen::Index>(grid_size) * (grid_size / 2 + 1))),
        grid(grid_size) {}

  int channels() const { return static_cast<int>(data.rows()); }
  int mode_cols() const { return grid / 2 + 1; }

  static Eigen::Index mode_index(int grid_size, int k1, int k2) {
    return static_cast<Eigen::Index>(k2) * grid_size + k1;
  }

  std::complex<double>& at(int c, int k1, int k2) { return data(c, mode_index(grid, k1, k2)); }
  std::complex<double> at(int c, int k1, int k2) const {
    return data(c, mode_index(grid, k1, k2));
  }
};

}  // namespace freqmoe
