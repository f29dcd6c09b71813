// Copyright (c) 2026 the freqmoe authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <utility>

#include "freqmoe/field.hpp"

namespace freqmoe {

// Partition of the retained spectrum into a J1 x J2 grid of frequency bands,
// each covering chunk1 x chunk2 modes in both Hermitian corner blocks.
// Band (i1, i2) owns
//   block 0 rows [i1*P1, (i1+1)*P1)            (non-negative k1)
//   block 1 rows [S-(i1+1)*P1, S-i1*P1)        (negative k1, mirrored)
//   columns     [i2*P2, (i2+1)*P2)
// of the stored half spectrum. Band (0, 0) is the base band.
struct BandLayout {
  int chunk1 = 4;
  int chunk2 = 4;
  int bands1 = 1;
  int bands2 = 1;

  int num_bands() const { return bands1 * bands2; }
  // Row-major band id: id = i1 * bands2 + i2.
  int band_id(int i1, int i2) const { return i1 * bands2 + i2; }
  std::pair<int, int> band_coords(int id) const { return {id / bands2, id % bands2}; }

  // Retained window per corner block.
  int modes1() const { return chunk1 * bands1; }
  int modes2() const { return chunk2 * bands2; }

  // Throws ConfigError unless both corner blocks fit the stored half
  // spectrum of an S x S grid without overlap.
  void validate(int grid) const;
};

// One band's coefficients: values(c, slot) with slot = blk*P1*P2 + p2*P1 + p1,
// blk 0 the non-negative-k1 block, blk 1 the mirrored block.
struct BandBlock {
  Eigen::MatrixXcd values;  // channels x 2*P1*P2
  int chunk1 = 0;
  int chunk2 = 0;
};

inline int band_slot(int chunk1, int chunk2, int blk, int p1, int p2) {
  return blk * chunk1 * chunk2 + p2 * chunk1 + p1;
}

// Global (k1, k2) of slot (blk, p1, p2) of band (i1, i2) on an S grid.
std::pair<int, int> band_mode_coords(const BandLayout& layout, int grid, int band,
                                     int blk, int p1, int p2);

BandBlock extract_band(const Spectrum& s, int band, const BandLayout& layout);
void scatter_band(const BandBlock& block, int band, const BandLayout& layout, Spectrum& s);

}  // namespace freqmoe
