// Copyright (c) 2026 the freqmoe authors
// SPDX-License-Identifier: Apache-2.0

#include "freqmoe/bands.hpp"

#include <string>

#include "freqmoe/errors.hpp"

namespace freqmoe {

void BandLayout::validate(int grid) const {
  if (chunk1 < 1 || chunk2 < 1 || bands1 < 1 || bands2 < 1)
    throw ConfigError("band layout: chunk and band counts must be positive");
  // Block 0 ends at bands1*chunk1 rows; block 1 starts at S - bands1*chunk1.
  // They may not meet or cross, and columns must stay in the half spectrum.
  if (2 * modes1() > grid)
    throw ConfigError("band layout: 2*" + std::to_string(modes1()) + " rows exceed grid " +
                      std::to_string(grid));
  if (modes2() > grid / 2)
    throw ConfigError("band layout: " + std::to_string(modes2()) +
                      " columns exceed half spectrum of grid " + std::to_string(grid));
}

std::pair<int, int> band_mode_coords(const BandLayout& layout, int grid, int band,
                                     int blk, int p1, int p2) {
  const auto [i1, i2] = layout.band_coords(band);
  const int row0 = (blk == 0) ? i1 * layout.chunk1 : grid - (i1 + 1) * layout.chunk1;
  return {row0 + p1, i2 * layout.chunk2 + p2};
}

namespace {

void check_band_args(const Spectrum& s, int band, const BandLayout& layout) {
  layout.validate(s.grid);
  if (band < 0 || band >= layout.num_bands())
    throw ConfigError("band id " + std::to_string(band) + " out of range [0, " +
                      std::to_string(layout.num_bands()) + ")");
}

}  // namespace

BandBlock extract_band(const Spectrum& s, int band, const BandLayout& layout) {
  check_band_args(s, band, layout);
  const int p1n = layout.chunk1, p2n = layout.chunk2;
  BandBlock out;
  out.chunk1 = p1n;
  out.chunk2 = p2n;
  out.values.resize(s.channels(), 2 * p1n * p2n);
  for (int blk = 0; blk < 2; ++blk)
    for (int p2 = 0; p2 < p2n; ++p2)
      for (int p1 = 0; p1 < p1n; ++p1) {
        const auto [k1, k2] = band_mode_coords(layout, s.grid, band, blk, p1, p2);
        out.values.col(band_slot(p1n, p2n, blk, p1, p2)) =
            s.data.col(Spectrum::mode_index(s.grid, k1, k2));
      }
  return out;
}

void scatter_band(const BandBlock& block, int band, const BandLayout& layout, Spectrum& s) {
  check_band_args(s, band, layout);
  if (block.chunk1 != layout.chunk1 || block.chunk2 != layout.chunk2 ||
      block.values.rows() != s.data.rows())
    throw ConfigError("scatter_band: block shape does not match layout/spectrum");
  const int p1n = layout.chunk1, p2n = layout.chunk2;
  for (int blk = 0; blk < 2; ++blk)
    for (int p2 = 0; p2 < p2n; ++p2)
      for (int p1 = 0; p1 < p1n; ++p1) {
        const auto [k1, k2] = band_mode_coords(layout, s.grid, band, blk, p1, p2);
        s.data.col(Spectrum::mode_index(s.grid, k1, k2)) =
            block.values.col(band_slot(p1n, p2n, blk, p1, p2));
      }
}

}  // namespace freqmoe
