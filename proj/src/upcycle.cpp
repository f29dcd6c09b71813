// Copyright (c) 2026 the freqmoe authors
// SPDX-License-Identifier: Apache-2.0

#include "freqmoe/upcycle.hpp"

#include <cmath>

#include "freqmoe/errors.hpp"

namespace freqmoe {

FreqMoe upcycle(const DenseFno& base, const UpcycleSpec& spec) {
  base.config.validate();
  spec.layout.validate(base.config.grid);
  if (base.config.modes1 != spec.layout.chunk1 || base.config.modes2 != spec.layout.chunk2)
    throw ConfigError(
        "upcycle: base model modes must equal the band chunk size (pretrained window becomes "
        "band (0,0))");
  if (spec.n_experts < 0 || spec.n_experts > spec.layout.num_bands() - 1)
    throw ConfigError("upcycle: expert count must lie in [0, J1*J2-1]");
  if (spec.rank < 1 || spec.rank > base.config.width)
    throw ConfigError("upcycle: rank must lie in [1, width]");
  if (!(spec.tau > 0.0)) throw ConfigError("upcycle: gate temperature must be positive");
  if (spec.top_k < 0 || spec.top_k > spec.n_experts)
    throw ConfigError("upcycle: top_k must lie in [0, N]");

  FreqMoe m;
  m.config = base.config;
  m.layout = spec.layout;
  m.rank = spec.rank;
  m.alpha = spec.alpha;
  m.top_k = spec.top_k;
  m.expert_bands =
      spec.bands.empty() ? default_expert_bands(spec.layout, spec.n_experts) : spec.bands;
  if (static_cast<int>(m.expert_bands.size()) != spec.n_experts)
    throw ConfigError("upcycle: explicit band list size must equal n_experts");

  m.lift = base.lift;
  m.proj = base.proj;

  Rng rng = Rng::stream(spec.seed, "upcycle");
  const int h = base.config.width;
  const int p12 = spec.layout.chunk1 * spec.layout.chunk2;
  const double a_scale = 1.0 / std::sqrt(static_cast<double>(spec.rank));
  m.layers.resize(base.layers.size());
  for (std::size_t l = 0; l < base.layers.size(); ++l) {
    auto& layer = m.layers[l];
    layer.base = base.layers[l].spectral;
    layer.pointwise = base.layers[l].pointwise;
    layer.gates.tau = spec.tau;
    layer.gates.w = Eigen::MatrixXd::Zero(spec.n_experts, h);
    layer.experts.resize(static_cast<std::size_t>(spec.n_experts));
    for (auto& ex : layer.experts) {
      for (int blk = 0; blk < 2; ++blk) {
        auto& a = ex.A[static_cast<std::size_t>(blk)];
        a.resize(spec.rank, h);
        for (Eigen::Index j = 0; j < a.cols(); ++j)
          for (Eigen::Index i = 0; i < a.rows(); ++i)
            a(i, j) = std::complex<double>(rng.normal() * a_scale, rng.normal() * a_scale);
        ex.B[static_cast<std::size_t>(blk)].assign(static_cast<std::size_t>(p12),
                                                   Eigen::MatrixXcd::Zero(h, spec.rank));
      }
    }
  }
  m.validate();
  return m;
}

UpcycleReport verify_upcycle(const DenseFno& base, const FreqMoe& moe, int probes,
                             std::uint64_t seed) {
  base.config.validate();
  moe.validate();
  if (base.config.width != moe.config.width || base.config.layers != moe.config.layers ||
      base.config.grid != moe.config.grid || base.config.in_channels != moe.config.in_channels ||
      base.config.out_channels != moe.config.out_channels)
    throw ConfigError("verify_upcycle: architecture mismatch between base and mixture models");
  if (base.config.modes1 != moe.layout.chunk1 || base.config.modes2 != moe.layout.chunk2)
    throw ConfigError("verify_upcycle: base mode window does not equal the mixture chunk size");

  UpcycleReport rep;
  Rng rng = Rng::stream(seed, "verify");
  for (int p = 0; p < probes; ++p) {
    Field x(base.config.in_channels, base.config.grid);
    for (Eigen::Index i = 0; i < x.data.size(); ++i) x.data.data()[i] = rng.normal();
    const Field yd = fno_forward(base, x);
    const Field ym = moe_forward_train(moe, x, nullptr, /*mask_experts=*/true);
    rep.max_masked_deviation =
        std::max(rep.max_masked_deviation, (yd.data - ym.data).cwiseAbs().maxCoeff());
  }
  rep.delta_norms.resize(moe.layers.size());
  for (std::size_t l = 0; l < moe.layers.size(); ++l) {
    rep.delta_norms[l].resize(moe.layers[l].experts.size(), 0.0);
    for (std::size_t e = 0; e < moe.layers[l].experts.size(); ++e) {
      double sq = 0.0;
      for (int blk = 0; blk < 2; ++blk)
        for (int p = 0; p < moe.layers[l].base.mode_count(); ++p)
          sq += expert_delta_mode(moe.layers[l].experts[e], moe.alpha, blk, p).squaredNorm();
      rep.delta_norms[l][e] = std::sqrt(sq);
    }
  }
  rep.base_params = count_params(base.config);
  rep.moe_total_params = count_params(moe);
  rep.moe_active_params = active_param_count(moe, moe.top_k);
  return rep;
}

}  // namespace freqmoe
