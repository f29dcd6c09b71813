// Copyright (c) 2026 the freqmoe authors
// SPDX-License-Identifier: Apache-2.0

#include "freqmoe/evalx.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <sstream>

#include "freqmoe/errors.hpp"
#include "freqmoe/train.hpp"
#include "freqmoe/upcycle.hpp"

namespace freqmoe {

// The functors hold a pointer; the model must outlive them.
ForwardFn make_forward(const DenseFno& m) {
  const DenseFno* p = &m;
  return [p](const Field& x) { return fno_forward(*p, x); };
}

ForwardFn make_forward(const FreqMoe& m, int top_k) {
  const FreqMoe* p = &m;
  return [p, top_k](const Field& x) { return moe_forward_infer(*p, x, top_k); };
}

EvalReport eval_single_step(const ForwardFn& forward, const Dataset& ds) {
  if (ds.inputs.empty()) throw DataError("cannot evaluate an empty dataset");
  const int channels = static_cast<int>(ds.targets.front().data.rows());

  EvalReport rep;
  rep.per_channel.assign(channels, 0.0);
  for (std::size_t i = 0; i < ds.inputs.size(); ++i) {
    const Field pred = forward(ds.inputs[i]);
    const Field& tgt = ds.targets[i];
    rep.per_sample.push_back(l2_relative_error(pred, tgt));
    for (int c = 0; c < channels; ++c) {
      const double tn = tgt.data.row(c).norm();
      if (tn == 0.0) throw DataError("relative error undefined: zero-norm target channel");
      rep.per_channel[c] += (pred.data.row(c) - tgt.data.row(c)).norm() / tn;
    }
  }

  const double n = static_cast<double>(rep.per_sample.size());
  for (double& v : rep.per_channel) v /= n;
  double sum = 0.0;
  double sum_sq = 0.0;
  for (double v : rep.per_sample) {
    sum += v;
    sum_sq += v * v;
  }
  rep.mean = sum / n;
  rep.stddev = std::sqrt(std::max(0.0, sum_sq / n - rep.mean * rep.mean));
  return rep;
}

RolloutResult rollout(const ForwardFn& forward, const Field& initial,
                      const std::vector<Field>& truth) {
  if (truth.empty()) throw DataError("rollout needs at least one ground-truth state");
  RolloutResult res;
  Field state = initial;
  for (const Field& tgt : truth) {
    Field pred = forward(state);
    if (!pred.data.allFinite()) {
      res.blew_up = true;
      break;
    }
    res.errors.push_back(l2_relative_error(pred, tgt));
    state = std::move(pred);
  }
  return res;
}

GateMap gate_activation_map(const FreqMoe& m, const Dataset& ds, int top_k) {
  if (ds.inputs.empty()) throw DataError("cannot map gates over an empty dataset");
  GateMap map;
  map.has_gates = true;
  map.bands1 = m.layout.bands1;
  map.bands2 = m.layout.bands2;
  map.mean_gate = Eigen::MatrixXd::Zero(map.bands1, map.bands2);
  map.active_freq = Eigen::MatrixXd::Zero(map.bands1, map.bands2);

  long long observations = 0;  // one per (sample, layer)
  for (const Field& x : ds.inputs) {
    std::vector<std::vector<int>> active;
    std::vector<Eigen::VectorXd> gates;
    (void)moe_forward_infer(m, x, top_k, &active, &gates);
    for (std::size_t l = 0; l < gates.size(); ++l) {
      for (int e = 0; e < m.num_experts(); ++e) {
        const auto [i1, i2] = m.layout.band_coords(m.expert_bands[e]);
        map.mean_gate(i1, i2) += gates[l](e);
      }
      for (int e : active[l]) {
        const auto [i1, i2] = m.layout.band_coords(m.expert_bands[e]);
        map.active_freq(i1, i2) += 1.0;
      }
      ++observations;
    }
  }
  map.mean_gate /= static_cast<double>(observations);
  map.active_freq /= static_cast<double>(observations);

  // The base band bypasses the router and is always on.
  map.mean_gate(0, 0) = 1.0;
  map.active_freq(0, 0) = 1.0;
  return map;
}

GateMap gate_activation_map_dense() { return GateMap{}; }

namespace {

double best_of_five_ms(const ForwardFn& forward, const Field& x) {
  (void)forward(x);  // warm up
  double best = std::numeric_limits<double>::infinity();
  for (int rep = 0; rep < 5; ++rep) {
    const auto t0 = std::chrono::steady_clock::now();
    const Field y = forward(x);
    const auto t1 = std::chrono::steady_clock::now();
    if (!y.data.allFinite()) throw RuntimeError("timing forward produced non-finite values");
    best = std::min(best, std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  return best;
}

}  // namespace

std::vector<BenchRow> bench_modes(const std::vector<int>& mode_list, int chunk, int top_k,
                                  int rank, const FnoConfig& base_cfg, bool time_it) {
  if (chunk <= 0) throw ConfigError("chunk size must be positive");
  if (top_k < 0) throw ConfigError("top-k must be non-negative");

  std::vector<BenchRow> rows;
  for (int modes : mode_list) {
    if (modes <= 0 || modes % chunk != 0)
      throw ConfigError("benchmark mode count " + std::to_string(modes) +
                        " is not a positive multiple of the chunk size " + std::to_string(chunk));

    FnoConfig dense_cfg = base_cfg;
    dense_cfg.modes1 = dense_cfg.modes2 = modes;
    dense_cfg.validate();
    FnoConfig chunk_cfg = base_cfg;
    chunk_cfg.modes1 = chunk_cfg.modes2 = chunk;

    const int grid_side = modes / chunk;
    BandLayout layout;
    layout.chunk1 = layout.chunk2 = chunk;
    layout.bands1 = layout.bands2 = grid_side;
    layout.validate(base_cfg.grid);
    const int n_experts = layout.num_bands() - 1;
    const int k = std::min(top_k, n_experts);

    const FlopBreakdown dense = count_flops_dense(dense_cfg);
    const FlopBreakdown moe = count_flops_moe(chunk_cfg, layout, rank, k);

    BenchRow row;
    row.modes = modes;
    row.dense_flops = dense.total();
    row.dense_spectral_flops = dense.spectral;
    row.moe_flops = moe.total();
    row.moe_expert_flops = moe.spectral;
    row.moe_gating_flops = moe.gating;
    row.dense_params = count_params(dense_cfg);

    UpcycleSpec spec;
    spec.n_experts = n_experts;
    spec.rank = rank;
    spec.layout = layout;
    spec.top_k = k;
    spec.seed = 0;
    const DenseFno chunk_shell = alloc_dense_fno(chunk_cfg);
    const FreqMoe mixture = upcycle(chunk_shell, spec);
    row.moe_active_params = active_param_count(mixture, k);

    if (time_it) {
      Rng rng = Rng::stream(0, "verify");
      Field x(base_cfg.in_channels, base_cfg.grid);
      for (Eigen::Index i = 0; i < x.data.size(); ++i) x.data.data()[i] = rng.normal();
      DenseFno dense_model = init_dense_fno(dense_cfg, rng);
      FreqMoe timed = mixture;
      for (auto& layer : timed.layers)
        for (auto& expert : layer.experts)
          for (int blk = 0; blk < 2; ++blk)
            for (auto& b : expert.B[blk])
              b = Eigen::MatrixXcd::NullaryExpr(b.rows(), b.cols(), [&rng]() {
                return std::complex<double>(rng.normal(), rng.normal());
              });
      row.dense_time_ms = best_of_five_ms(make_forward(dense_model), x);
      row.moe_time_ms = best_of_five_ms(make_forward(timed, k), x);
    }
    rows.push_back(row);
  }
  return rows;
}

std::string bench_rows_csv(const std::vector<BenchRow>& rows) {
  std::ostringstream out;
  out << "modes,dense_flops,dense_spectral_flops,moe_flops,moe_expert_flops,"
         "moe_gating_flops,dense_params,moe_active_params,dense_time_ms,moe_time_ms\n";
  for (const BenchRow& r : rows) {
    out << r.modes << ',' << r.dense_flops << ',' << r.dense_spectral_flops << ',' << r.moe_flops
        << ',' << r.moe_expert_flops << ',' << r.moe_gating_flops << ',' << r.dense_params << ','
        << r.moe_active_params << ',' << r.dense_time_ms << ',' << r.moe_time_ms << '\n';
  }
  return out.str();
}

}  // namespace freqmoe
