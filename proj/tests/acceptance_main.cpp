// Copyright (c) 2026 the freqmoe authors
// SPDX-License-Identifier: Apache-2.0

// Release gate: one [PASS]/[FAIL] line per criterion, nonzero exit when any
// criterion fails. Every check is self-contained and deterministic.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <complex>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include <Eigen/SVD>

#include "freqmoe/bands.hpp"
#include "freqmoe/errors.hpp"
#include "freqmoe/evalx.hpp"
#include "freqmoe/fft.hpp"
#include "freqmoe/io.hpp"
#include "freqmoe/moe.hpp"
#include "freqmoe/nn.hpp"
#include "freqmoe/pde.hpp"
#include "freqmoe/rng.hpp"
#include "freqmoe/train.hpp"
#include "freqmoe/upcycle.hpp"

using namespace freqmoe;
namespace fs = std::filesystem;

namespace {

struct Ctx {
  std::string note;  // first failure reason
  bool ok = true;

  void expect(bool cond, const std::string& what) {
    if (!cond && ok) {
      ok = false;
      note = what;
    }
  }
};

Field random_field(int channels, int grid, Rng& rng) {
  Field f(channels, grid);
  for (Eigen::Index i = 0; i < f.data.size(); ++i) f.data.data()[i] = rng.normal();
  return f;
}

FnoConfig small_cfg() {
  FnoConfig cfg;
  cfg.in_channels = 1;
  cfg.out_channels = 1;
  cfg.width = 4;
  cfg.layers = 2;
  cfg.modes1 = 2;
  cfg.modes2 = 2;
  cfg.grid = 16;
  return cfg;
}

DenseFno make_base(std::uint64_t seed) {
  Rng rng = Rng::stream(seed, "init");
  return init_dense_fno(small_cfg(), rng);
}

// 2x2 band grid over (2,2) chunks: three expert bands on a 16^2 grid.
FreqMoe make_mixture(std::uint64_t seed, bool perturb) {
  DenseFno base = make_base(seed);
  UpcycleSpec spec;
  spec.n_experts = 3;
  spec.rank = 2;
  spec.alpha = 0.7;
  spec.layout = BandLayout{2, 2, 2, 2};
  spec.top_k = 2;
  spec.tau = 1.0;
  spec.seed = seed + 1;
  FreqMoe m = upcycle(base, spec);
  if (perturb) {
    Rng rng = Rng::stream(seed + 2, "verify");
    for (auto& layer : m.layers) {
      for (auto& ex : layer.experts)
        for (int blk = 0; blk < 2; ++blk)
          for (auto& b : ex.B[static_cast<std::size_t>(blk)])
            b = 0.3 * Eigen::MatrixXcd::NullaryExpr(b.rows(), b.cols(), [&rng]() {
                  return std::complex<double>(rng.normal(), rng.normal());
                });
      for (Eigen::Index i = 0; i < layer.gates.w.size(); ++i)
        layer.gates.w.data()[i] = 0.5 * rng.normal();
    }
  }
  return m;
}

const char* group_of(const std::string& name) {
  if (name.rfind("lift", 0) == 0) return "lift";
  if (name.rfind("proj", 0) == 0) return "proj";
  if (name.find(".pointwise") != std::string::npos) return "pointwise";
  if (name.find(".base.") != std::string::npos) return "base R";
  if (name.find(".spectral.") != std::string::npos) return "base R";
  if (name.find(".A.") != std::string::npos) return "lora A";
  if (name.find(".B.") != std::string::npos) return "lora B";
  if (name.find(".gates.") != std::string::npos) return "gate w";
  return "other";
}

// Central finite differences over a strided subset of every parameter view.
template <typename Model>
void check_gradients(Model& model, const std::function<double()>& loss,
                     const std::function<void(Model&)>& analytic, Ctx& c,
                     std::set<std::string>& groups_seen) {
  Model grads = zeros_like(model);
  analytic(grads);
  auto views = param_views(model);
  auto gviews = param_views(grads);
  const double h = 1e-6;
  for (std::size_t vi = 0; vi < views.size(); ++vi) {
    groups_seen.insert(group_of(views[vi].name));
    const Eigen::Index stride = std::max<Eigen::Index>(1, views[vi].size / 7);
    for (Eigen::Index j = 0; j < views[vi].size; j += stride) {
      double& p = views[vi].data[j];
      const double keep = p;
      p = keep + h;
      const double lp = loss();
      p = keep - h;
      const double lm = loss();
      p = keep;
      const double fd = (lp - lm) / (2.0 * h);
      const double an = gviews[vi].data[j];
      const double tol = 1e-4 * std::max({1.0, std::abs(fd), std::abs(an)});
      if (std::abs(an - fd) > tol) {
        c.expect(false, "gradient mismatch in " + views[vi].name + "[" +
                            std::to_string(j) + "]: analytic " + std::to_string(an) +
                            " vs fd " + std::to_string(fd));
        return;
      }
    }
  }
}

bool criterion_gradients(Ctx& c) {
  Rng rng = Rng::stream(11, "verify");
  const Field x = random_field(1, 16, rng);
  const Field t = random_field(1, 16, rng);

  DenseFno dense = make_base(21);
  std::set<std::string> dense_groups;
  auto dense_loss = [&]() {
    const Field y = fno_forward(dense, x);
    return 0.5 * (y.data - t.data).squaredNorm();
  };
  auto dense_analytic = [&](DenseFno& g) {
    FnoTape tape;
    const Field y = fno_forward(dense, x, &tape);
    Field dy(1, 16);
    dy.data = y.data - t.data;
    fno_backward(dense, tape, dy, g);
  };
  check_gradients<DenseFno>(dense, dense_loss, dense_analytic, c, dense_groups);
  for (const char* g : {"lift", "proj", "pointwise", "base R"})
    c.expect(dense_groups.count(g) == 1, std::string("dense group not probed: ") + g);

  FreqMoe moe = make_mixture(31, true);
  const double lambda = 0.05;
  const double layers = static_cast<double>(moe.layers.size());
  std::set<std::string> moe_groups;
  auto moe_loss = [&]() {
    MoeTape tape;
    const Field y = moe_forward_train(moe, x, &tape);
    return 0.5 * (y.data - t.data).squaredNorm() + lambda * tape.gates.sum() / layers;
  };
  auto moe_analytic = [&](FreqMoe& g) {
    MoeTape tape;
    const Field y = moe_forward_train(moe, x, &tape);
    Field dy(1, 16);
    dy.data = y.data - t.data;
    const Eigen::MatrixXd gate_extra = Eigen::MatrixXd::Constant(
        tape.gates.rows(), tape.gates.cols(), lambda / layers);
    moe_backward(moe, tape, dy, gate_extra, g);
  };
  check_gradients<FreqMoe>(moe, moe_loss, moe_analytic, c, moe_groups);
  for (const char* g : {"lift", "proj", "pointwise", "base R", "lora A", "lora B", "gate w"})
    c.expect(moe_groups.count(g) == 1, std::string("mixture group not probed: ") + g);
  return c.ok;
}

bool criterion_upcycle_equivalence(Ctx& c) {
  DenseFno base = make_base(41);
  FreqMoe moe = make_mixture(41, false);  // same base seed, fresh experts

  Rng rng = Rng::stream(43, "verify");
  for (int p = 0; p < 100; ++p) {
    const Field x = random_field(1, 16, rng);
    const Field yb = fno_forward(base, x);
    const Field ym = moe_forward_train(moe, x, nullptr, true);
    const double dev = (yb.data - ym.data).cwiseAbs().maxCoeff();
    c.expect(dev == 0.0, "masked mixture deviates from base by " + std::to_string(dev));
    if (!c.ok) return false;
  }
  const UpcycleReport rep = verify_upcycle(base, moe, 16, 7);
  c.expect(rep.max_masked_deviation == 0.0, "verification report deviation nonzero");

  // Neutral gates: every gate is exactly 0.5 and every expert's pre-gate
  // output is exactly the shared base weights applied to the band, so the
  // band contribution is exactly half the base-weight band output.
  for (int p = 0; p < 4; ++p) {
    const Field x = random_field(1, 16, rng);
    MoeTape tape;
    (void)moe_forward_train(moe, x, &tape);
    for (std::size_t l = 0; l < moe.layers.size(); ++l) {
      const MoeLayer& layer = moe.layers[l];
      const MoeLayerTape& lt = tape.layers[l];
      for (int e = 0; e < moe.num_experts(); ++e) {
        c.expect(tape.gates(static_cast<Eigen::Index>(l), e) == 0.5,
                 "fresh gate is not exactly 0.5");
        const int band = moe.expert_bands[static_cast<std::size_t>(e)];
        for (int blk = 0; blk < 2; ++blk)
          for (int p2 = 0; p2 < moe.layout.chunk2; ++p2)
            for (int p1 = 0; p1 < moe.layout.chunk1; ++p1) {
              const auto [k1, k2] = band_mode_coords(moe.layout, 16, band, blk, p1, p2);
              const Eigen::Index col = Spectrum::mode_index(16, k1, k2);
              const int slot = band_slot(moe.layout.chunk1, moe.layout.chunk2, blk, p1, p2);
              const Eigen::VectorXcd expected =
                  layer.base.mode(blk, p1, p2) * lt.z_hat.data.col(col);
              const double dev =
                  (lt.expert_pre_gate[static_cast<std::size_t>(e)].col(slot) - expected)
                      .cwiseAbs()
                      .maxCoeff();
              c.expect(dev == 0.0, "expert band output is not exactly the base band output");
              if (!c.ok) return false;
            }
      }
    }
  }
  return c.ok;
}

bool criterion_forward_consistency(Ctx& c) {
  FreqMoe moe = make_mixture(51, true);
  Rng rng = Rng::stream(53, "verify");
  for (int p = 0; p < 20; ++p) {
    const Field x = random_field(1, 16, rng);
    const Field y_train = moe_forward_train(moe, x);
    const Field y_all = moe_forward_infer(moe, x, moe.num_experts());
    c.expect((y_train.data - y_all.data).cwiseAbs().maxCoeff() == 0.0,
             "k = N inference differs from the training forward");
    const Field y_base = moe_forward_infer(moe, x, 0);
    const Field y_masked = moe_forward_train(moe, x, nullptr, true);
    c.expect((y_base.data - y_masked.data).cwiseAbs().maxCoeff() == 0.0,
             "k = 0 inference differs from the base-only forward");
    if (!c.ok) return false;
  }

  // Ranking against an independent argsort oracle, ties broken by band id.
  for (int draw = 0; draw < 1000 && c.ok; ++draw) {
    const int n = 1 + draw % 8;
    Eigen::VectorXd gates(n);
    std::vector<int> bands(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      gates(i) = (draw % 3 == 0) ? 0.25 * (1 + static_cast<int>(rng.uniform() * 3))
                                 : rng.uniform();
      bands[static_cast<std::size_t>(i)] = 1 + i;
    }
    // Shuffle band ids so ties are broken by value, not position.
    for (int i = n - 1; i > 0; --i)
      std::swap(bands[static_cast<std::size_t>(i)],
                bands[static_cast<std::size_t>(static_cast<int>(rng.uniform() * (i + 1)))]);
    for (int k = 0; k <= n; ++k) {
      std::vector<int> order(static_cast<std::size_t>(n));
      for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
      std::sort(order.begin(), order.end(), [&](int a, int b) {
        if (gates(a) != gates(b)) return gates(a) > gates(b);
        return bands[static_cast<std::size_t>(a)] < bands[static_cast<std::size_t>(b)];
      });
      std::vector<int> expected(order.begin(), order.begin() + k);
      std::sort(expected.begin(), expected.end());
      const std::vector<int> got = top_k_experts(gates, bands, k);
      c.expect(got == expected, "top-k active set disagrees with the argsort oracle");
    }
  }
  return c.ok;
}

bool criterion_low_rank(Ctx& c) {
  Rng rng = Rng::stream(61, "verify");
  const int width = 8;
  const int ranks[] = {1, 2, 4, 8};
  for (int draw = 0; draw < 100 && c.ok; ++draw) {
    const int r = ranks[draw % 4];
    LoraFactors f;
    for (int blk = 0; blk < 2; ++blk) {
      f.A[static_cast<std::size_t>(blk)] =
          Eigen::MatrixXcd::NullaryExpr(r, width, [&rng]() {
            return std::complex<double>(rng.normal(), rng.normal());
          });
      f.B[static_cast<std::size_t>(blk)].assign(
          4, Eigen::MatrixXcd());
      for (auto& b : f.B[static_cast<std::size_t>(blk)])
        b = Eigen::MatrixXcd::NullaryExpr(width, r, [&rng]() {
          return std::complex<double>(rng.normal(), rng.normal());
        });
    }
    const int blk = draw % 2;
    const int mode = draw % 4;
    const Eigen::MatrixXcd delta = expert_delta_mode(f, 0.7, blk, mode);
    Eigen::JacobiSVD<Eigen::MatrixXcd> svd(delta);
    const auto& sv = svd.singularValues();
    for (int i = r; i < sv.size(); ++i)
      c.expect(sv(i) < 1e-10 * sv(0),
               "trailing singular value too large at rank " + std::to_string(r));
  }
  return c.ok;
}

bool criterion_param_efficiency(Ctx& c) {
  // Dense spectral weights for a (32,32) window, H = 32, 4 layers.
  const long long dense = spectral_param_count(2, 32, 32, 32, 4);
  c.expect(dense == 16777216LL, "dense spectral parameter count drifted");

  FnoConfig cfg;
  cfg.in_channels = 1;
  cfg.out_channels = 1;
  cfg.width = 32;
  cfg.layers = 4;
  cfg.modes1 = 4;
  cfg.modes2 = 4;
  cfg.grid = 64;
  UpcycleSpec spec;
  spec.n_experts = 2;
  spec.rank = 4;
  spec.layout = BandLayout{4, 4, 8, 8};
  spec.top_k = 2;
  const FreqMoe m = upcycle(alloc_dense_fno(cfg), spec);
  const long long active = active_spectral_param_count(m, 2);
  c.expect(active == 331776LL, "active spectral parameter count drifted");
  c.expect(dense >= 45 * active,
           "spectral parameter ratio below 45: " + std::to_string(dense / double(active)));

  // Per-expert adaptation parameters grow linearly in r at fixed H and band
  // size: 2 corner blocks x 2 reals x (A: r*H, B: H*r per mode).
  for (int r : {1, 2, 4, 8}) {
    const long long per = lora_param_count(r, 32, 4, 4);
    c.expect(per == 4LL * r * 32 * (1 + 16),
             "per-expert parameter count off at rank " + std::to_string(r));
  }
  return c.ok;
}

bool criterion_cost_model(Ctx& c) {
  FnoConfig cfg;
  cfg.in_channels = 1;
  cfg.out_channels = 1;
  cfg.width = 32;
  cfg.layers = 4;
  cfg.grid = 64;

  FnoConfig hi = cfg;
  hi.modes1 = hi.modes2 = 32;
  FnoConfig lo = cfg;
  lo.modes1 = lo.modes2 = 4;
  c.expect(count_flops_dense(hi).spectral == 64 * count_flops_dense(lo).spectral,
           "dense spectral cost is not 64x between (32,32) and (4,4)");

  FnoConfig chunk = cfg;
  chunk.modes1 = chunk.modes2 = 4;
  const FlopBreakdown f2 = count_flops_moe(chunk, BandLayout{4, 4, 2, 2}, 4, 2);
  const FlopBreakdown f4 = count_flops_moe(chunk, BandLayout{4, 4, 4, 4}, 4, 2);
  const FlopBreakdown f8 = count_flops_moe(chunk, BandLayout{4, 4, 8, 8}, 4, 2);
  c.expect(f2.spectral == f4.spectral && f4.spectral == f8.spectral,
           "expert-path cost varies with the band-grid size at fixed k");
  c.expect(f8.gating == 4 * f4.gating, "gating cost is not linear in the band count");
  c.expect(4 * f2.gating == f4.gating, "gating cost is not linear in the band count");
  c.expect(f2.gating > 0, "gating cost vanished on a multi-band layout");
  c.expect(count_flops_moe(chunk, BandLayout{4, 4, 1, 1}, 4, 0).gating == 0,
           "single-band layout should have no router cost");
  return c.ok;
}

// Velocity reconstruction used as an independent check of the vorticity
// formulation: psi_hat = w_hat / |k|^2, u = d(psi)/dy, v = -d(psi)/dx, odd
// derivatives zeroed on the Nyquist rows.
Field velocity_from_vorticity_oracle(const Field& omega) {
  const int S = omega.grid;
  Spectrum w = rfft2(omega);
  Spectrum vel(2, S);
  for (int i1 = 0; i1 <= S / 2; ++i1) {
    for (int i0 = 0; i0 < S; ++i0) {
      const int k1s = (i0 <= S / 2) ? i0 : i0 - S;
      const int k2s = i1;
      const double k_sq = static_cast<double>(k1s) * k1s + static_cast<double>(k2s) * k2s;
      const Eigen::Index col = Spectrum::mode_index(S, i0, i1);
      if (k_sq == 0.0) continue;
      const std::complex<double> psi = w.data(0, col) / k_sq;
      const double d1 = (i0 == S / 2) ? 0.0 : static_cast<double>(k1s);
      const double d2 = (i1 == S / 2) ? 0.0 : static_cast<double>(k2s);
      const std::complex<double> im(0.0, 1.0);
      vel.data(0, col) = im * d2 * psi;   // u = d psi / dy
      vel.data(1, col) = -im * d1 * psi;  // v = -d psi / dx
    }
  }
  return irfft2(vel);
}

bool criterion_data_oracles(Ctx& c) {
  // Heat pairs against the exact propagator.
  PdeDatasetMeta hm;
  hm.problem = "heat";
  hm.grid = 32;
  hm.channels = 1;
  hm.nu = 5e-3;
  hm.dt = 0.8;
  hm.samples = 8;
  hm.traj_len = 2;
  hm.seed = 71;
  const Dataset hd = generate_dataset(hm);
  for (std::size_t i = 0; i < hd.inputs.size(); ++i) {
    const Field ref = heat_step_analytic(hd.inputs[i], hm.nu, hm.dt);
    c.expect((ref.data - hd.targets[i].data).cwiseAbs().maxCoeff() < 1e-12,
             "heat targets deviate from the analytic propagator");
  }

  // Vorticity stepping keeps the derived velocity divergence-free and the
  // unforced kinetic energy non-increasing.
  Rng rng = Rng::stream(73, "pde-init");
  Field w = velocity_to_vorticity(turbulent_velocity(32, 12, 1.0, rng));
  double prev_energy = ns_kinetic_energy(w);
  for (int s = 0; s < 5; ++s) {
    w = ns_vorticity_step(w, 1e-2, 0.01);
    const double div = max_divergence(velocity_from_vorticity_oracle(w));
    c.expect(div < 1e-10, "derived velocity divergence " + std::to_string(div));
    const double energy = ns_kinetic_energy(w);
    c.expect(energy <= prev_energy, "unforced kinetic energy increased");
    prev_energy = energy;
  }

  // Observed time-integration order from self-convergence: halving the step
  // shrinks the error by at least 2^3.5.
  Rng rng2 = Rng::stream(79, "pde-init");
  const Field w0 = velocity_to_vorticity(turbulent_velocity(16, 6, 1.0, rng2));
  const double T = 0.5;
  const double nu = 1.0;
  auto integrate = [&](int steps) {
    Field state = w0;
    for (int s = 0; s < steps; ++s) state = ns_vorticity_step(state, nu, T / steps);
    return state;
  };
  const Field ref = integrate(80);
  const double e10 = (integrate(10).data - ref.data).norm();
  const double e20 = (integrate(20).data - ref.data).norm();
  const double order = std::log2(e10 / e20);
  c.expect(order >= 3.5, "observed integration order " + std::to_string(order));
  return c.ok;
}

bool criterion_pipeline(Ctx& c) {
  const auto t0 = std::chrono::steady_clock::now();
  for (std::uint64_t seed : {0ULL, 1ULL, 2ULL}) {
    // Low-frequency pretraining data: one-step heat pairs.
    PdeDatasetMeta hm;
    hm.problem = "heat";
    hm.grid = 64;
    hm.channels = 1;
    hm.nu = 1e-2;
    hm.dt = 1.0;
    hm.samples = 64;
    hm.traj_len = 4;
    hm.seed = seed;
    const Dataset heat = generate_dataset(hm);

    // Target task with high-frequency content: vorticity advection.
    PdeDatasetMeta nm;
    nm.problem = "ns-vorticity";
    nm.grid = 64;
    nm.channels = 1;
    nm.nu = 1e-3;
    nm.dt = 0.2;
    nm.samples = 96;
    nm.traj_len = 4;
    nm.seed = seed;
    const Dataset ns = generate_dataset(nm);

    FnoConfig cfg;
    cfg.in_channels = 1;
    cfg.out_channels = 1;
    cfg.width = 8;
    cfg.layers = 4;
    cfg.modes1 = 4;
    cfg.modes2 = 4;
    cfg.grid = 64;
    Rng init = Rng::stream(seed, "init");
    DenseFno base = init_dense_fno(cfg, init);

    TrainConfig pre;
    pre.batch = 16;
    pre.warmup_steps = 10;
    pre.cosine_epochs = 15;
    pre.seed = seed;
    fit_dense(base, heat, pre, 15, nullptr);

    UpcycleSpec spec;
    spec.n_experts = 8;
    spec.rank = 4;
    spec.alpha = 1.0;
    spec.layout = BandLayout{4, 4, 3, 3};
    spec.top_k = 2;
    spec.tau = 1.0;
    spec.seed = seed;
    const FreqMoe upcycled = upcycle(base, spec);

    TrainConfig ft;
    ft.batch = 16;
    ft.warmup_steps = 20;
    ft.cosine_epochs = 40;
    ft.seed = seed;

    FreqMoe tuned = upcycled;
    ft.sparsity_weight = 0.01;
    const FitResult moe_sparse = fit_moe(tuned, ns, ft, 40, nullptr);

    FreqMoe tuned_plain = upcycled;
    ft.sparsity_weight = 0.0;
    const FitResult moe_plain = fit_moe(tuned_plain, ns, ft, 40, nullptr);

    // Dense control: the same pretrained weights, adapted to the target task
    // with the identical budget.
    DenseFno control = base;
    ft.sparsity_weight = 0.0;
    const FitResult dense_fit = fit_dense(control, ns, ft, 40, nullptr);

    const double moe_val = moe_sparse.epochs.back().val_l2re_topk;
    const double dense_val = dense_fit.final_val_l2re;
    c.expect(moe_val <= 1.02 * dense_val,
             "seed " + std::to_string(seed) + ": mixture val " + std::to_string(moe_val) +
                 " vs dense val " + std::to_string(dense_val));

    auto mean_gate = [](const FitResult& r) {
      const auto& g = r.epochs.back().mean_gate;
      double acc = 0.0;
      for (double v : g) acc += v;
      return acc / static_cast<double>(g.size());
    };
    const double g_sparse = mean_gate(moe_sparse);
    const double g_plain = mean_gate(moe_plain);
    c.expect(g_sparse < g_plain,
             "seed " + std::to_string(seed) + ": sparsity loss did not lower gate activity (" +
                 std::to_string(g_sparse) + " vs " + std::to_string(g_plain) + ")");
    if (!c.ok) return false;
  }
  const double elapsed =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  c.expect(elapsed < 1800.0,
           "pipeline exceeded the 30 minute budget: " + std::to_string(elapsed) + "s");
  std::printf("        (pipeline wall time %.1fs)\n", elapsed);
  return c.ok;
}

bool criterion_sparsity_and_schedule(Ctx& c) {
  Rng rng = Rng::stream(83, "verify");
  for (int draw = 0; draw < 1000 && c.ok; ++draw) {
    const int layers = 1 + draw % 4;
    const int experts = 1 + draw % 6;
    std::vector<Eigen::MatrixXd> batch;
    for (int b = 0; b < 1 + draw % 3; ++b) {
      Eigen::MatrixXd g(layers, experts);
      for (Eigen::Index i = 0; i < g.size(); ++i)
        g.data()[i] = sigmoid(4.0 * rng.normal());
      batch.push_back(std::move(g));
    }
    const double s = sparsity_loss(batch);
    c.expect(s > 0.0 && s < static_cast<double>(experts),
             "sparsity loss " + std::to_string(s) + " outside (0, " +
                 std::to_string(experts) + ")");
  }

  TrainConfig cfg;  // defaults: lr 1e-3, floor ratio 5e-2, 70 cosine epochs
  const long long spe = 100;
  const long long end = cfg.cosine_epochs * spe;
  c.expect(lr_at(end, spe, cfg) == 5e-5, "cosine does not land on 5e-5 exactly");
  c.expect(lr_at(end + 12345, spe, cfg) == 5e-5, "plateau is not exactly 5e-5");
  return c.ok;
}

bool criterion_serialization(Ctx& c) {
  const fs::path dir = fs::temp_directory_path() / "freqmoe_acceptance_io";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const auto p = [&](const char* name) { return (dir / name).string(); };

  // Checkpoint round trips, both kinds, bitwise.
  DenseFno dense = make_base(91);
  save_dense_checkpoint(p("d.fqmo"), dense, {{"made_by", "acceptance"}}, 91);
  DenseFno dback = load_dense_checkpoint(p("d.fqmo"));
  auto dv = param_views(dense);
  auto dbv = param_views(dback);
  for (std::size_t i = 0; i < dv.size() && c.ok; ++i)
    for (Eigen::Index j = 0; j < dv[i].size; ++j)
      if (dv[i].data[j] != dbv[i].data[j])
        c.expect(false, "dense round trip not bit-exact in " + dv[i].name);

  FreqMoe moe = make_mixture(93, true);
  save_moe_checkpoint(p("m.fqmo"), moe, {}, 93);
  FreqMoe mback = load_moe_checkpoint(p("m.fqmo"));
  auto mv = param_views(moe);
  auto mbv = param_views(mback);
  for (std::size_t i = 0; i < mv.size() && c.ok; ++i)
    for (Eigen::Index j = 0; j < mv[i].size; ++j)
      if (mv[i].data[j] != mbv[i].data[j])
        c.expect(false, "mixture round trip not bit-exact in " + mv[i].name);

  // Dataset round trip, bitwise.
  PdeDatasetMeta meta;
  meta.problem = "heat";
  meta.grid = 16;
  meta.channels = 1;
  meta.nu = 1e-2;
  meta.dt = 1.0;
  meta.samples = 4;
  meta.traj_len = 2;
  meta.seed = 97;
  const Dataset ds = generate_dataset(meta);
  save_dataset(p("a.fqds"), ds);
  const Dataset dsb = load_dataset(p("a.fqds"));
  for (std::size_t i = 0; i < ds.inputs.size(); ++i) {
    c.expect((ds.inputs[i].data - dsb.inputs[i].data).cwiseAbs().maxCoeff() == 0.0,
             "dataset inputs not bit-exact");
    c.expect((ds.targets[i].data - dsb.targets[i].data).cwiseAbs().maxCoeff() == 0.0,
             "dataset targets not bit-exact");
  }

  // Corruption must be rejected with an integrity error.
  {
    std::ifstream in(p("d.fqmo"), std::ios::binary);
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                            std::istreambuf_iterator<char>());
    bytes[bytes.size() - 11] = static_cast<char>(bytes[bytes.size() - 11] ^ 0x20);
    std::ofstream out(p("corrupt.fqmo"), std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  bool rejected = false;
  try {
    (void)load_checkpoint(p("corrupt.fqmo"));
  } catch (const DataError& e) {
    const std::string what = e.what();
    rejected = what.find("integrity") != std::string::npos ||
               what.find("checksum") != std::string::npos;
  }
  c.expect(rejected, "corrupted checkpoint was not rejected with an integrity error");

  // Identical seeds reproduce identical artifacts, byte for byte.
  const Dataset ds2 = generate_dataset(meta);
  save_dataset(p("b.fqds"), ds2);
  c.expect(sha256_file_hex(p("a.fqds")) == sha256_file_hex(p("b.fqds")),
           "same-seed datasets serialize to different bytes");
  c.expect(dataset_sha256(ds) == dataset_sha256(ds2), "same-seed dataset hashes differ");

  TrainConfig tc;
  tc.batch = 2;
  tc.warmup_steps = 2;
  tc.seed = 5;
  DenseFno m1 = make_base(99);
  DenseFno m2 = make_base(99);
  fit_dense(m1, ds, tc, 2, nullptr);
  fit_dense(m2, ds, tc, 2, nullptr);
  save_dense_checkpoint(p("t1.fqmo"), m1, {{"run", "repeat"}}, 5);
  save_dense_checkpoint(p("t2.fqmo"), m2, {{"run", "repeat"}}, 5);
  c.expect(sha256_file_hex(p("t1.fqmo")) == sha256_file_hex(p("t2.fqmo")),
           "same-seed training runs serialize to different bytes");

  fs::remove_all(dir);
  return c.ok;
}

struct Criterion {
  const char* title;
  std::function<bool(Ctx&)> run;
};

}  // namespace

int main() {
  const Criterion criteria[] = {
      {"analytic gradients match finite differences for every parameter group",
       criterion_gradients},
      {"fresh upcycle is exactly the base model; neutral gates halve expert bands",
       criterion_upcycle_equivalence},
      {"inference forwards are consistent with training; top-k matches an argsort oracle",
       criterion_forward_consistency},
      {"expert weight deltas have numerical rank at most r", criterion_low_rank},
      {"parameter counters hit the frozen values and the 45x active ratio",
       criterion_param_efficiency},
      {"cost model: 64x dense spectral scaling, layout-invariant experts, linear gating",
       criterion_cost_model},
      {"synthetic data agrees with analytic and conservation oracles",
       criterion_data_oracles},
      {"pretrain, upcycle, finetune: mixture matches the dense control; sparsity lowers gates",
       criterion_pipeline},
      {"sparsity loss stays inside (0, N); lr schedule lands on 5e-5 exactly",
       criterion_sparsity_and_schedule},
      {"serialization round trips bit-exactly and rejects corruption",
       criterion_serialization},
  };

  int failures = 0;
  int id = 0;
  for (const Criterion& cr : criteria) {
    ++id;
    Ctx ctx;
    const auto t0 = std::chrono::steady_clock::now();
    bool ok = false;
    try {
      ok = cr.run(ctx);
    } catch (const std::exception& e) {
      ctx.ok = false;
      ctx.note = std::string("exception: ") + e.what();
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    ok = ok && ctx.ok;
    std::printf("[%s] %2d/10 %s (%.1fs)%s%s\n", ok ? "PASS" : "FAIL", id, cr.title, secs,
                ctx.note.empty() ? "" : " -- ", ctx.note.c_str());
    std::fflush(stdout);
    if (!ok) ++failures;
  }
  if (failures > 0) std::printf("%d of 10 criteria failed\n", failures);
  else std::printf("all 10 criteria passed\n");
  return failures == 0 ? 0 : 1;
}
