// Copyright (c) 2026 the freqmoe authors
// SPDX-License-Identifier: Apache-2.0

#include "freqmoe/moe.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "freqmoe/errors.hpp"
#include "freqmoe/fft.hpp"

namespace freqmoe {

void FreqMoe::validate() const {
  config.validate();
  layout.validate(config.grid);
  if (config.modes1 != layout.chunk1 || config.modes2 != layout.chunk2)
    throw ConfigError("freqmoe: config modes must equal the band chunk size");
  if (rank < 1 || rank > config.width)
    throw ConfigError("freqmoe: rank must lie in [1, width]");
  const int n = num_experts();
  if (n > layout.num_bands() - 1)
    throw ConfigError("freqmoe: more experts than non-base bands");
  if (top_k < 0 || top_k > n) throw ConfigError("freqmoe: top_k must lie in [0, N]");
  std::vector<char> seen(static_cast<std::size_t>(layout.num_bands()), 0);
  for (int b : expert_bands) {
    if (b <= 0 || b >= layout.num_bands())
      throw ConfigError("freqmoe: expert band id out of range or on the base band");
    if (seen[static_cast<std::size_t>(b)]++) throw ConfigError("freqmoe: duplicate expert band");
  }
  if (static_cast<int>(layers.size()) != config.layers)
    throw ConfigError("freqmoe: layer count mismatch");
  for (const auto& layer : layers) {
    if (static_cast<int>(layer.experts.size()) != n)
      throw ConfigError("freqmoe: expert count mismatch in layer");
    if (layer.gates.w.rows() != n || (n > 0 && layer.gates.w.cols() != config.width))
      throw ConfigError("freqmoe: gate weight shape mismatch");
    if (!(layer.gates.tau > 0.0)) throw ConfigError("freqmoe: gate temperature must be positive");
  }
}

std::vector<int> default_expert_bands(const BandLayout& layout, int n) {
  if (n < 0 || n > layout.num_bands() - 1)
    throw ConfigError("expert count must lie in [0, J1*J2-1]");
  std::vector<int> bands(static_cast<std::size_t>(n));
  std::iota(bands.begin(), bands.end(), 1);
  return bands;
}

Eigen::VectorXd band_features(const BandBlock& block) {
  return block.values.cwiseAbs().rowwise().mean();
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

GateEval eval_gates(const FreqMoe& m, const MoeLayer& layer, const Spectrum& z_hat) {
  const int n = m.num_experts();
  GateEval ge;
  ge.features.resize(m.config.width, n);
  ge.logits.resize(n);
  ge.gates.resize(n);
  for (int e = 0; e < n; ++e) {
    const BandBlock block = extract_band(z_hat, m.expert_bands[static_cast<std::size_t>(e)],
                                         m.layout);
    ge.features.col(e) = band_features(block);
    ge.logits(e) = layer.gates.w.row(e).dot(ge.features.col(e)) / layer.gates.tau;
    ge.gates(e) = sigmoid(ge.logits(e));
  }
  return ge;
}

Eigen::MatrixXcd expert_delta_mode(const LoraFactors& f, double alpha, int blk, int mode_flat) {
  const auto& b = f.B[static_cast<std::size_t>(blk)][static_cast<std::size_t>(mode_flat)];
  return alpha * (b * f.A[static_cast<std::size_t>(blk)]);
}

SpectralWeights materialize_expert(const FreqMoe& m, int layer, int expert) {
  const auto& lay = m.layers.at(static_cast<std::size_t>(layer));
  const auto& f = lay.experts.at(static_cast<std::size_t>(expert));
  SpectralWeights out = lay.base;
  for (int blk = 0; blk < 2; ++blk)
    for (int p = 0; p < out.mode_count(); ++p)
      out.blocks[static_cast<std::size_t>(blk)][static_cast<std::size_t>(p)] +=
          expert_delta_mode(f, m.alpha, blk, p);
  return out;
}

std::vector<int> top_k_experts(const Eigen::VectorXd& gates, const std::vector<int>& bands,
                               int k) {
  const int n = static_cast<int>(gates.size());
  if (k < 0 || k > n) throw ConfigError("top_k_experts: k must lie in [0, N]");
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    if (gates(a) != gates(b)) return gates(a) > gates(b);
    return bands[static_cast<std::size_t>(a)] < bands[static_cast<std::size_t>(b)];
  });
  std::vector<int> active(order.begin(), order.begin() + k);
  std::sort(active.begin(), active.end());
  return active;
}

namespace {

// v = (R + alpha B A) u per mode of the expert's band, scaled by the gate.
// Shared by the training and inference forwards so K=N inference is
// bit-identical to training. Returns the pre-gate outputs (width x slots).
Eigen::MatrixXcd apply_expert_band(const FreqMoe& m, const MoeLayer& layer, int expert,
                                   const Spectrum& z_hat, double gate, Spectrum& out) {
  const int p1n = m.layout.chunk1, p2n = m.layout.chunk2;
  const int band = m.expert_bands[static_cast<std::size_t>(expert)];
  const auto& f = layer.experts[static_cast<std::size_t>(expert)];
  Eigen::MatrixXcd pre(m.config.width, 2 * p1n * p2n);
  for (int blk = 0; blk < 2; ++blk) {
    const auto& a = f.A[static_cast<std::size_t>(blk)];
    for (int p2 = 0; p2 < p2n; ++p2)
      for (int p1 = 0; p1 < p1n; ++p1) {
        const auto [k1, k2] = band_mode_coords(m.layout, m.config.grid, band, blk, p1, p2);
        const Eigen::Index col = Spectrum::mode_index(m.config.grid, k1, k2);
        const int slot = band_slot(p1n, p2n, blk, p1, p2);
        const auto& bp =
            f.B[static_cast<std::size_t>(blk)][static_cast<std::size_t>(p2 * p1n + p1)];
        pre.col(slot) = layer.base.mode(blk, p1, p2) * z_hat.data.col(col) +
                        m.alpha * (bp * (a * z_hat.data.col(col)));
        out.data.col(col) += gate * pre.col(slot);
      }
  }
  return pre;
}

}  // namespace

Field moe_forward_train(const FreqMoe& m, const Field& x, MoeTape* tape, bool mask_experts) {
  m.validate();
  if (x.grid != m.config.grid || x.channels() != m.config.in_channels)
    throw ConfigError("moe_forward: input shape does not match model config");
  const int s = m.config.grid;
  const int n = m.num_experts();
  if (tape) {
    tape->input = x;
    tape->layers.clear();
    tape->layers.reserve(m.layers.size());
    tape->gates = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(m.layers.size()), n);
  }
  Field z = affine_apply(m.lift, x);
  int layer_idx = 0;
  for (const auto& layer : m.layers) {
    Spectrum z_hat = rfft2(z);
    Spectrum mixed(m.config.width, s);
    apply_mode_window(layer.base, z_hat, mixed, 0, s - m.layout.chunk1, 0);
    MoeLayerTape lt;
    lt.masked = mask_experts;
    if (!mask_experts && n > 0) {
      GateEval ge = eval_gates(m, layer, z_hat);
      lt.features = ge.features;
      lt.logits = ge.logits;
      lt.gates = ge.gates;
      lt.expert_pre_gate.reserve(static_cast<std::size_t>(n));
      for (int e = 0; e < n; ++e)
        lt.expert_pre_gate.push_back(
            apply_expert_band(m, layer, e, z_hat, ge.gates(e), mixed));
      if (tape) tape->gates.row(layer_idx) = ge.gates.transpose();
    }
    Field u = irfft2(mixed);
    u.data.noalias() += layer.pointwise.W * z.data;
    u.data.colwise() += layer.pointwise.b;
    if (tape) {
      lt.z_in = z;
      lt.z_hat = std::move(z_hat);
      lt.pre_act = u;
      tape->layers.push_back(std::move(lt));
    }
    z = Field(m.config.width, s);
    z.data = u.data.unaryExpr([](double v) { return gelu(v); });
    ++layer_idx;
  }
  if (tape) tape->features = z;
  return affine_apply(m.proj, z);
}

Field moe_forward_infer(const FreqMoe& m, const Field& x, int k,
                        std::vector<std::vector<int>>* active_sets,
                        std::vector<Eigen::VectorXd>* gate_log) {
  m.validate();
  if (x.grid != m.config.grid || x.channels() != m.config.in_channels)
    throw ConfigError("moe_forward: input shape does not match model config");
  if (k < 0 || k > m.num_experts())
    throw ConfigError("moe_forward_infer: k must lie in [0, N]");
  const int s = m.config.grid;
  if (active_sets) active_sets->clear();
  if (gate_log) gate_log->clear();
  Field z = affine_apply(m.lift, x);
  for (const auto& layer : m.layers) {
    Spectrum z_hat = rfft2(z);
    Spectrum mixed(m.config.width, s);
    apply_mode_window(layer.base, z_hat, mixed, 0, s - m.layout.chunk1, 0);
    if (m.num_experts() > 0) {
      GateEval ge = eval_gates(m, layer, z_hat);
      const std::vector<int> active = top_k_experts(ge.gates, m.expert_bands, k);
      for (int e : active) apply_expert_band(m, layer, e, z_hat, ge.gates(e), mixed);
      if (active_sets) active_sets->push_back(active);
      if (gate_log) gate_log->push_back(ge.gates);
    } else {
      if (active_sets) active_sets->push_back({});
      if (gate_log) gate_log->push_back(Eigen::VectorXd());
    }
    Field u = irfft2(mixed);
    u.data.noalias() += layer.pointwise.W * z.data;
    u.data.colwise() += layer.pointwise.b;
    z = Field(m.config.width, s);
    z.data = u.data.unaryExpr([](double v) { return gelu(v); });
  }
  return affine_apply(m.proj, z);
}

double sparsity_loss(const std::vector<Eigen::MatrixXd>& batch_gates) {
  if (batch_gates.empty()) throw ConfigError("sparsity_loss: empty batch");
  double acc = 0.0;
  for (const auto& g : batch_gates) {
    // Per sample: mean over layers of the summed gate values, so the value
    // stays bounded by the expert count regardless of depth.
    acc += g.sum() / static_cast<double>(g.rows());
  }
  return acc / static_cast<double>(batch_gates.size());
}

Field moe_backward(const FreqMoe& m, const MoeTape& tape, const Field& dy,
                   const Eigen::MatrixXd& gate_extra, FreqMoe& grads) {
  const int s = m.config.grid;
  const int n = m.num_experts();
  const int p1n = m.layout.chunk1, p2n = m.layout.chunk2;
  if (tape.layers.size() != m.layers.size())
    throw ConfigError("moe_backward: tape does not match model");
  if (gate_extra.rows() != static_cast<Eigen::Index>(m.layers.size()) || gate_extra.cols() != n)
    throw ConfigError("moe_backward: gate_extra shape mismatch");

  Field dz(m.config.width, s);
  dz.data = m.proj.W.transpose() * dy.data;
  grads.proj.W.noalias() += dy.data * tape.features.data.transpose();
  grads.proj.b.noalias() += dy.data.rowwise().sum();

  for (int l = static_cast<int>(m.layers.size()) - 1; l >= 0; --l) {
    const auto& layer = m.layers[static_cast<std::size_t>(l)];
    const auto& lt = tape.layers[static_cast<std::size_t>(l)];
    auto& glayer = grads.layers[static_cast<std::size_t>(l)];
    Eigen::MatrixXd du =
        dz.data.cwiseProduct(lt.pre_act.data.unaryExpr([](double v) { return gelu_grad(v); }));

    glayer.pointwise.W.noalias() += du * lt.z_in.data.transpose();
    glayer.pointwise.b.noalias() += du.rowwise().sum();
    Eigen::MatrixXd dz_pw = layer.pointwise.W.transpose() * du;

    Field du_field(m.config.width, s);
    du_field.data = du;
    Spectrum ds = irfft2_adjoint(du_field);
    Spectrum dz_hat(m.config.width, s);
    apply_mode_window_backward(layer.base, lt.z_hat, ds, 0, s - p1n, 0, glayer.base, dz_hat);

    if (!lt.masked && n > 0) {
      for (int e = 0; e < n; ++e) {
        const int band = m.expert_bands[static_cast<std::size_t>(e)];
        const auto& f = layer.experts[static_cast<std::size_t>(e)];
        auto& gf = glayer.experts[static_cast<std::size_t>(e)];
        const double g = lt.gates(e);
        double dgate = gate_extra(l, e);
        for (int blk = 0; blk < 2; ++blk) {
          const auto& a = f.A[static_cast<std::size_t>(blk)];
          for (int p2 = 0; p2 < p2n; ++p2)
            for (int p1 = 0; p1 < p1n; ++p1) {
              const auto [k1, k2] = band_mode_coords(m.layout, s, band, blk, p1, p2);
              const Eigen::Index col = Spectrum::mode_index(s, k1, k2);
              const int slot = band_slot(p1n, p2n, blk, p1, p2);
              const int p = p2 * p1n + p1;
              const auto& bp = f.B[static_cast<std::size_t>(blk)][static_cast<std::size_t>(p)];
              const Eigen::VectorXcd u_in = lt.z_hat.data.col(col);
              const Eigen::VectorXcd dout = ds.data.col(col);
              // d/dgate of <real pairing> with out = gate * pre
              dgate += dout.dot(lt.expert_pre_gate[static_cast<std::size_t>(e)].col(slot)).real();
              const Eigen::VectorXcd dv = g * dout;
              // shared weight and low-rank factor gradients; dW = dv u^H
              const Eigen::MatrixXcd dW = dv * u_in.adjoint();
              glayer.base.mode(blk, p1, p2).noalias() += dW;
              const Eigen::VectorXcd au = a * u_in;
              gf.B[static_cast<std::size_t>(blk)][static_cast<std::size_t>(p)].noalias() +=
                  m.alpha * (dv * au.adjoint());
              gf.A[static_cast<std::size_t>(blk)].noalias() +=
                  m.alpha * ((bp.adjoint() * dv) * u_in.adjoint());
              dz_hat.data.col(col).noalias() += layer.base.mode(blk, p1, p2).adjoint() * dv;
              dz_hat.data.col(col).noalias() += m.alpha * (a.adjoint() * (bp.adjoint() * dv));
            }
        }
        // gate path: dgate -> logit -> (w, features -> z_hat)
        const double dlogit = dgate * g * (1.0 - g);
        glayer.gates.w.row(e) += (dlogit / layer.gates.tau) * lt.features.col(e).transpose();
        const Eigen::VectorXd dfeat =
            (dlogit / layer.gates.tau) * layer.gates.w.row(e).transpose();
        const double slot_count = 2.0 * p1n * p2n;
        for (int blk = 0; blk < 2; ++blk)
          for (int p2 = 0; p2 < p2n; ++p2)
            for (int p1 = 0; p1 < p1n; ++p1) {
              const auto [k1, k2] = band_mode_coords(m.layout, s, band, blk, p1, p2);
              const Eigen::Index col = Spectrum::mode_index(s, k1, k2);
              for (int c = 0; c < m.config.width; ++c) {
                const std::complex<double> zc = lt.z_hat.data(c, col);
                const double mag = std::abs(zc);
                if (mag > 0.0) dz_hat.data(c, col) += (dfeat(c) / slot_count) * (zc / mag);
              }
            }
      }
    }

    Field dz_sp = rfft2_adjoint(dz_hat);
    dz.data = dz_pw + dz_sp.data;
  }

  Field dx(m.config.in_channels, s);
  dx.data = m.lift.W.transpose() * dz.data;
  grads.lift.W.noalias() += dz.data * tape.input.data.transpose();
  grads.lift.b.noalias() += dz.data.rowwise().sum();
  return dx;
}

FreqMoe zeros_like(const FreqMoe& m) {
  FreqMoe z = m;
  auto zero_affine = [](AffineParams& p) {
    p.W.setZero();
    p.b.setZero();
  };
  zero_affine(z.lift);
  zero_affine(z.proj);
  for (auto& layer : z.layers) {
    for (auto& blk : layer.base.blocks)
      for (auto& mat : blk) mat.setZero();
    for (auto& ex : layer.experts) {
      for (auto& a : ex.A) a.setZero();
      for (auto& blk : ex.B)
        for (auto& mat : blk) mat.setZero();
    }
    layer.gates.w.setZero();
    zero_affine(layer.pointwise);
  }
  return z;
}

namespace {

void affine_records_moe(const std::string& prefix, AffineParams& p,
                        std::vector<TensorRecord>& out) {
  out.push_back({prefix + ".W",
                 "f64",
                 {static_cast<long long>(p.W.cols()), static_cast<long long>(p.W.rows())},
                 {{p.W.data(), p.W.size()}}});
  out.push_back(
      {prefix + ".b", "f64", {static_cast<long long>(p.b.size())}, {{p.b.data(), p.b.size()}}});
}

}  // namespace

std::vector<TensorRecord> tensor_records(FreqMoe& m) {
  std::vector<TensorRecord> out;
  affine_records_moe("lift", m.lift, out);
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    const std::string base = "layers." + std::to_string(l);
    auto& layer = m.layers[l];
    spectral_records(base + ".base", layer.base, out);
    for (std::size_t e = 0; e < layer.experts.size(); ++e) {
      const std::string ep = base + ".experts." + std::to_string(e);
      auto& ex = layer.experts[e];
      for (int blk = 0; blk < 2; ++blk) {
        auto& a = ex.A[static_cast<std::size_t>(blk)];
        out.push_back({ep + ".A.block" + std::to_string(blk),
                       "c128",
                       {static_cast<long long>(a.cols()), static_cast<long long>(a.rows())},
                       {{reinterpret_cast<double*>(a.data()), 2 * a.size()}}});
        auto& bs = ex.B[static_cast<std::size_t>(blk)];
        TensorRecord rec;
        rec.name = ep + ".B.block" + std::to_string(blk);
        rec.dtype = "c128";
        const long long rows = bs.empty() ? 0 : bs[0].rows();
        const long long cols = bs.empty() ? 0 : bs[0].cols();
        rec.shape = {m.layout.chunk2, m.layout.chunk1, cols, rows};
        for (auto& mat : bs)
          rec.pieces.push_back({reinterpret_cast<double*>(mat.data()), 2 * mat.size()});
        out.push_back(std::move(rec));
      }
    }
    if (layer.gates.w.size() > 0)
      out.push_back({base + ".gates.w",
                     "f64",
                     {static_cast<long long>(layer.gates.w.cols()),
                      static_cast<long long>(layer.gates.w.rows())},
                     {{layer.gates.w.data(), layer.gates.w.size()}}});
    affine_records_moe(base + ".pointwise", layer.pointwise, out);
  }
  affine_records_moe("proj", m.proj, out);
  return out;
}

std::vector<ParamView> param_views(FreqMoe& m) {
  std::vector<ParamView> views;
  for (auto& rec : tensor_records(m))
    for (auto& piece : rec.pieces) views.push_back({rec.name, piece.first, piece.second});
  return views;
}

long long lora_param_count(int rank, int width, int chunk1, int chunk2) {
  // Per expert per layer, both corner blocks, complex counted as two reals:
  // A is r*H, B is H*r per mode.
  return 2LL * 2 * rank * width * (1 + chunk1 * chunk2);
}

long long count_params(const FreqMoe& m) {
  return active_param_count(m, m.num_experts());
}

long long active_param_count(const FreqMoe& m, int k) {
  const auto& c = m.config;
  long long n = affine_param_count(c.width, c.in_channels);
  n += affine_param_count(c.out_channels, c.width);
  n += static_cast<long long>(c.layers) * affine_param_count(c.width, c.width);
  n += active_spectral_param_count(m, k);
  // every gate runs during routing, active or not
  n += static_cast<long long>(c.layers) * m.num_experts() * c.width;
  return n;
}

long long active_spectral_param_count(const FreqMoe& m, int k) {
  const auto& c = m.config;
  long long n = spectral_param_count(2, c.width, m.layout.chunk1, m.layout.chunk2, c.layers);
  n += static_cast<long long>(c.layers) * k *
       lora_param_count(m.rank, c.width, m.layout.chunk1, m.layout.chunk2);
  return n;
}

FlopBreakdown count_flops_moe(const FnoConfig& cfg, const BandLayout& layout, int rank, int k) {
  FlopBreakdown f;
  const long long s2 = static_cast<long long>(cfg.grid) * cfg.grid;
  const long long h = cfg.width;
  const long long p12 = static_cast<long long>(layout.chunk1) * layout.chunk2;
  const long long bands = static_cast<long long>(layout.bands1) * layout.bands2;
  f.fft = static_cast<long long>(cfg.layers) * 2 * h * fft2_flop_count(cfg.grid);
  // Base band plus k active experts, each over 2*P1*P2 modes at 8 flops per
  // complex MAC; active experts additionally pay the low-rank path
  // (A u then B (A u): 2*H*r MACs per mode), the delta add and the gate
  // scaling (2*H each). Independent of the band-grid size.
  f.spectral =
      static_cast<long long>(cfg.layers) *
      ((1 + k) * 2 * p12 * 8 * h * h + k * 2 * p12 * (8 * 2 * h * rank + 2 * h + 2 * h));
  // The router featurizes every chunk of the partition (6 flops per slot
  // per channel) and scores it (dot product, division, sigmoid). Per-band
  // cost depends only on chunk size and width, so the total is exactly
  // linear in J1*J2. A 1x1 band grid has no experts and no router.
  f.gating = (bands > 1) ? static_cast<long long>(cfg.layers) * bands *
                               (2 * p12 * h * 6 + 2 * h + 10)
                         : 0;
  f.pointwise = static_cast<long long>(cfg.layers) * s2 * (2 * h * h + h);
  f.activation = static_cast<long long>(cfg.layers) * s2 * h * 10;
  f.lift_proj =
      s2 * (2LL * h * cfg.in_channels + h) + s2 * (2LL * cfg.out_channels * h + cfg.out_channels);
  return f;
}

}  // namespace freqmoe
