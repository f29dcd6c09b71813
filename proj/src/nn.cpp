// Copyright (c) 2026 the freqmoe authors
// SPDX-License-Identifier: Apache-2.0

#include "freqmoe/nn.hpp"

#include <cmath>

#include "freqmoe/errors.hpp"
#include "freqmoe/fft.hpp"

namespace freqmoe {

void FnoConfig::validate() const {
  if (!is_power_of_two(grid)) throw ConfigError("fno: grid must be a power of two");
  if (in_channels < 1 || out_channels < 1) throw ConfigError("fno: channels must be positive");
  if (width < 1 || layers < 1) throw ConfigError("fno: width and layers must be positive");
  if (modes1 < 1 || modes2 < 1) throw ConfigError("fno: modes must be positive");
  if (2 * modes1 > grid || modes2 > grid / 2)
    throw ConfigError("fno: mode window does not fit the grid");
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * 0.70710678118654752440)); }

double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * 0.70710678118654752440));
  const double pdf = 0.39894228040143267794 * std::exp(-0.5 * x * x);
  return cdf + x * pdf;
}

Field affine_apply(const AffineParams& p, const Field& z) {
  Field out(static_cast<int>(p.W.rows()), z.grid);
  out.data = p.W * z.data;
  out.data.colwise() += p.b;
  return out;
}

void apply_mode_window(const SpectralWeights& R, const Spectrum& in, Spectrum& out,
                       int row0_blk0, int row0_blk1, int col0) {
  const int s = in.grid;
  for (int blk = 0; blk < 2; ++blk) {
    const int row0 = (blk == 0) ? row0_blk0 : row0_blk1;
    for (int m2 = 0; m2 < R.modes2; ++m2)
      for (int m1 = 0; m1 < R.modes1; ++m1) {
        const Eigen::Index k = Spectrum::mode_index(s, row0 + m1, col0 + m2);
        out.data.col(k) += R.mode(blk, m1, m2) * in.data.col(k);
      }
  }
}

void apply_mode_window_backward(const SpectralWeights& R, const Spectrum& z_hat,
                                const Spectrum& ds, int row0_blk0, int row0_blk1, int col0,
                                SpectralWeights& dR, Spectrum& dz_hat) {
  const int s = z_hat.grid;
  for (int blk = 0; blk < 2; ++blk) {
    const int row0 = (blk == 0) ? row0_blk0 : row0_blk1;
    for (int m2 = 0; m2 < R.modes2; ++m2)
      for (int m1 = 0; m1 < R.modes1; ++m1) {
        const Eigen::Index k = Spectrum::mode_index(s, row0 + m1, col0 + m2);
        dR.mode(blk, m1, m2).noalias() += ds.data.col(k) * z_hat.data.col(k).adjoint();
        dz_hat.data.col(k).noalias() += R.mode(blk, m1, m2).adjoint() * ds.data.col(k);
      }
  }
}

Field fno_forward(const DenseFno& m, const Field& x, FnoTape* tape) {
  const auto& cfg = m.config;
  if (x.grid != cfg.grid || x.channels() != cfg.in_channels)
    throw ConfigError("fno_forward: input shape does not match model config");
  if (tape) {
    tape->input = x;
    tape->layers.clear();
    tape->layers.reserve(m.layers.size());
  }
  Field z = affine_apply(m.lift, x);
  const int s = cfg.grid;
  for (const auto& layer : m.layers) {
    Spectrum z_hat = rfft2(z);
    Spectrum mixed(cfg.width, s);
    apply_mode_window(layer.spectral, z_hat, mixed, 0, s - cfg.modes1, 0);
    Field u = irfft2(mixed);
    u.data.noalias() += layer.pointwise.W * z.data;
    u.data.colwise() += layer.pointwise.b;
    if (tape) tape->layers.push_back({z, std::move(z_hat), u});
    z = Field(cfg.width, s);
    z.data = u.data.unaryExpr([](double v) { return gelu(v); });
  }
  if (tape) tape->features = z;
  return affine_apply(m.proj, z);
}

namespace {

// d(affine)/d(params) given upstream du; returns W^T du.
Eigen::MatrixXd affine_backward(const AffineParams& p, const Eigen::MatrixXd& z_in,
                                const Eigen::MatrixXd& du, AffineParams& dp) {
  dp.W.noalias() += du * z_in.transpose();
  dp.b.noalias() += du.rowwise().sum();
  return p.W.transpose() * du;
}

}  // namespace

Field fno_backward(const DenseFno& m, const FnoTape& tape, const Field& dy, DenseFno& grads) {
  const auto& cfg = m.config;
  const int s = cfg.grid;
  Field dz(cfg.width, s);
  dz.data = affine_backward(m.proj, tape.features.data, dy.data, grads.proj);
  for (int l = static_cast<int>(m.layers.size()) - 1; l >= 0; --l) {
    const auto& layer = m.layers[static_cast<std::size_t>(l)];
    const auto& lt = tape.layers[static_cast<std::size_t>(l)];
    Eigen::MatrixXd du =
        dz.data.cwiseProduct(lt.pre_act.data.unaryExpr([](double v) { return gelu_grad(v); }));
    Field du_field(cfg.width, s);
    du_field.data = du;
    // pointwise branch
    Eigen::MatrixXd dz_pw = affine_backward(layer.pointwise, lt.z_in.data, du,
                                            grads.layers[static_cast<std::size_t>(l)].pointwise);
    // spectral branch
    Spectrum ds = irfft2_adjoint(du_field);
    Spectrum dz_hat(cfg.width, s);
    apply_mode_window_backward(layer.spectral, lt.z_hat, ds, 0, s - cfg.modes1, 0,
                               grads.layers[static_cast<std::size_t>(l)].spectral, dz_hat);
    Field dz_sp = rfft2_adjoint(dz_hat);
    dz.data = dz_pw + dz_sp.data;
  }
  Field dx(cfg.in_channels, s);
  dx.data = affine_backward(m.lift, tape.input.data, dz.data, grads.lift);
  return dx;
}

SpectralWeights make_spectral(int width, int modes1, int modes2) {
  SpectralWeights w;
  w.modes1 = modes1;
  w.modes2 = modes2;
  for (auto& blk : w.blocks)
    blk.assign(static_cast<std::size_t>(modes1) * modes2, Eigen::MatrixXcd::Zero(width, width));
  return w;
}

namespace {

void init_affine(AffineParams& p, int out, int in, Rng& rng) {
  // Kaiming-uniform with bound 1/sqrt(fan_in); bias drawn with the same
  // bound. Fill order: W column-major, then b.
  p.W.resize(out, in);
  p.b.resize(out);
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  for (Eigen::Index j = 0; j < p.W.cols(); ++j)
    for (Eigen::Index i = 0; i < p.W.rows(); ++i) p.W(i, j) = rng.uniform(-bound, bound);
  for (Eigen::Index i = 0; i < p.b.size(); ++i) p.b(i) = rng.uniform(-bound, bound);
}

void init_spectral(SpectralWeights& w, int width, Rng& rng) {
  // re, im ~ U[0,1) / width^2, drawn re-then-im, column-major per mode,
  // modes in storage order (m1 fastest), block 0 before block 1.
  const double scale = 1.0 / (static_cast<double>(width) * width);
  for (auto& blk : w.blocks)
    for (auto& mat : blk)
      for (Eigen::Index j = 0; j < mat.cols(); ++j)
        for (Eigen::Index i = 0; i < mat.rows(); ++i)
          mat(i, j) = std::complex<double>(rng.uniform() * scale, rng.uniform() * scale);
}

}  // namespace

DenseFno init_dense_fno(const FnoConfig& cfg, Rng& rng) {
  cfg.validate();
  DenseFno m;
  m.config = cfg;
  init_affine(m.lift, cfg.width, cfg.in_channels, rng);
  m.layers.resize(static_cast<std::size_t>(cfg.layers));
  for (auto& layer : m.layers) {
    layer.spectral = make_spectral(cfg.width, cfg.modes1, cfg.modes2);
    init_spectral(layer.spectral, cfg.width, rng);
    init_affine(layer.pointwise, cfg.width, cfg.width, rng);
  }
  init_affine(m.proj, cfg.out_channels, cfg.width, rng);
  return m;
}

DenseFno alloc_dense_fno(const FnoConfig& cfg) {
  cfg.validate();
  DenseFno m;
  m.config = cfg;
  m.lift.W = Eigen::MatrixXd::Zero(cfg.width, cfg.in_channels);
  m.lift.b = Eigen::VectorXd::Zero(cfg.width);
  m.layers.resize(static_cast<std::size_t>(cfg.layers));
  for (auto& layer : m.layers) {
    layer.spectral = make_spectral(cfg.width, cfg.modes1, cfg.modes2);
    layer.pointwise.W = Eigen::MatrixXd::Zero(cfg.width, cfg.width);
    layer.pointwise.b = Eigen::VectorXd::Zero(cfg.width);
  }
  m.proj.W = Eigen::MatrixXd::Zero(cfg.out_channels, cfg.width);
  m.proj.b = Eigen::VectorXd::Zero(cfg.out_channels);
  return m;
}

DenseFno zeros_like(const DenseFno& m) {
  DenseFno z;
  z.config = m.config;
  z.lift.W = Eigen::MatrixXd::Zero(m.lift.W.rows(), m.lift.W.cols());
  z.lift.b = Eigen::VectorXd::Zero(m.lift.b.size());
  z.layers.resize(m.layers.size());
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    z.layers[l].spectral = make_spectral(m.config.width, m.config.modes1, m.config.modes2);
    z.layers[l].pointwise.W =
        Eigen::MatrixXd::Zero(m.layers[l].pointwise.W.rows(), m.layers[l].pointwise.W.cols());
    z.layers[l].pointwise.b = Eigen::VectorXd::Zero(m.layers[l].pointwise.b.size());
  }
  z.proj.W = Eigen::MatrixXd::Zero(m.proj.W.rows(), m.proj.W.cols());
  z.proj.b = Eigen::VectorXd::Zero(m.proj.b.size());
  return z;
}

long long TensorRecord::doubles() const {
  long long n = 0;
  for (const auto& p : pieces) n += p.second;
  return n;
}

long long TensorRecord::elements() const { return dtype == "c128" ? doubles() / 2 : doubles(); }

namespace {

void affine_records(const std::string& prefix, AffineParams& p, std::vector<TensorRecord>& out) {
  out.push_back({prefix + ".W",
                 "f64",
                 {static_cast<long long>(p.W.cols()), static_cast<long long>(p.W.rows())},
                 {{p.W.data(), p.W.size()}}});
  out.push_back({prefix + ".b", "f64", {static_cast<long long>(p.b.size())}, {{p.b.data(), p.b.size()}}});
}

}  // namespace

void spectral_records(const std::string& prefix, SpectralWeights& w,
                      std::vector<TensorRecord>& out) {
  // One logical tensor per corner block; pieces are the per-mode matrices in
  // storage order (m1 fastest). Shape: [modes2, modes1, in, out], out
  // fastest (column-major matrices).
  for (int blk = 0; blk < 2; ++blk) {
    auto& mats = w.blocks[static_cast<std::size_t>(blk)];
    TensorRecord rec;
    rec.name = prefix + ".block" + std::to_string(blk);
    rec.dtype = "c128";
    const long long h_out = mats.empty() ? 0 : mats[0].rows();
    const long long h_in = mats.empty() ? 0 : mats[0].cols();
    rec.shape = {w.modes2, w.modes1, h_in, h_out};
    for (auto& mat : mats)
      rec.pieces.push_back({reinterpret_cast<double*>(mat.data()), 2 * mat.size()});
    out.push_back(std::move(rec));
  }
}

std::vector<TensorRecord> tensor_records(DenseFno& m) {
  std::vector<TensorRecord> out;
  affine_records("lift", m.lift, out);
  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    const std::string base = "layers." + std::to_string(l);
    spectral_records(base + ".spectral", m.layers[l].spectral, out);
    affine_records(base + ".pointwise", m.layers[l].pointwise, out);
  }
  affine_records("proj", m.proj, out);
  return out;
}

std::vector<ParamView> param_views(DenseFno& m) {
  std::vector<ParamView> views;
  for (auto& rec : tensor_records(m))
    for (auto& piece : rec.pieces) views.push_back({rec.name, piece.first, piece.second});
  return views;
}

long long spectral_param_count(int blocks, int width, int modes1, int modes2, int layers) {
  return 2LL * blocks * width * width * modes1 * modes2 * layers;
}

long long affine_param_count(int out, int in) { return static_cast<long long>(out) * in + out; }

long long count_params(const FnoConfig& cfg) {
  long long n = affine_param_count(cfg.width, cfg.in_channels);
  n += spectral_param_count(2, cfg.width, cfg.modes1, cfg.modes2, cfg.layers);
  n += static_cast<long long>(cfg.layers) * affine_param_count(cfg.width, cfg.width);
  n += affine_param_count(cfg.out_channels, cfg.width);
  return n;
}

long long fft2_flop_count(int grid) {
  long long lg = 0;
  for (int g = grid; g > 1; g >>= 1) ++lg;
  return 10LL * grid * grid * lg;
}

FlopBreakdown count_flops_dense(const FnoConfig& cfg) {
  FlopBreakdown f;
  const long long s2 = static_cast<long long>(cfg.grid) * cfg.grid;
  const long long h = cfg.width;
  // Per layer: rfft2 + irfft2 on width channels; 8 flops per complex MAC on
  // each retained mode of both corner blocks; dense pointwise + bias; gelu
  // costed at 10 flops per value.
  f.fft = static_cast<long long>(cfg.layers) * 2 * h * fft2_flop_count(cfg.grid);
  f.spectral =
      static_cast<long long>(cfg.layers) * 2 * cfg.modes1 * cfg.modes2 * 8 * h * h;
  f.pointwise = static_cast<long long>(cfg.layers) * s2 * (2 * h * h + h);
  f.activation = static_cast<long long>(cfg.layers) * s2 * h * 10;
  f.lift_proj = s2 * (2LL * h * cfg.in_channels + h) + s2 * (2LL * cfg.out_channels * h + cfg.out_channels);
  return f;
}

}  // namespace freqmoe
