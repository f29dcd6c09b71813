// Copyright (c) 2026 the freqmoe authors
// SPDX-License-Identifier: Apache-2.0

#include "freqmoe/pde.hpp"

#include <cmath>
#include <complex>

#include "freqmoe/errors.hpp"
#include "freqmoe/fft.hpp"

namespace freqmoe {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

double signed_k1(int k1, int s) { return (k1 <= s / 2) ? k1 : k1 - s; }

// Derivative factors: the Nyquist mode of a real field has no well-defined
// first derivative, so its factor is zero.
double deriv_k1(int k1, int s) { return (2 * k1 == s) ? 0.0 : signed_k1(k1, s); }
double deriv_k2(int k2, int s) { return (2 * k2 == s) ? 0.0 : k2; }

double ksq(int k1, int k2, int s) {
  const double a = signed_k1(k1, s);
  return a * a + static_cast<double>(k2) * k2;
}

void require_vorticity(const Field& f) {
  if (f.channels() != 1) throw ConfigError("ns: vorticity field must have one channel");
}

// Velocity spectra from the vorticity spectrum via the stream function:
// psi_hat = w_hat / |k|^2, u = d(psi)/dy, v = -d(psi)/dx.
void velocity_spectra(const Spectrum& w_hat, Spectrum& u_hat, Spectrum& v_hat) {
  const int s = w_hat.grid;
  u_hat = Spectrum(1, s);
  v_hat = Spectrum(1, s);
  const std::complex<double> im(0.0, 1.0);
  for (int k2 = 0; k2 <= s / 2; ++k2)
    for (int k1 = 0; k1 < s; ++k1) {
      const double k2abs = ksq(k1, k2, s);
      if (k2abs == 0.0) continue;
      const std::complex<double> psi = w_hat.at(0, k1, k2) / k2abs;
      u_hat.at(0, k1, k2) = im * deriv_k2(k2, s) * psi;
      v_hat.at(0, k1, k2) = -im * deriv_k1(k1, s) * psi;
    }
}

// -(u . grad w) + f - nu |k|^2 w, dealiased by the 2/3 rule; mean pinned 0.
Spectrum vorticity_rhs(const Spectrum& w_hat, double nu, const Spectrum* f_hat) {
  const int s = w_hat.grid;
  Spectrum u_hat, v_hat;
  velocity_spectra(w_hat, u_hat, v_hat);
  Spectrum wx_hat(1, s), wy_hat(1, s);
  const std::complex<double> im(0.0, 1.0);
  for (int k2 = 0; k2 <= s / 2; ++k2)
    for (int k1 = 0; k1 < s; ++k1) {
      wx_hat.at(0, k1, k2) = im * deriv_k1(k1, s) * w_hat.at(0, k1, k2);
      wy_hat.at(0, k1, k2) = im * deriv_k2(k2, s) * w_hat.at(0, k1, k2);
    }
  const Field u = irfft2(u_hat), v = irfft2(v_hat);
  const Field wx = irfft2(wx_hat), wy = irfft2(wy_hat);
  Field adv(1, s);
  adv.data = u.data.cwiseProduct(wx.data) + v.data.cwiseProduct(wy.data);
  Spectrum rhs = rfft2(adv);
  const double cutoff = static_cast<double>(s) / 3.0;
  for (int k2 = 0; k2 <= s / 2; ++k2)
    for (int k1 = 0; k1 < s; ++k1) {
      std::complex<double>& r = rhs.at(0, k1, k2);
      if (std::abs(signed_k1(k1, s)) > cutoff || k2 > cutoff)
        r = 0.0;
      else
        r = -r - nu * ksq(k1, k2, s) * w_hat.at(0, k1, k2);
      if (f_hat) r += f_hat->at(0, k1, k2);
    }
  rhs.at(0, 0, 0) = 0.0;
  return rhs;
}

}  // namespace

Field heat_step_analytic(const Field& f, double nu, double dt) {
  Spectrum s = rfft2(f);
  const int g = f.grid;
  for (int k2 = 0; k2 <= g / 2; ++k2)
    for (int k1 = 0; k1 < g; ++k1) {
      const double decay = std::exp(-nu * ksq(k1, k2, g) * dt);
      for (int c = 0; c < s.channels(); ++c) s.at(c, k1, k2) *= decay;
    }
  return irfft2(s);
}

double ns_max_velocity(const Field& omega) {
  require_vorticity(omega);
  Spectrum u_hat, v_hat;
  const Spectrum w_hat = rfft2(omega);
  velocity_spectra(w_hat, u_hat, v_hat);
  const Field u = irfft2(u_hat), v = irfft2(v_hat);
  return (u.data.array().square() + v.data.array().square()).sqrt().maxCoeff();
}

double ns_kinetic_energy(const Field& omega) {
  require_vorticity(omega);
  Spectrum u_hat, v_hat;
  const Spectrum w_hat = rfft2(omega);
  velocity_spectra(w_hat, u_hat, v_hat);
  const Field u = irfft2(u_hat), v = irfft2(v_hat);
  return 0.5 * (u.data.array().square() + v.data.array().square()).mean();
}

double max_divergence(const Field& velocity) {
  if (velocity.channels() != 2) throw ConfigError("max_divergence: expected 2 channels (u, v)");
  const int s = velocity.grid;
  Field u(1, s), v(1, s);
  u.data = velocity.data.row(0);
  v.data = velocity.data.row(1);
  const Spectrum u_hat = rfft2(u), v_hat = rfft2(v);
  Spectrum div_hat(1, s);
  const std::complex<double> im(0.0, 1.0);
  for (int k2 = 0; k2 <= s / 2; ++k2)
    for (int k1 = 0; k1 < s; ++k1)
      div_hat.at(0, k1, k2) = im * deriv_k1(k1, s) * u_hat.at(0, k1, k2) +
                              im * deriv_k2(k2, s) * v_hat.at(0, k1, k2);
  return irfft2(div_hat).data.cwiseAbs().maxCoeff();
}

Field ns_vorticity_step(const Field& omega, double nu, double dt, const Field* forcing,
                        bool* cfl_warn) {
  require_vorticity(omega);
  if (!(nu > 0.0) || !(dt > 0.0)) throw ConfigError("ns: nu and dt must be positive");
  Spectrum w = rfft2(omega);
  w.at(0, 0, 0) = 0.0;
  if (cfl_warn) {
    const double h = kTwoPi / omega.grid;
    *cfl_warn = ns_max_velocity(omega) * dt / h > 0.5;
  }
  Spectrum f_hat;
  const Spectrum* f_ptr = nullptr;
  if (forcing) {
    f_hat = rfft2(*forcing);
    f_hat.at(0, 0, 0) = 0.0;
    f_ptr = &f_hat;
  }
  const Spectrum r1 = vorticity_rhs(w, nu, f_ptr);
  Spectrum w2(1, omega.grid);
  w2.data = w.data + (0.5 * dt) * r1.data;
  const Spectrum r2 = vorticity_rhs(w2, nu, f_ptr);
  Spectrum w3(1, omega.grid);
  w3.data = w.data + (0.5 * dt) * r2.data;
  const Spectrum r3 = vorticity_rhs(w3, nu, f_ptr);
  Spectrum w4(1, omega.grid);
  w4.data = w.data + dt * r3.data;
  const Spectrum r4 = vorticity_rhs(w4, nu, f_ptr);
  Spectrum out(1, omega.grid);
  out.data = w.data + (dt / 6.0) * (r1.data + 2.0 * r2.data + 2.0 * r3.data + r4.data);
  out.at(0, 0, 0) = 0.0;
  return irfft2(out);
}

Field sine_velocity(int grid, const std::vector<SineMode>& modes, double v_bar) {
  Field vel(2, grid);
  for (const auto& m : modes) {
    const double k2abs = static_cast<double>(m.k1) * m.k1 + static_cast<double>(m.k2) * m.k2;
    if (k2abs == 0.0) throw ConfigError("sine_velocity: zero wavevector");
    const double amp = v_bar / k2abs;
    for (int i1 = 0; i1 < grid; ++i1)
      for (int i0 = 0; i0 < grid; ++i0) {
        const double arg =
            kTwoPi * (m.k1 * static_cast<double>(i0) + m.k2 * static_cast<double>(i1)) / grid +
            m.phase;
        const double s = amp * std::sin(arg);
        vel.at(0, i0, i1) += s * m.dir1;
        vel.at(1, i0, i1) += s * m.dir2;
      }
  }
  return vel;
}

Field helmholtz_project(const Field& velocity) {
  if (velocity.channels() != 2)
    throw ConfigError("helmholtz_project: expected 2 channels (u, v)");
  const int s = velocity.grid;
  Field u(1, s), v(1, s);
  u.data = velocity.data.row(0);
  v.data = velocity.data.row(1);
  Spectrum u_hat = rfft2(u), v_hat = rfft2(v);
  for (int k2 = 0; k2 <= s / 2; ++k2)
    for (int k1 = 0; k1 < s; ++k1) {
      const double a = deriv_k1(k1, s), b = deriv_k2(k2, s);
      const double kk = a * a + b * b;
      if (kk == 0.0) continue;
      const std::complex<double> dot =
          (a * u_hat.at(0, k1, k2) + b * v_hat.at(0, k1, k2)) / kk;
      u_hat.at(0, k1, k2) -= a * dot;
      v_hat.at(0, k1, k2) -= b * dot;
    }
  Field out(2, s);
  out.data.row(0) = irfft2(u_hat).data.row(0);
  out.data.row(1) = irfft2(v_hat).data.row(0);
  return out;
}

Field velocity_to_vorticity(const Field& velocity) {
  if (velocity.channels() != 2)
    throw ConfigError("velocity_to_vorticity: expected 2 channels (u, v)");
  const int s = velocity.grid;
  Field u(1, s), v(1, s);
  u.data = velocity.data.row(0);
  v.data = velocity.data.row(1);
  const Spectrum u_hat = rfft2(u), v_hat = rfft2(v);
  Spectrum w_hat(1, s);
  const std::complex<double> im(0.0, 1.0);
  for (int k2 = 0; k2 <= s / 2; ++k2)
    for (int k1 = 0; k1 < s; ++k1)
      w_hat.at(0, k1, k2) = im * deriv_k1(k1, s) * v_hat.at(0, k1, k2) -
                            im * deriv_k2(k2, s) * u_hat.at(0, k1, k2);
  return irfft2(w_hat);
}

Field turbulent_velocity(int grid, int n_modes, double v_bar, Rng& rng) {
  if (grid < 16) throw ConfigError("turbulent_init: grid must be at least 16");
  std::vector<SineMode> modes;
  modes.reserve(static_cast<std::size_t>(n_modes));
  for (int i = 0; i < n_modes; ++i) {
    SineMode m;
    do {
      m.k1 = static_cast<int>(rng.next_u64() % 9) - 4;  // components in [-4, 4]
      m.k2 = static_cast<int>(rng.next_u64() % 9) - 4;
    } while (m.k1 == 0 && m.k2 == 0);
    m.phase = rng.uniform(0.0, kTwoPi);
    const double theta = rng.uniform(0.0, kTwoPi);
    m.dir1 = std::cos(theta);
    m.dir2 = std::sin(theta);
    modes.push_back(m);
  }
  return helmholtz_project(sine_velocity(grid, modes, v_bar));
}

Field turbulent_init(int grid, int n_modes, double v_bar, Rng& rng) {
  return velocity_to_vorticity(turbulent_velocity(grid, n_modes, v_bar, rng));
}

void PdeDatasetMeta::validate() const {
  if (problem != "heat" && problem != "ns-vorticity")
    throw ConfigError("dataset: problem must be 'heat' or 'ns-vorticity'");
  if (!is_power_of_two(grid)) throw ConfigError("dataset: grid must be a power of two");
  if (channels != 1) throw ConfigError("dataset: only single-channel problems supported");
  if (!(nu > 0.0)) throw ConfigError("dataset: nu must be positive");
  if (!(dt > 0.0)) throw ConfigError("dataset: dt must be positive");
  if (samples < 1) throw ConfigError("dataset: samples must be positive");
  if (traj_len < 1) throw ConfigError("dataset: traj_len must be positive");
  if (samples % traj_len != 0)
    throw ConfigError("dataset: samples must be a multiple of traj_len");
  if (burn_in < 0 || substeps < 0) throw ConfigError("dataset: negative step counts");
  if (problem == "ns-vorticity" && !(v_bar > 0.0))
    throw ConfigError("dataset: v_bar must be positive");
}

namespace {

// Heat initial condition: white noise low-passed with exp(-|k|^2 / (2 k0^2))
// and normalized to unit rms, so the spectrum concentrates in the retained
// low-frequency window.
Field heat_initial_condition(int grid, Rng& rng) {
  constexpr double k0 = 2.0;
  Field noise(1, grid);
  for (Eigen::Index i = 0; i < noise.data.size(); ++i) noise.data.data()[i] = rng.normal();
  Spectrum s = rfft2(noise);
  for (int k2 = 0; k2 <= grid / 2; ++k2)
    for (int k1 = 0; k1 < grid; ++k1)
      s.at(0, k1, k2) *= std::exp(-ksq(k1, k2, grid) / (2.0 * k0 * k0));
  Field f = irfft2(s);
  const double rms = std::sqrt(f.data.array().square().mean());
  f.data /= rms;
  return f;
}

}  // namespace

Dataset generate_dataset(const PdeDatasetMeta& meta, int* cfl_warnings) {
  meta.validate();
  Dataset ds;
  ds.meta = meta;
  ds.inputs.reserve(static_cast<std::size_t>(meta.samples));
  ds.targets.reserve(static_cast<std::size_t>(meta.samples));
  if (cfl_warnings) *cfl_warnings = 0;
  Rng rng = Rng::stream(meta.seed, "pde-init");
  const int n_traj = meta.samples / meta.traj_len;

  if (meta.problem == "heat") {
    for (int t = 0; t < n_traj; ++t) {
      Field state = heat_initial_condition(meta.grid, rng);
      for (int i = 0; i < meta.traj_len; ++i) {
        Field next = heat_step_analytic(state, meta.nu, meta.dt);
        ds.inputs.push_back(state);
        ds.targets.push_back(next);
        state = std::move(next);
      }
    }
    return ds;
  }

  // ns-vorticity: all initial conditions are drawn first so the CFL-derived
  // substep count is a pure function of the seed.
  std::vector<Field> ics;
  ics.reserve(static_cast<std::size_t>(n_traj));
  double max_u = 0.0;
  for (int t = 0; t < n_traj; ++t) {
    ics.push_back(turbulent_init(meta.grid, 4, meta.v_bar, rng));
    max_u = std::max(max_u, ns_max_velocity(ics.back()));
  }
  int substeps = meta.substeps;
  if (substeps == 0) {
    const double h = kTwoPi / meta.grid;
    const double dt_solver = 0.4 * h / std::max(max_u, 1e-12);
    substeps = std::max(1, static_cast<int>(std::ceil(meta.dt / dt_solver)));
  }
  ds.meta.substeps = substeps;
  const double dts = meta.dt / substeps;
  for (auto& ic : ics) {
    Field w = std::move(ic);
    bool warn = false;
    for (int b = 0; b < meta.burn_in; ++b) {
      w = ns_vorticity_step(w, meta.nu, dts, nullptr, &warn);
      if (warn && cfl_warnings) ++*cfl_warnings;
    }
    for (int i = 0; i < meta.traj_len; ++i) {
      Field prev = w;
      for (int s = 0; s < substeps; ++s) {
        w = ns_vorticity_step(w, meta.nu, dts, nullptr, &warn);
        if (warn && cfl_warnings) ++*cfl_warnings;
      }
      ds.inputs.push_back(std::move(prev));
      ds.targets.push_back(w);
    }
  }
  return ds;
}

}  // namespace freqmoe
