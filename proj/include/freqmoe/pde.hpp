// Copyright (c) 2026 the freqmoe authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "freqmoe/field.hpp"
#include "freqmoe/rng.hpp"

namespace freqmoe {

// Synthetic PDE data on the periodic box [0, 2*pi)^2. Two problems:
//   heat           du/dt = nu * Laplace(u), solved exactly in Fourier space
//   ns-vorticity   dw/dt + u.grad(w) = nu * Laplace(w) + f, pseudo-spectral
//                  RK4 with 2/3-rule dealiasing, velocity from the stream
//                  function, mean vorticity pinned to zero.
// Axis 0 is x (wavenumber k1), axis 1 is y (wavenumber k2).

struct PdeDatasetMeta {
  std::string problem = "heat";  // "heat" | "ns-vorticity"
  int grid = 64;
  int channels = 1;
  double nu = 1e-2;     // heat default; ns default 1e-3
  double dt = 1.0;      // time between input and target
  int samples = 0;      // total (input, target) pairs
  int traj_len = 1;     // pairs per trajectory; samples % traj_len == 0
  std::uint64_t seed = 0;
  double v_bar = 1.0;   // ns initial-velocity scale
  int burn_in = 10;     // ns solver steps discarded before the first pair
  int substeps = 0;     // ns solver steps per pair; 0 = pick by CFL, recorded

  void validate() const;
};

struct Dataset {
  PdeDatasetMeta meta;
  std::vector<Field> inputs;
  std::vector<Field> targets;

  int num_trajectories() const { return meta.traj_len > 0 ? meta.samples / meta.traj_len : 0; }
};

// Exact heat propagator: every Fourier coefficient is scaled by
// exp(-nu |k|^2 dt); the mean is preserved exactly.
Field heat_step_analytic(const Field& f, double nu, double dt);

// One RK4 step of the vorticity equation. cfl_warn, if given, is set when
// max|u| dt / h exceeds 0.5 at the step start (warning, not an error).
Field ns_vorticity_step(const Field& omega, double nu, double dt,
                        const Field* forcing = nullptr, bool* cfl_warn = nullptr);

double ns_max_velocity(const Field& omega);
double ns_kinetic_energy(const Field& omega);

// Velocity divergence via spectral derivatives; max-norm. The projector
// below drives this to roundoff.
double max_divergence(const Field& velocity);

struct SineMode {
  int k1 = 1, k2 = 0;
  double phase = 0.0;
  double dir1 = 0.0, dir2 = 1.0;  // velocity direction of this mode
};

// v(x) = sum_i (v_bar / |k_i|^2) dir_i sin(k_i . x + phase_i); 2 channels.
Field sine_velocity(int grid, const std::vector<SineMode>& modes, double v_bar);

// Divergence-free part (spectral Helmholtz projection); mean flow kept.
Field helmholtz_project(const Field& velocity);

// w = dv/dx - du/dy, spectral.
Field velocity_to_vorticity(const Field& velocity);

// Superposition of n random sinusoidal modes with amplitude v_bar/|k|^2,
// projected divergence-free: the turbulence-style initial condition.
Field turbulent_velocity(int grid, int n_modes, double v_bar, Rng& rng);
Field turbulent_init(int grid, int n_modes, double v_bar, Rng& rng);

// Rolls trajectories with the problem's solver and emits single-step pairs
// in trajectory order. Deterministic given meta.seed; for "ns-vorticity"
// with substeps = 0 the CFL-derived substep count is written back to the
// returned meta. cfl_warnings, if given, counts violations seen.
Dataset generate_dataset(const PdeDatasetMeta& meta, int* cfl_warnings = nullptr);

}  // namespace freqmoe
