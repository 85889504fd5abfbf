#pragma once

// Rotation-sensitive pulse sequences on the 14N spin and the nuclear to
// electron readout mapping.
//
// The simulation frame is the diamond frame. Pulses from the off-chip coil
// are fixed in the lab, so a pulse applied at time t has its axis phase
// shifted to -Omega t. The second Ramsey pulse therefore sits at -Omega tau,
// which reproduces the additive phase (gamma_N b + Omega) t.

#include <Eigen/Dense>
#include <optional>
#include <vector>

#include "nvgyro/noise.hpp"
#include "nvgyro/spincore.hpp"

namespace nvgyro::seq {

struct SequenceTiming {
  double tau_s = 0.0;
  double t_map_s = 230e-9;
  double t_pol_s = 2e-6;
  double t_ro_s = 150e-6;

  double dead_time() const { return t_ro_s + t_pol_s; }
  void validate() const;
};

struct NoiseModel {
  std::optional<noise::OUProcess> ou;  // nuclear frequency noise, rad/s
  std::optional<double> nv_t1_s;       // NV electron T1
  std::size_t trials = 1;              // Monte Carlo realizations when ou is set
  unsigned threads = 1;

  bool stochastic() const { return ou.has_value(); }
  void validate() const;
};

struct RamseyResult {
  spin::SpinState final_state;     // noiseless final state
  Eigen::VectorXd populations;     // ensemble-averaged populations
  double signal = 1.0;             // populations at m_I = 0
  double signal_stderr = 0.0;
  std::size_t n_trials = 1;
};

/// One element of a nuclear sequence: a pulse or a free-evolution propagator.
struct SequenceStep {
  spin::OperatorMatrix op;
  double free_duration_s = 0.0;  // > 0 marks free evolution (noise accumulates)
};

/// Applies the steps to |0> in order. OU phase noise is added to each free
/// segment; the T1 factor damps the coherences before the final step, which
/// should be the readout pulse.
RamseyResult execute_sequence(const std::vector<SequenceStep>& steps, const NoiseModel& noise);

/// Nuclear Hamiltonian during free evolution in the frame rotating at Q
/// (Hz): (gamma_N b + detuning) Sz.
spin::OperatorMatrix free_evolution_hamiltonian(const spin::PhysicalConstants& c,
                                                double detuning_hz = 0.0);

/// pi/2 (0), free tau, pi/2 (-Omega tau). `detuning_hz` is an extra static
/// shift of the nuclear precession.
RamseyResult run_ramsey_aligned(double omega_rad_s, const SequenceTiming& timing,
                                const spin::PhysicalConstants& c,
                                const NoiseModel& noise = {}, double detuning_hz = 0.0);

struct EchoOptions {
  double axis_phase = 0.0;     // echo axis, fixed in the diamond frame
  double carrier_phase = 0.0;  // rf carrier phase of the on-chip source
};

/// Ramsey with a diamond-frame refocusing pulse (spin-1 flip pi, the "2 pi"
/// pulse of the two-level transition) at tau/2.
RamseyResult run_echo_aligned(double omega_rad_s, double detuning_hz,
                              const SequenceTiming& timing, const spin::PhysicalConstants& c,
                              const EchoOptions& echo = {}, const NoiseModel& noise = {});

/// The analytic post-Ramsey state for phase omega_t with b = 0:
/// (-sin e^{i w}/sqrt2, -cos w, sin e^{-i w}/sqrt2) on (+1, 0, -1).
spin::SpinState ramsey_closed_form(double omega_t);

/// Ideal hyperfine-selective mapping: a spin-1 pi/2 rotation of the electron
/// about x conditioned on m_I = +-1. Nuclear input is paired with electron |0>.
spin::SpinState map_to_electron(const spin::SpinState& nuclear_state,
                                const spin::PhysicalConstants& c);

/// Joint-basis overload; requires the electron to be in m_S = 0.
spin::SpinState map_to_electron_joint(const spin::SpinState& joint_state,
                                      const spin::PhysicalConstants& c);

/// P(m_S = 0) of a joint state.
double electron_signal(const spin::SpinState& joint_state);

/// exp(-(t_map / T2*_e)^2).
double mapping_contrast(double t_map_s, double t2star_e_s);

/// Scales the fringe about its midpoint: 1/2 + contrast (signal - 1/2).
double apply_contrast(double signal, double contrast);

}  // namespace nvgyro::seq
