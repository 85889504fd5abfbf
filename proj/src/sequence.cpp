#include "nvgyro/sequence.hpp"

#include <cmath>
#include <numbers>
#include <vector>

#include "nvgyro/errors.hpp"
#include "nvgyro/random.hpp"

namespace nvgyro::seq {

using spin::cplx;
using spin::LevelBasis;
using spin::OperatorMatrix;
using spin::SpinState;

namespace {

Eigen::Matrix3cd phase_kick(double phi) {
  Eigen::Matrix3cd m = Eigen::Matrix3cd::Zero();
  m(0, 0) = std::polar(1.0, -phi);
  m(1, 1) = 1.0;
  m(2, 2) = std::polar(1.0, phi);
  return m;
}

}  // namespace

RamseyResult execute_sequence(const std::vector<SequenceStep>& steps, const NoiseModel& noise) {
  noise.validate();
  if (steps.empty()) throw PreconditionError("sequence has no steps");
  const auto& basis = LevelBasis::nuclear();
  const SpinState initial = SpinState::basis_state(basis, basis.index_of(0, 0));

  SpinState noiseless = initial;
  double total_time = 0.0;
  std::vector<double> segments;
  for (const auto& s : steps) {
    noiseless = spin::apply(s.op, noiseless);
    if (s.free_duration_s > 0.0) {
      total_time += s.free_duration_s;
      segments.push_back(s.free_duration_s);
    }
  }

  const double damping =
      noise.nv_t1_s ? noise::nv_t1_dephasing_factor(*noise.nv_t1_s, total_time) : 1.0;
  const Eigen::Matrix3cd last = steps.back().op.entries();

  // Evolves one realization; phases[k] is added to free segment k.
  auto realize = [&](const std::vector<double>* phases) {
    Eigen::Vector3cd v = initial.amplitudes();
    std::size_t seg = 0;
    for (std::size_t i = 0; i + 1 < steps.size(); ++i) {
      v = steps[i].op.entries() * v;
      if (steps[i].free_duration_s > 0.0 && phases) v = phase_kick((*phases)[seg++]) * v;
    }
    Eigen::Matrix3cd rho = v * v.adjoint();
    for (int r = 0; r < 3; ++r) {
      for (int q = 0; q < 3; ++q) {
        if (r != q) rho(r, q) *= damping;
      }
    }
    const Eigen::Matrix3cd out = last * rho * last.adjoint();
    return Eigen::Vector3d(out(0, 0).real(), out(1, 1).real(), out(2, 2).real());
  };

  RamseyResult result{noiseless, Eigen::VectorXd::Zero(3), 0.0, 0.0, 1};
  if (!noise.stochastic()) {
    result.populations = realize(nullptr);
    result.signal = result.populations(1);
    return result;
  }

  const auto& ou = *noise.ou;
  std::vector<Eigen::Vector3d> per_trial(noise.trials);
  parallel_for(noise.trials, noise.threads, [&](std::size_t t) {
    Rng rng(derive_seed(ou.seed, t));
    const auto phases = noise::sample_ou_phases(ou, segments, rng);
    per_trial[t] = realize(&phases);
  });

  CompensatedSum p[3];
  CompensatedSum sq;
  for (const auto& pt : per_trial) {
    for (int k = 0; k < 3; ++k) p[k].add(pt(k));
    sq.add(pt(1) * pt(1));
  }
  const double n = static_cast<double>(noise.trials);
  for (int k = 0; k < 3; ++k) result.populations(k) = p[k].value() / n;
  result.signal = result.populations(1);
  if (noise.trials > 1) {
    const double var =
        std::max(0.0, (sq.value() - n * result.signal * result.signal) / (n - 1.0));
    result.signal_stderr = std::sqrt(var / n);
  }
  result.n_trials = noise.trials;
  return result;
}

void SequenceTiming::validate() const {
  for (double t : {tau_s, t_map_s, t_pol_s, t_ro_s}) {
    if (!(t >= 0.0) || !std::isfinite(t)) {
      throw PreconditionError("sequence times must be finite and non-negative");
    }
  }
}

void NoiseModel::validate() const {
  if (ou) ou->validate();
  if (nv_t1_s && !(*nv_t1_s > 0.0)) throw PreconditionError("NV T1 must be positive");
  if (trials < 1) throw PreconditionError("noise trials must be at least 1");
}

OperatorMatrix free_evolution_hamiltonian(const spin::PhysicalConstants& c, double detuning_hz) {
  return spin::rotating_frame_hamiltonian(c, c.quadrupole_hz, detuning_hz);
}

RamseyResult run_ramsey_aligned(double omega_rad_s, const SequenceTiming& timing,
                                const spin::PhysicalConstants& c, const NoiseModel& noise,
                                double detuning_hz) {
  timing.validate();
  c.validate();
  if (!std::isfinite(omega_rad_s) || !std::isfinite(detuning_hz)) {
    throw PreconditionError("rotation rate and detuning must be finite");
  }
  const double tau = timing.tau_s;
  const auto h = free_evolution_hamiltonian(c, detuning_hz);
  const double half_pi = std::numbers::pi / 2.0;
  std::vector<SequenceStep> steps{
      {spin::rf_pulse_unitary(0.0, half_pi)},
      {spin::evolution_operator(h, tau), tau},
      {spin::rf_pulse_unitary(-omega_rad_s * tau, half_pi)},
  };
  return execute_sequence(steps, noise);
}

RamseyResult run_echo_aligned(double omega_rad_s, double detuning_hz,
                              const SequenceTiming& timing, const spin::PhysicalConstants& c,
                              const EchoOptions& echo, const NoiseModel& noise) {
  timing.validate();
  c.validate();
  if (!std::isfinite(omega_rad_s) || !std::isfinite(detuning_hz)) {
    throw PreconditionError("rotation rate and detuning must be finite");
  }
  const double tau = timing.tau_s;
  const auto h = free_evolution_hamiltonian(c, detuning_hz);
  const auto half = spin::evolution_operator(h, tau / 2.0);
  const double pi = std::numbers::pi;
  std::vector<SequenceStep> steps{
      {spin::rf_pulse_unitary(0.0, pi / 2.0)},
      {half, tau / 2.0},
      {spin::rf_pulse_unitary(echo.axis_phase, pi, spin::Transition::Both, echo.carrier_phase)},
      {half, tau / 2.0},
      {spin::rf_pulse_unitary(-omega_rad_s * tau, pi / 2.0)},
  };
  return execute_sequence(steps, noise);
}

SpinState ramsey_closed_form(double omega_t) {
  const double s = std::sin(omega_t), co = std::cos(omega_t);
  const double r = 1.0 / std::sqrt(2.0);
  Eigen::VectorXcd v(3);
  v(0) = -s * std::polar(1.0, omega_t) * r;
  v(1) = -co;
  v(2) = s * std::polar(1.0, -omega_t) * r;
  return SpinState(LevelBasis::nuclear(), v);
}

SpinState map_to_electron(const SpinState& nuclear_state, const spin::PhysicalConstants& c) {
  if (nuclear_state.basis().kind() != spin::BasisKind::Nuclear) {
    throw std::logic_error("map_to_electron: expected a nuclear-basis state");
  }
  const auto& joint = LevelBasis::joint();
  Eigen::VectorXcd v = Eigen::VectorXcd::Zero(9);
  for (int n = 0; n < 3; ++n) v(joint.index_of(0, LevelBasis::nuclear().nuclear_m()[n])) =
      nuclear_state.amplitude(static_cast<std::size_t>(n));
  return map_to_electron_joint(SpinState(joint, v), c);
}

SpinState map_to_electron_joint(const SpinState& joint_state, const spin::PhysicalConstants& c) {
  c.validate();
  const auto& joint = LevelBasis::joint();
  if (joint_state.basis().kind() != spin::BasisKind::Joint) {
    throw std::logic_error("map_to_electron_joint: expected a joint-basis state");
  }
  double excited = 0.0;
  for (std::size_t i = 0; i < 9; ++i) {
    if (joint.electron_m()[i] != 0) excited += std::norm(joint_state.amplitude(i));
  }
  if (excited > 1e-12) throw PreconditionError("electron must start in m_S = 0");

  // exp(-i pi/2 Sx) on the electron: |0> -> -i (|+1> + |-1>) / sqrt2.
  const cplx a(0.0, -1.0 / std::sqrt(2.0));
  Eigen::VectorXcd out = Eigen::VectorXcd::Zero(9);
  for (int mi : {+1, 0, -1}) {
    const cplx amp = joint_state.amplitude(joint.index_of(0, mi));
    if (mi == 0) {
      out(joint.index_of(0, 0)) += amp;
    } else {
      out(joint.index_of(+1, mi)) += a * amp;
      out(joint.index_of(-1, mi)) += a * amp;
    }
  }
  return SpinState(joint, out);
}

double electron_signal(const SpinState& joint_state) {
  if (joint_state.basis().kind() != spin::BasisKind::Joint) {
    throw std::logic_error("electron_signal: expected a joint-basis state");
  }
  const auto& m = joint_state.basis().electron_m();
  double p = 0.0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (m[i] == 0) p += std::norm(joint_state.amplitude(i));
  }
  return std::min(1.0, std::max(0.0, p));
}

double mapping_contrast(double t_map_s, double t2star_e_s) {
  if (!(t_map_s >= 0.0)) throw PreconditionError("t_map must be non-negative");
  if (!(t2star_e_s > 0.0)) throw PreconditionError("T2*_e must be positive");
  const double x = t_map_s / t2star_e_s;
  return std::exp(-x * x);
}

double apply_contrast(double signal, double contrast) {
  return 0.5 + contrast * (signal - 0.5);
}

}  // namespace nvgyro::seq
