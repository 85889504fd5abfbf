#include "nvgyro/sensor.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include "nvgyro/errors.hpp"
#include "nvgyro/random.hpp"

namespace nvgyro::sensor {

namespace {

constexpr double kPi = std::numbers::pi;

using Mat9 = Eigen::Matrix<std::complex<double>, 9, 9>;

// Joint indices (3 e + n over (+1, 0, -1)).
constexpr int kZeroPlus = 3;   // |0, +1>
constexpr int kPlusZero = 1;   // |+1, 0>
constexpr int kZeroMinus = 5;  // |0, -1>
constexpr int kMinusZero = 7;  // |-1, 0>

// exp(-i 2 pi H dt) for H = [[d1, g], [g, d2]] in Hz.
Eigen::Matrix2cd two_level_propagator(double d1, double d2, double g, double dt) {
  const double h0 = 0.5 * (d1 + d2);
  const double hz = 0.5 * (d1 - d2);
  const double hn = std::hypot(hz, g);
  const double th = 2.0 * kPi * hn * dt;
  const std::complex<double> i(0.0, 1.0);
  Eigen::Matrix2cd u;
  if (hn == 0.0) {
    u.setIdentity();
  } else {
    const double s = std::sin(th) / hn, co = std::cos(th);
    u(0, 0) = co - i * s * hz;
    u(1, 1) = co + i * s * hz;
    u(0, 1) = -i * s * g;
    u(1, 0) = -i * s * g;
  }
  return u * std::polar(1.0, -2.0 * kPi * h0 * dt);
}

// One time step of the flip-flop Hamiltonian plus an electron shift x (rad/s).
Mat9 step_propagator(double g_hz, double x_rad_s, double dt) {
  const double f = x_rad_s / (2.0 * kPi);
  Mat9 u = Mat9::Zero();
  const int ms[3] = {+1, 0, -1};
  for (int idx = 0; idx < 9; ++idx) {
    u(idx, idx) = std::polar(1.0, -2.0 * kPi * f * ms[idx / 3] * dt);
  }
  const auto up = two_level_propagator(0.0, f, g_hz, dt);
  const auto dn = two_level_propagator(0.0, -f, g_hz, dt);
  const int a[2] = {kZeroPlus, kPlusZero};
  const int b[2] = {kZeroMinus, kMinusZero};
  for (int r = 0; r < 2; ++r) {
    for (int q = 0; q < 2; ++q) {
      u(a[r], a[q]) = up(r, q);
      u(b[r], b[q]) = dn(r, q);
    }
  }
  return u;
}

double nuclear_polarization(const Mat9& rho) {
  double p0 = 0.0;
  for (int e = 0; e < 3; ++e) p0 += rho(3 * e + 1, 3 * e + 1).real();
  return (p0 - 1.0 / 3.0) / (2.0 / 3.0);
}

// Electron back to |0> keeping the nuclear reduced state.
Mat9 repump_electron(const Mat9& rho) {
  Eigen::Matrix3cd nuc = Eigen::Matrix3cd::Zero();
  for (int e = 0; e < 3; ++e) nuc += rho.block<3, 3>(3 * e, 3 * e);
  Mat9 out = Mat9::Zero();
  out.block<3, 3>(3, 3) = nuc;
  return out;
}

double eta_for(double T, double t_d, double C, double N) {
  return std::sqrt(T + t_d) / (C * T * std::sqrt(N));
}

}  // namespace

void ReadoutModel::validate() const {
  if (!(n1 >= 0.0) || !(n0 > n1)) throw PreconditionError("readout counts need n0 > n1 >= 0");
  if (n_r < 1) throw PreconditionError("n_r must be at least 1");
  if (!(eta_m > 0.0) || eta_m > 1.0) throw PreconditionError("eta_m must be in (0, 1]");
  if (!(t_single_s > 0.0)) throw PreconditionError("t_single must be positive");
  if (max_n_r < 1) throw PreconditionError("max_n_r must be at least 1");
}

double detection_efficiency(const ReadoutModel& r) {
  if (r.n0 == r.n1) throw PreconditionError("zero readout contrast: n0 == n1");
  if (r.n_r < 1) throw PreconditionError("n_r must be at least 1");
  const double n0 = r.n0 * r.eta_m, n1 = r.n1 * r.eta_m;
  const double d = n0 - n1;
  return 1.0 / std::sqrt(1.0 + 2.0 * (n0 + n1) / (static_cast<double>(r.n_r) * d * d));
}

void SensitivityBudget::validate() const {
  if (!(T2_s > 0.0) || !(dead_time_s >= 0.0) || !(n_spins > 0.0) || !(C > 0.0) || C > 1.0) {
    throw PreconditionError("sensitivity budget needs T2, N, C > 0, C <= 1 and t_d >= 0");
  }
}

Sensitivity sensitivity(const SensitivityBudget& b) {
  b.validate();
  const double eta = eta_for(b.T2_s, b.dead_time_s, b.C, b.n_spins);
  return {eta, rad_to_mdeg(eta)};
}

double rad_to_mdeg(double rad_per_s) { return rad_per_s * 180.0 / kPi * 1e3; }
double mdeg_to_rad(double mdeg_per_s) { return mdeg_per_s * 1e-3 * kPi / 180.0; }

double spins_per_family(double density_cm3, double volume_mm3) {
  if (!(density_cm3 > 0.0) || !(volume_mm3 > 0.0)) {
    throw PreconditionError("density and volume must be positive");
  }
  return density_cm3 * volume_mm3 * 1e-3 / 4.0;
}

ReadoutOptimum optimal_readout_count(const ReadoutModel& r, double T2_s, double t_pol_s,
                                     std::size_t search_limit) {
  r.validate();
  if (!(T2_s > 0.0) || !(t_pol_s >= 0.0)) throw PreconditionError("need T2 > 0, t_pol >= 0");
  ReadoutOptimum best;
  best.eta_rad = best.eta_rad_unconstrained = std::numeric_limits<double>::infinity();
  ReadoutModel m = r;
  const std::size_t limit = std::max(search_limit, r.max_n_r);
  for (std::size_t n = 1; n <= limit; ++n) {
    m.n_r = n;
    const double eta = eta_for(T2_s, m.readout_time() + t_pol_s, detection_efficiency(m), 1.0);
    if (eta < best.eta_rad_unconstrained) {
      best.eta_rad_unconstrained = eta;
      best.n_r_unconstrained = n;
    }
    if (n <= r.max_n_r && eta < best.eta_rad) {
      best.eta_rad = eta;
      best.n_r = n;
    }
  }
  return best;
}

void PolarizationDrive::validate() const {
  if (!(rabi_hz > 0.0)) throw PreconditionError("Rabi frequency must be positive");
  if (!(t2star_e_s > 0.0)) throw PreconditionError("T2*_e must be positive");
  if (!(tau_c_e_s > 0.0)) throw PreconditionError("electron noise tau_c must be positive");
}

double polarization_time(const spin::PhysicalConstants& c, const PolarizationDrive& d) {
  return polarization_time_hz_reading(c, d) / (2.0 * kPi);
}

double polarization_time_hz_reading(const spin::PhysicalConstants& c,
                                    const PolarizationDrive& d) {
  c.validate();
  d.validate();
  const double detuning =
      c.zero_field_splitting_hz + c.gamma_e_hz_per_gauss * c.bias_gauss + c.quadrupole_hz;
  return kPi * detuning / (c.hyperfine_hz * d.rabi_hz);
}

double flip_flop_coupling_hz(const spin::PhysicalConstants& c, const PolarizationDrive& d) {
  // Population transfer sin^2(2 pi g t) is complete at 2 pi g t_pol = pi/2.
  return 1.0 / (4.0 * polarization_time(c, d));
}

PolarizationTrajectory simulate_polarization_transfer(const spin::PhysicalConstants& c,
                                                      const PolarizationDrive& d,
                                                      double duration_s,
                                                      const PolarizationOptions& opt) {
  d.validate();
  if (!(duration_s >= 0.0) || !std::isfinite(duration_s)) {
    throw PreconditionError("duration must be finite and non-negative");
  }
  if (opt.steps < 1 || opt.trials < 1) throw PreconditionError("steps and trials must be >= 1");

  const double g = flip_flop_coupling_hz(c, d);
  const std::size_t stages = d.two_step ? 2 : 1;
  const std::size_t total = opt.steps * stages;
  const double dt = duration_s / static_cast<double>(opt.steps);
  const bool noisy = opt.dephasing && duration_s > 0.0;
  const std::size_t trials = noisy ? opt.trials : 1;

  Mat9 rho0 = Mat9::Zero();
  for (int n = 0; n < 3; ++n) rho0(3 + n, 3 + n) = 1.0 / 3.0;

  const Mat9 quiet = step_propagator(g, 0.0, dt);
  std::vector<std::vector<double>> traj(trials, std::vector<double>(total + 1));
  parallel_for(trials, opt.threads, [&](std::size_t t) {
    std::vector<double> x;
    if (noisy) {
      auto ou = noise::ou_for_t2star(d.t2star_e_s, d.tau_c_e_s, derive_seed(opt.seed, t));
      x = noise::sample_ou_path(ou, dt, total);
    }
    Mat9 rho = rho0;
    auto& out = traj[t];
    out[0] = nuclear_polarization(rho);
    for (std::size_t k = 0; k < total; ++k) {
      if (k == opt.steps && d.two_step) rho = repump_electron(rho);
      const Mat9 u = noisy ? step_propagator(g, x[k], dt) : quiet;
      rho = u * rho * u.adjoint();
      out[k + 1] = nuclear_polarization(rho);
    }
  });

  PolarizationTrajectory result;
  result.times.resize(total + 1);
  result.polarization.resize(total + 1);
  result.stderr_.assign(total + 1, 0.0);
  const double n = static_cast<double>(trials);
  for (std::size_t k = 0; k <= total; ++k) {
    result.times[k] = dt * static_cast<double>(k);
    CompensatedSum s, sq;
    for (const auto& tr : traj) {
      s.add(tr[k]);
      sq.add(tr[k] * tr[k]);
    }
    const double mean = s.value() / n;
    result.polarization[k] = std::clamp(mean, 0.0, 1.0);
    if (trials > 1) {
      const double var = std::max(0.0, (sq.value() - n * mean * mean) / (n - 1.0));
      result.stderr_[k] = std::sqrt(var / n);
    }
  }
  return result;
}

double BathT2Cache::get_or_compute(const noise::BathModel& bath, unsigned threads) {
  {
    std::lock_guard<std::mutex> lock(mutex_);
    const auto it = values_.find(bath.density_cm3);
    if (it != values_.end()) return it->second;
  }
  const double t2 = noise::bath_ramsey_t2star(bath, threads);
  std::lock_guard<std::mutex> lock(mutex_);
  values_.emplace(bath.density_cm3, t2);
  return t2;
}

std::size_t BathT2Cache::size() const {
  std::lock_guard<std::mutex> lock(mutex_);
  return values_.size();
}

std::vector<DensityPoint> sensitivity_vs_density(const std::vector<double>& densities_cm3,
                                                 Scheme scheme,
                                                 const DensitySweepOptions& opt,
                                                 BathT2Cache& cache) {
  if (densities_cm3.empty()) throw PreconditionError("density grid is empty");
  if (!(opt.interrogation_s > 0.0) || !(opt.echo_T2_s > 0.0) || !(opt.p1_per_nv > 0.0)) {
    throw PreconditionError("interrogation time, echo T2 and P1 ratio must be positive");
  }
  std::vector<double> coherence(densities_cm3.size(), opt.echo_T2_s);
  if (scheme == Scheme::Ramsey) {
    // Fill the cache before the sweep; afterwards it is only read.
    for (std::size_t i = 0; i < densities_cm3.size(); ++i) {
      noise::BathModel bath = opt.bath;
      bath.density_cm3 = opt.p1_per_nv * densities_cm3[i];
      coherence[i] = cache.get_or_compute(bath, opt.threads);
      if (!std::isfinite(coherence[i])) {
        throw ConfigurationError("bath Ramsey curve never reaches 1/e on its tau grid");
      }
    }
  }

  std::vector<DensityPoint> out(densities_cm3.size());
  parallel_for(densities_cm3.size(), opt.threads, [&](std::size_t i) {
    DensityPoint p;
    p.density_cm3 = densities_cm3[i];
    p.n_spins = spins_per_family(p.density_cm3, opt.volume_mm3);
    p.coherence_s = coherence[i];
    p.effective_T_s = std::min(opt.interrogation_s, p.coherence_s);
    p.eta = sensitivity({p.effective_T_s, opt.dead_time_s, p.n_spins, opt.C});
    out[i] = p;
  });
  return out;
}

}  // namespace nvgyro::sensor
