#pragma once

// Sensor budget: nuclear polarization transfer, repeated-readout detection
// efficiency and the shot-noise sensitivity including its density sweep.

#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <vector>

#include "nvgyro/noise.hpp"
#include "nvgyro/spincore.hpp"

namespace nvgyro::sensor {

/// Mean photons per readout, back-solved so that 2(n0+n1)/(n0-n1)^2 = 1500
/// with n0 + n1 = 0.05. This gives C = 0.25 at 100 readouts.
inline constexpr double kDefaultN0 = 0.02908248290463863;
inline constexpr double kDefaultN1 = 0.02091751709536137;

struct ReadoutModel {
  double n0 = kDefaultN0;      // photons per readout, m_S = 0
  double n1 = kDefaultN1;      // photons per readout, m_S = +-1
  std::size_t n_r = 100;       // repeated readouts
  double eta_m = 1.0;          // collection efficiency scaling both counts
  double t_single_s = 1.5e-6;  // one readout
  std::size_t max_n_r = 100;   // cap set by nuclear relaxation under illumination

  double readout_time() const { return static_cast<double>(n_r) * t_single_s; }
  void validate() const;
};

/// C_{n_r} = (1 + 2(n0+n1) / (n_r (n0-n1)^2))^{-1/2}; throws PreconditionError
/// when n0 == n1.
double detection_efficiency(const ReadoutModel& r);

struct SensitivityBudget {
  double T2_s = 1e-3;          // interrogation / coherence time
  double dead_time_s = 152e-6;
  double n_spins = 2.5e14;
  double C = 0.25;

  void validate() const;
};

struct Sensitivity {
  double rad_s_per_rthz = 0.0;
  double mdeg_s_per_rthz = 0.0;
};

/// sqrt(T2 + t_d) / (C T2 sqrt(N)).
Sensitivity sensitivity(const SensitivityBudget& b);

double rad_to_mdeg(double rad_per_s);
double mdeg_to_rad(double mdeg_per_s);

/// N = n_NV V / 4 (one family out of four). Density in cm^-3, volume in mm^3.
double spins_per_family(double density_cm3, double volume_mm3);

/// (2.5 x 2.5) mm^2 x 150 um.
inline constexpr double kDefaultChipVolumeMm3 = 2.5 * 2.5 * 0.15;

struct ReadoutOptimum {
  std::size_t n_r = 0;                 // within [1, max_n_r]
  double eta_rad = 0.0;
  std::size_t n_r_unconstrained = 0;   // search up to `search_limit`
  double eta_rad_unconstrained = 0.0;
};

/// n_r minimizing eta with t_d = n_r t_single + t_pol and C = C_{n_r}.
ReadoutOptimum optimal_readout_count(const ReadoutModel& r, double T2_s, double t_pol_s,
                                     std::size_t search_limit = 100000);

struct PolarizationDrive {
  double rabi_hz = 500e6;      // longitudinal Rabi frequency Omega_R
  double t2star_e_s = 200e-9;  // electron dephasing
  double tau_c_e_s = 1e-6;     // correlation time of the electron noise
  bool two_step = false;

  void validate() const;
};

/// t_pol = pi (Delta + gamma_e b + Q) / (A Omega_R) with all symbols read as
/// angular frequencies, i.e. (Delta + gamma_e b + Q) / (2 A Omega_R) for
/// inputs in Hz.
double polarization_time(const spin::PhysicalConstants& c, const PolarizationDrive& d);

/// The same expression evaluated literally with Hz inputs (2 pi longer).
double polarization_time_hz_reading(const spin::PhysicalConstants& c,
                                    const PolarizationDrive& d);

/// Effective electron-nuclear flip-flop coupling (Hz) that completes the
/// transfer in polarization_time.
double flip_flop_coupling_hz(const spin::PhysicalConstants& c, const PolarizationDrive& d);

struct PolarizationOptions {
  std::size_t steps = 400;  // per transfer step
  std::size_t trials = 100;
  std::uint64_t seed = 1;
  unsigned threads = 1;
  bool dephasing = true;    // electron OU noise from the drive's T2*_e
};

struct PolarizationTrajectory {
  std::vector<double> times;         // s
  std::vector<double> polarization;  // (P(m_I=0) - 1/3) / (2/3), ensemble mean
  std::vector<double> stderr_;
  double final_polarization() const { return polarization.back(); }
};

/// Transfer of nuclear polarization from an optically pumped electron.
/// Each step lasts `duration_s`; two_step re-pumps the electron and repeats,
/// so the trajectory spans 2 duration_s.
PolarizationTrajectory simulate_polarization_transfer(const spin::PhysicalConstants& c,
                                                      const PolarizationDrive& d,
                                                      double duration_s,
                                                      const PolarizationOptions& opt = {});

enum class Scheme { Ramsey, Echo };

struct DensitySweepOptions {
  double volume_mm3 = kDefaultChipVolumeMm3;
  double interrogation_s = 1e-3;
  double echo_T2_s = 1e-3;       // readout-electron limited coherence
  double p1_per_nv = 10.0;       // bath density = p1_per_nv * n_NV
  double C = 0.25;
  double dead_time_s = 152e-6;
  noise::BathModel bath;         // density overwritten per grid point
  unsigned threads = 1;
};

/// Ramsey coherence times keyed by bath density. Populated before a sweep,
/// read afterwards.
class BathT2Cache {
 public:
  double get_or_compute(const noise::BathModel& bath, unsigned threads);
  std::size_t size() const;

 private:
  mutable std::mutex mutex_;
  std::map<double, double> values_;
};

struct DensityPoint {
  double density_cm3 = 0.0;
  double n_spins = 0.0;
  double coherence_s = 0.0;    // T2 (echo) or bath T2* (Ramsey)
  double effective_T_s = 0.0;  // min(interrogation, coherence)
  Sensitivity eta;
};

std::vector<DensityPoint> sensitivity_vs_density(const std::vector<double>& densities_cm3,
                                                 Scheme scheme,
                                                 const DensitySweepOptions& opt,
                                                 BathT2Cache& cache);

}  // namespace nvgyro::sensor
