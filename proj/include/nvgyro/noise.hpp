#pragma once

// Decoherence models: classical Ornstein-Uhlenbeck frequency noise, NV T1
// induced nuclear dephasing, and a desk-scale dipolar electron-spin bath.
//
// Frequency noise x(t) is in rad/s; accumulated phase is the integral of x.

#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "nvgyro/random.hpp"

namespace nvgyro::noise {

struct OUProcess {
  double sigma_rad_s = 0.0;  // stationary standard deviation
  double tau_c_s = 0.0;      // correlation time; +inf gives static noise
  std::uint64_t seed = 0;

  void validate() const;
};

/// Gaussian phase variance Var(int_0^t x) of a stationary OU process:
/// 2 sigma^2 tau_c^2 (t/tau_c - 1 + exp(-t/tau_c)).
double ou_phase_variance(double sigma_rad_s, double tau_c_s, double t);

/// OU process whose Ramsey coherence exp(-Var/2) reaches 1/e at `t2star_s`.
/// In the static limit this is sigma = sqrt(2) / T2*.
OUProcess ou_for_t2star(double t2star_s, double tau_c_s, std::uint64_t seed);

/// Exact one-step update of (x, int x) for an OU process started at x0.
class OUStepper {
 public:
  OUStepper(double sigma_rad_s, double tau_c_s, double dt);

  struct Step {
    double x_end;
    double integral;  // rad
  };

  Step step(double x0, Rng& rng) const;

  double decay() const { return decay_; }

 private:
  double decay_;      // exp(-dt/tau_c)
  double mean_int_;   // E[integral] / x0
  double sd_x_;       // conditional sd of x_end
  double sd_int_;     // conditional sd of the integral
  double corr_;       // correlation of x_end and integral
};

/// Stationary-start path x_0 .. x_n (n_steps + 1 samples) with the exact
/// discretization x_{k+1} = x_k e^{-dt/tau_c} + sigma sqrt(1 - e^{-2dt/tau_c}) g_k.
std::vector<double> sample_ou_path(const OUProcess& p, double dt, std::size_t n_steps);

/// Stationary-start OU phase integrals over consecutive segments of the given
/// lengths, sampled exactly (joint Gaussian). `substeps` splits each segment.
std::vector<double> sample_ou_phases(const OUProcess& p, std::span<const double> segments,
                                     Rng& rng, std::size_t substeps = 1);
/// Same, starting from a given x0 instead of a stationary draw.
std::vector<double> sample_ou_phases_from(double x0, double sigma_rad_s, double tau_c_s,
                                          std::span<const double> segments, Rng& rng,
                                          std::size_t substeps = 1);

enum class SequenceKind { Ramsey, Echo };

struct CoherenceCurve {
  std::vector<double> times;      // s
  std::vector<double> coherence;  // ensemble mean of Re e^{i phi}
  std::vector<double> stderr_;    // standard error of the mean
  SequenceKind sequence = SequenceKind::Ramsey;
  double fitted_T2 = std::numeric_limits<double>::quiet_NaN();        // s
  double fitted_exponent = std::numeric_limits<double>::quiet_NaN();  // stretch p
  double one_over_e_time = std::numeric_limits<double>::quiet_NaN();  // s
};

struct StretchedExpFit {
  double T2 = std::numeric_limits<double>::quiet_NaN();
  double exponent = std::numeric_limits<double>::quiet_NaN();
  bool ok = false;
};

/// Fits exp[-(t/T2)^p] by linear regression of ln(-ln C) on ln t using the
/// points with C in [0.05, 0.95].
StretchedExpFit fit_stretched_exponential(std::span<const double> times,
                                          std::span<const double> coherence);

/// First time the curve drops below 1/e (linear interpolation); NaN if never.
double one_over_e_time(std::span<const double> times, std::span<const double> coherence);

/// Monte Carlo coherence under OU frequency noise. Ramsey accumulates
/// int_0^tau x; Echo flips the sign of accumulation at tau/2.
CoherenceCurve dephased_ramsey_coherence(const OUProcess& p, std::span<const double> taus,
                                         std::size_t n_trials,
                                         SequenceKind sequence = SequenceKind::Ramsey,
                                         unsigned threads = 1);

/// exp(-tau / T1): coherence left after NV longitudinal relaxation scrambles
/// the hyperfine field.
double nv_t1_dephasing_factor(double t1_s, double tau_s);

// ---------------------------------------------------------------------------
// Dipolar electron-spin bath
// ---------------------------------------------------------------------------

/// Secular dipolar prefactor (mu0/4pi) hbar gamma_e^2 / (2 pi), Hz nm^3.
inline constexpr double kElectronElectronHzNm3 = 52.041016e6;
/// Same for an electron and a 14N nucleus (gamma = 3.0766 MHz/T), Hz nm^3.
inline constexpr double kElectronNitrogenHzNm3 = 5713.101;

struct DipolarScales {
  double nearest_neighbor_nm;   // mean nearest-neighbour distance
  double electron_electron_hz;  // prefactor / r^3 at that distance
  double electron_nuclear_hz;
};

/// Coupling scales at the mean nearest-neighbour spacing of a Poisson gas,
/// Gamma(4/3) (4 pi n / 3)^{-1/3}.
DipolarScales dipolar_coupling_scales(double density_cm3);

struct BathModel {
  double density_cm3 = 1e19;
  std::size_t n_bath = 50;
  std::size_t n_central = 20;
  std::size_t trials = 200;
  std::uint64_t geometry_seed = 1;
  double exclusion_nm = 0.5;  // minimum spin-spin and spin-nucleus distance
  double cutoff_nm = std::numeric_limits<double>::infinity();  // bath-bath coupling range

  /// Radius of the sphere holding n_bath spins at the given density, nm.
  double sphere_radius_nm() const;
  void validate() const;
};

/// One central 14N with its sampled bath, reduced to the parameters that
/// drive its coherence.
struct BathRealization {
  std::vector<double> nuclear_coupling_hz;  // secular bath-nucleus couplings
  double mean_coupling_hz = 0.0;            // couples to the conserved bath magnetization
  double sigma_rad_s = 0.0;                 // rms of the fluctuating field
  double flip_flop_rate_hz = 0.0;           // mean pair flip-flop rate per spin
  double tau_c_s = 0.0;                     // 1 / flip_flop_rate
  double max_pair_coupling_hz = 0.0;
};

BathRealization sample_bath(const BathModel& bath, std::size_t central_index);

/// Pair-level bath simulation. Each trial draws a random high-temperature
/// bath configuration. Flip-flops conserve the bath magnetization M, so the
/// nuclear shift splits into a static part (mean coupling x M) and a part
/// fluctuating as an OU process with sigma = rms nucleus-bath coupling and
/// 1/tau_c = mean bath flip-flop rate. Echo toggles the coupling sign at tau/2.
CoherenceCurve bath_coherence_simulation(const BathModel& bath, SequenceKind sequence,
                                         std::span<const double> taus, unsigned threads = 1);

/// Log-spaced tau grid scaled to the bath density, wide enough to contain the
/// Ramsey 1/e time.
std::vector<double> bath_tau_grid(double density_cm3, std::size_t points = 48);

/// Ramsey 1/e time of the bath model on bath_tau_grid.
double bath_ramsey_t2star(const BathModel& bath, unsigned threads = 1);

}  // namespace nvgyro::noise
