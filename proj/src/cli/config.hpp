#pragma once

// Run configuration for the command-line front end. Loaded from YAML (JSON
// is accepted as a YAML subset) with strict key checking.

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "nvgyro/noise.hpp"
#include "nvgyro/sensor.hpp"
#include "nvgyro/sequence.hpp"
#include "nvgyro/spincore.hpp"

namespace nvgyro::cli {

/// Bad configuration (exit code 2).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input data or unidentifiable request (exit code 3).
class SchemaError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SweepConfig {
  std::string variable = "omega_rad_s";  // omega_rad_s | tau_s | detuning_hz
  double start = 0.0;
  double stop = 3141.592653589793;
  std::size_t points = 101;
  std::vector<double> values;  // overrides start/stop/points when non-empty

  std::vector<double> grid() const;
};

struct NoiseConfig {
  std::string model = "none";       // none | ou
  std::optional<double> sigma_rad_s;
  std::optional<double> t2star_s;   // alternative to sigma
  double tau_c_s = 1e-3;
  std::optional<double> nv_t1_s;
  std::size_t trials = 1000;
  std::optional<double> t2star_e_s; // electron dephasing during the mapping
};

struct EchoConfig {
  double axis_phase = 0.0;
  double carrier_phase = 0.0;
  bool random_carrier_phase = false;
};

struct FamiliesConfig {
  std::vector<std::string> names{"F1", "F2", "F3", "F4"};
  std::vector<double> taus_s{0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0, 4.5, 5.0};
  std::uint64_t counts = 0;  // binomial shots per point; 0 = exact signals
};

struct EstimateConfig {
  std::string signals_file;
  std::size_t direction_grid = 96;
  std::size_t magnitude_grid = 12;
  std::size_t refine_starts = 12;
  std::size_t max_iterations = 200;
};

struct SensitivityConfig {
  double T2_s = 1e-3;
  std::optional<double> dead_time_s;  // default: timing t_ro + t_pol
  double n_spins = 2.5e14;
  std::optional<double> C;            // default: from the readout model
  std::vector<double> densities_cm3{1e15, 3e15, 1e16, 3e16, 1e17, 3e17,
                                    1e18, 3e18, 1e19, 3e19, 1e20};
  double volume_mm3 = sensor::kDefaultChipVolumeMm3;
  std::vector<double> interrogation_times_s{1e-3, 1e-4};
  double echo_T2_s = 1e-3;
  double p1_per_nv = 10.0;
};

struct BathConfig {
  std::vector<double> densities_cm3{0.35e19, 1.06e19, 3.17e19};
  std::size_t n_bath = 50;
  std::size_t n_central = 20;
  std::size_t trials = 200;
  std::uint64_t geometry_seed = 1;
  double exclusion_nm = 0.5;
  std::optional<double> cutoff_nm;
  std::size_t grid_points = 48;
  std::vector<double> taus_s;  // overrides the density-scaled grid
};

struct PolarizationConfig {
  double rabi_hz = 500e6;
  double t2star_e_s = 200e-9;
  double tau_c_e_s = 1e-6;
  bool two_step = false;
  std::optional<double> duration_s;  // per step; default t_pol
  std::size_t steps = 400;
  std::size_t trials = 100;
  bool dephasing = true;
};

struct RunConfig {
  std::string command;  // optional; must match the subcommand when set
  std::uint64_t seed = 1;
  unsigned threads = 1;
  spin::PhysicalConstants constants;
  seq::SequenceTiming timing{1e-3};
  NoiseConfig noise;
  double omega_rad_s = 0.0;                     // aligned rotation rate
  double detuning_hz = 0.0;                     // static nuclear frequency shift
  std::array<double, 3> omega_lab_rad_s{0.5, -0.2, 0.1};
  SweepConfig sweep;
  EchoConfig echo;
  FamiliesConfig families;
  EstimateConfig estimate;
  sensor::ReadoutModel readout;
  SensitivityConfig sensitivity;
  BathConfig bath;
  PolarizationConfig polarization;

  void validate() const;
};

/// Parses YAML text; `source` names the input in error messages.
RunConfig parse_config(const std::string& text, const std::string& source);
RunConfig load_config(const std::string& path);

/// Complete resolved configuration; parse_config(to_json(c).dump()) == c.
nlohmann::json to_json(const RunConfig& c);

}  // namespace nvgyro::cli
