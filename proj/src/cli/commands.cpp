#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "config.hpp"
#include "nvgyro/cli.hpp"
#include "nvgyro/errors.hpp"
#include "nvgyro/noise.hpp"
#include "nvgyro/random.hpp"
#include "nvgyro/sensor.hpp"
#include "nvgyro/sequence.hpp"
#include "nvgyro/threeaxis.hpp"
#include "output.hpp"

namespace nvgyro::cli {

namespace {

constexpr double kPi = std::numbers::pi;

// Stream tags keep per-command random streams apart.
constexpr std::uint64_t kCarrierStream = 0xC0FFEE01ULL;
constexpr std::uint64_t kShotStream = 0x5407ULL;

struct Context {
  RunConfig cfg;
  std::ostream* err;
};

std::optional<seq::NoiseModel> noise_for_row(const RunConfig& cfg, std::size_t row) {
  seq::NoiseModel nm;
  nm.nv_t1_s = cfg.noise.nv_t1_s;
  nm.threads = cfg.threads;
  if (cfg.noise.model == "ou") {
    const std::uint64_t seed = derive_seed(cfg.seed, row);
    if (cfg.noise.t2star_s) {
      nm.ou = noise::ou_for_t2star(*cfg.noise.t2star_s, cfg.noise.tau_c_s, seed);
    } else {
      nm.ou = noise::OUProcess{*cfg.noise.sigma_rad_s, cfg.noise.tau_c_s, seed};
    }
    nm.trials = cfg.noise.trials;
  }
  return nm;
}

Table cmd_fringe(const Context& ctx, bool echo) {
  const auto& cfg = ctx.cfg;
  const auto grid = cfg.sweep.grid();
  Table table({cfg.sweep.variable, "signal", "signal_stderr", "n_trials"});
  const double contrast = cfg.noise.t2star_e_s
                              ? seq::mapping_contrast(cfg.timing.t_map_s, *cfg.noise.t2star_e_s)
                              : 1.0;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    double omega = cfg.omega_rad_s;
    double detuning = cfg.detuning_hz;
    seq::SequenceTiming timing = cfg.timing;
    if (cfg.sweep.variable == "omega_rad_s") omega = grid[i];
    if (cfg.sweep.variable == "tau_s") timing.tau_s = grid[i];
    if (cfg.sweep.variable == "detuning_hz") detuning = grid[i];
    const auto noise = *noise_for_row(cfg, i);
    seq::RamseyResult r = [&] {
      if (!echo) return seq::run_ramsey_aligned(omega, timing, cfg.constants, noise, detuning);
      seq::EchoOptions opt{cfg.echo.axis_phase, cfg.echo.carrier_phase};
      if (cfg.echo.random_carrier_phase) {
        Rng rng(derive_seed(cfg.seed, kCarrierStream, i));
        opt.carrier_phase = std::uniform_real_distribution<double>(0.0, 2.0 * kPi)(rng);
      }
      return seq::run_echo_aligned(omega, detuning, timing, cfg.constants, opt, noise);
    }();
    table.add({grid[i], seq::apply_contrast(r.signal, contrast), r.signal_stderr * contrast,
               static_cast<std::int64_t>(r.n_trials)});
  }
  return table;
}

std::vector<three::FamilyId> family_ids(const std::vector<std::string>& names) {
  std::vector<three::FamilyId> ids;
  for (const auto& n : names) ids.push_back(three::parse_family(n));
  return ids;
}

Table cmd_families(const Context& ctx) {
  const auto& cfg = ctx.cfg;
  const auto ids = family_ids(cfg.families.names);
  three::RotationSpec rot;
  rot.omega_lab = Eigen::Vector3d(cfg.omega_lab_rad_s[0], cfg.omega_lab_rad_s[1],
                                  cfg.omega_lab_rad_s[2]);
  const auto noise = *noise_for_row(cfg, 0);
  const auto m = three::forward_model(rot, cfg.families.taus_s, ids, cfg.constants, noise);
  Table table({"family", "tau_s", "signal", "stderr"});
  const std::size_t nt = cfg.families.taus_s.size();
  for (std::size_t f = 0; f < ids.size(); ++f) {
    for (std::size_t t = 0; t < nt; ++t) {
      const auto fi = static_cast<Eigen::Index>(f), ti = static_cast<Eigen::Index>(t);
      double p = m.signal(fi, ti);
      double se = m.stderr_(fi, ti);
      if (cfg.families.counts > 0) {
        Rng rng(derive_seed(cfg.seed, kShotStream, f * nt + t));
        const double clipped = std::clamp(p, 0.0, 1.0);
        std::binomial_distribution<std::uint64_t> shots(cfg.families.counts, clipped);
        const double n = static_cast<double>(cfg.families.counts);
        p = static_cast<double>(shots(rng)) / n;
        se = std::sqrt(p * (1.0 - p) / n);
      }
      table.add({three::family_name(ids[f]), cfg.families.taus_s[t], p, se});
    }
  }
  return table;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    const auto b = cell.find_first_not_of(" \t\r");
    const auto e = cell.find_last_not_of(" \t\r");
    out.push_back(b == std::string::npos ? "" : cell.substr(b, e - b + 1));
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

// Reads "family,tau_s,signal,stderr" into a complete families x taus grid.
three::SignalMatrix read_signal_matrix(std::istream& in, const std::string& source) {
  const std::vector<std::string> header{"family", "tau_s", "signal", "stderr"};
  std::string line;
  std::size_t row = 0;
  if (!std::getline(in, line)) throw SchemaError(source + ": empty signal file");
  ++row;
  if (split_csv(line) != header) {
    throw SchemaError(source + " row 1: header must be 'family,tau_s,signal,stderr'");
  }
  struct Entry {
    double signal, stderr_;
  };
  std::vector<three::FamilyId> fams;
  std::vector<double> taus;
  std::map<std::pair<int, double>, Entry> cells;
  while (std::getline(in, line)) {
    ++row;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto cols = split_csv(line);
    const std::string where = source + " row " + std::to_string(row);
    if (cols.size() != header.size()) {
      throw SchemaError(where + ": expected 4 columns, found " + std::to_string(cols.size()));
    }
    three::FamilyId fam;
    try {
      fam = three::parse_family(cols[0]);
    } catch (const PreconditionError&) {
      throw SchemaError(where + ", column 'family': expected F1..F4, got '" + cols[0] + "'");
    }
    double v[3];
    for (int k = 0; k < 3; ++k) {
      const std::string& s = cols[static_cast<std::size_t>(k) + 1];
      std::size_t used = 0;
      try {
        v[k] = std::stod(s, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != s.size() || s.empty() || !std::isfinite(v[k])) {
        throw SchemaError(where + ", column '" + header[static_cast<std::size_t>(k) + 1] +
                          "': not a finite number: '" + s + "'");
      }
    }
    if (!(v[0] > 0.0)) throw SchemaError(where + ", column 'tau_s': must be positive");
    if (v[1] < 0.0 || v[1] > 1.0) throw SchemaError(where + ", column 'signal': outside [0, 1]");
    if (v[2] < 0.0) throw SchemaError(where + ", column 'stderr': negative");
    if (std::find(fams.begin(), fams.end(), fam) == fams.end()) fams.push_back(fam);
    if (std::find(taus.begin(), taus.end(), v[0]) == taus.end()) taus.push_back(v[0]);
    if (!cells.emplace(std::make_pair(static_cast<int>(fam), v[0]), Entry{v[1], v[2]}).second) {
      throw SchemaError(where + ": duplicate entry for " + cols[0] + " at tau " + cols[1]);
    }
  }
  if (cells.empty()) throw SchemaError(source + ": no data rows");
  std::sort(taus.begin(), taus.end());
  three::SignalMatrix m;
  m.families = fams;
  m.taus = taus;
  m.signal.resize(static_cast<Eigen::Index>(fams.size()), static_cast<Eigen::Index>(taus.size()));
  m.stderr_.resizeLike(m.signal);
  for (std::size_t f = 0; f < fams.size(); ++f) {
    for (std::size_t t = 0; t < taus.size(); ++t) {
      const auto it = cells.find({static_cast<int>(fams[f]), taus[t]});
      if (it == cells.end()) {
        throw SchemaError(source + ": missing entry for " + three::family_name(fams[f]) +
                          " at tau_s " + fmt12(taus[t]));
      }
      m.signal(static_cast<Eigen::Index>(f), static_cast<Eigen::Index>(t)) = it->second.signal;
      m.stderr_(static_cast<Eigen::Index>(f), static_cast<Eigen::Index>(t)) = it->second.stderr_;
    }
  }
  return m;
}

struct EstimateOutcome {
  nlohmann::ordered_json report;
  Table table{{"omega_x_rad_s", "omega_y_rad_s", "omega_z_rad_s", "omega_norm_rad_s",
               "residual_norm", "iterations", "jacobian_condition", "status",
               "aliasing_warning"}};
  bool converged = true;
};

double round12(double v) { return std::stod(fmt12(v)); }

EstimateOutcome cmd_estimate(const Context& ctx) {
  const auto& cfg = ctx.cfg;
  if (cfg.estimate.signals_file.empty()) {
    throw ConfigError("estimate needs estimate.signals_file or --signals");
  }
  std::ifstream in(cfg.estimate.signals_file);
  if (!in) throw ConfigError("cannot open signal file '" + cfg.estimate.signals_file + "'");
  const auto m = read_signal_matrix(in, cfg.estimate.signals_file);

  three::EstimatorOptions opt;
  opt.direction_grid = cfg.estimate.direction_grid;
  opt.magnitude_grid = cfg.estimate.magnitude_grid;
  opt.refine_starts = cfg.estimate.refine_starts;
  opt.max_iterations = cfg.estimate.max_iterations;
  opt.threads = cfg.threads;
  three::FitReport rep;
  try {
    rep = three::estimate_rotation(m, cfg.constants, opt);
  } catch (const IdentifiabilityError& e) {
    throw SchemaError(std::string(e.what()) + " (file has " + std::to_string(m.families.size()) +
                      ")");
  }

  EstimateOutcome out;
  const auto& w = rep.rotation.omega_lab;
  nlohmann::ordered_json j;
  j["omega_lab_rad_s"] = {round12(w.x()), round12(w.y()), round12(w.z())};
  j["omega_norm_rad_s"] = round12(w.norm());
  j["residual_norm"] = round12(rep.residual_norm);
  j["iterations"] = rep.iterations;
  j["jacobian_condition"] =
      std::isfinite(rep.jacobian_condition) ? nlohmann::ordered_json(round12(rep.jacobian_condition))
                                            : nlohmann::ordered_json(nullptr);
  j["status"] = three::status_name(rep.status);
  j["aliasing_warning"] = rep.aliasing_warning;
  j["families"] = nlohmann::ordered_json::array();
  for (auto f : m.families) j["families"].push_back(three::family_name(f));
  j["n_taus"] = m.taus.size();

  const Eigen::VectorXd se = Eigen::Map<const Eigen::VectorXd>(
      Eigen::MatrixXd(m.stderr_.transpose()).data(), m.stderr_.size());
  if (rep.status == three::FitStatus::Converged && (se.array() > 0.0).all()) {
    const Eigen::Matrix3d cov = three::linearized_covariance(rep.jacobian, se.array().square());
    nlohmann::ordered_json c = nlohmann::ordered_json::array();
    for (int r = 0; r < 3; ++r) {
      c.push_back({round12(cov(r, 0)), round12(cov(r, 1)), round12(cov(r, 2))});
    }
    j["covariance_rad2_s2"] = c;
    j["omega_sigma_rad_s"] = {round12(std::sqrt(cov(0, 0))), round12(std::sqrt(cov(1, 1))),
                              round12(std::sqrt(cov(2, 2)))};
  }
  out.report = j;
  out.table.add({w.x(), w.y(), w.z(), w.norm(), rep.residual_norm,
                 static_cast<std::int64_t>(rep.iterations), rep.jacobian_condition,
                 three::status_name(rep.status),
                 std::string(rep.aliasing_warning ? "true" : "false")});
  out.converged = rep.status != three::FitStatus::NotConverged;
  if (rep.aliasing_warning) {
    *ctx.err << "warning: |omega| tau_max is within 5% of the aliasing limit pi\n";
  }
  return out;
}

Table cmd_sensitivity(const Context& ctx) {
  const auto& cfg = ctx.cfg;
  const auto& s = cfg.sensitivity;
  const double C = s.C ? *s.C : sensor::detection_efficiency(cfg.readout);
  const double td = s.dead_time_s ? *s.dead_time_s : cfg.timing.dead_time();

  Table table({"case", "scheme", "interrogation_s", "density_cm3", "n_spins", "coherence_s",
               "effective_T_s", "C", "dead_time_s", "eta_rad_s_rthz", "eta_mdeg_s_rthz"});
  const auto head = sensor::sensitivity({s.T2_s, td, s.n_spins, C});
  const double head_density = 4.0 * s.n_spins / (s.volume_mm3 * 1e-3);
  table.add({std::string("headline"), std::string("budget"), s.T2_s, head_density, s.n_spins,
             s.T2_s, s.T2_s, C, td, head.rad_s_per_rthz, head.mdeg_s_per_rthz});

  sensor::DensitySweepOptions opt;
  opt.volume_mm3 = s.volume_mm3;
  opt.echo_T2_s = s.echo_T2_s;
  opt.p1_per_nv = s.p1_per_nv;
  opt.C = C;
  opt.dead_time_s = td;
  opt.threads = cfg.threads;
  opt.bath.n_bath = cfg.bath.n_bath;
  opt.bath.n_central = cfg.bath.n_central;
  opt.bath.trials = cfg.bath.trials;
  opt.bath.geometry_seed = cfg.bath.geometry_seed;
  opt.bath.exclusion_nm = cfg.bath.exclusion_nm;
  if (cfg.bath.cutoff_nm) opt.bath.cutoff_nm = *cfg.bath.cutoff_nm;
  sensor::BathT2Cache cache;
  for (double t : s.interrogation_times_s) {
    opt.interrogation_s = t;
    for (auto scheme : {sensor::Scheme::Echo, sensor::Scheme::Ramsey}) {
      const auto pts = sensor::sensitivity_vs_density(s.densities_cm3, scheme, opt, cache);
      for (const auto& p : pts) {
        table.add({std::string("sweep"),
                   std::string(scheme == sensor::Scheme::Echo ? "echo" : "ramsey"), t,
                   p.density_cm3, p.n_spins, p.coherence_s, p.effective_T_s, C, td,
                   p.eta.rad_s_per_rthz, p.eta.mdeg_s_per_rthz});
      }
    }
  }

  const auto best = sensor::optimal_readout_count(cfg.readout, s.T2_s, cfg.timing.t_pol_s);
  *ctx.err << "note: eta-optimal n_r = " << best.n_r << " within max_n_r = "
           << cfg.readout.max_n_r << "; without the cap n_r = " << best.n_r_unconstrained
           << "\n";
  return table;
}

Table cmd_bath(const Context& ctx) {
  const auto& cfg = ctx.cfg;
  Table table({"density_cm3", "tau_s", "ramsey_coherence", "ramsey_stderr", "echo_coherence",
               "echo_stderr"});
  for (double density : cfg.bath.densities_cm3) {
    noise::BathModel bath;
    bath.density_cm3 = density;
    bath.n_bath = cfg.bath.n_bath;
    bath.n_central = cfg.bath.n_central;
    bath.trials = cfg.bath.trials;
    bath.geometry_seed = cfg.bath.geometry_seed;
    bath.exclusion_nm = cfg.bath.exclusion_nm;
    if (cfg.bath.cutoff_nm) bath.cutoff_nm = *cfg.bath.cutoff_nm;
    try {
      bath.validate();
    } catch (const ConfigurationError& e) {
      throw ConfigError(std::string("bath: ") + e.what());
    }
    std::vector<double> taus = cfg.bath.taus_s;
    if (taus.empty()) {
      if (density <= 0.0) throw ConfigError("bath: zero density needs explicit bath.taus_s");
      taus = noise::bath_tau_grid(density, cfg.bath.grid_points);
    }
    const auto ram = noise::bath_coherence_simulation(bath, noise::SequenceKind::Ramsey, taus,
                                                      cfg.threads);
    const auto ech = noise::bath_coherence_simulation(bath, noise::SequenceKind::Echo, taus,
                                                      cfg.threads);
    for (std::size_t i = 0; i < taus.size(); ++i) {
      table.add({density, taus[i], ram.coherence[i], ram.stderr_[i], ech.coherence[i],
                 ech.stderr_[i]});
    }
    *ctx.err << "note: density " << fmt12(density) << " cm^-3: Ramsey 1/e time "
             << fmt12(ram.one_over_e_time) << " s, stretch exponent "
             << fmt12(ram.fitted_exponent) << "\n";
  }
  return table;
}

Table cmd_polarize(const Context& ctx) {
  const auto& cfg = ctx.cfg;
  sensor::PolarizationDrive d;
  d.rabi_hz = cfg.polarization.rabi_hz;
  d.t2star_e_s = cfg.polarization.t2star_e_s;
  d.tau_c_e_s = cfg.polarization.tau_c_e_s;
  d.two_step = cfg.polarization.two_step;
  const double t_pol = sensor::polarization_time(cfg.constants, d);
  const double duration = cfg.polarization.duration_s ? *cfg.polarization.duration_s : t_pol;
  sensor::PolarizationOptions opt;
  opt.steps = cfg.polarization.steps;
  opt.trials = cfg.polarization.trials;
  opt.seed = cfg.seed;
  opt.threads = cfg.threads;
  opt.dephasing = cfg.polarization.dephasing;
  const auto traj = sensor::simulate_polarization_transfer(cfg.constants, d, duration, opt);
  Table table({"time_s", "polarization", "polarization_stderr"});
  for (std::size_t k = 0; k < traj.times.size(); ++k) {
    table.add({traj.times[k], traj.polarization[k], traj.stderr_[k]});
  }
  *ctx.err << "note: t_pol = " << fmt12(t_pol) << " s (angular-frequency reading); "
           << "the literal Hz reading gives "
           << fmt12(sensor::polarization_time_hz_reading(cfg.constants, d)) << " s\n";
  return table;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ConfigError("cannot write '" + path + "'");
  os << text;
  if (!os) throw ConfigError("failed writing '" + path + "'");
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Diamond 14N nuclear-spin gyroscope simulator"};
  app.name("nvgyro");
  std::string config_path, out_path, format_name, signals_path;
  std::uint64_t seed = 0;
  unsigned threads = 1;
  auto* o_seed = app.add_option("--seed", seed, "Master random seed (u64)");
  auto* o_threads = app.add_option("--threads", threads, "Worker threads")->check(CLI::Range(1u, 4096u));
  auto* o_format =
      app.add_option("--format", format_name, "Output format")->check(CLI::IsMember({"csv", "jsonl"}));
  app.add_option("--config", config_path, "YAML or JSON configuration file");
  app.add_option("--out", out_path, "Output file (a <out>.config.json sidecar is written)");

  const std::vector<std::pair<std::string, std::string>> commands{
      {"ramsey", "Aligned Ramsey fringe sweep"},
      {"echo", "Aligned echo fringe sweep"},
      {"families", "Four-family signal matrix for a lab-frame rotation"},
      {"estimate", "Rotation-vector estimate from a signal matrix file"},
      {"sensitivity", "Sensitivity budget and density sweep"},
      {"bath", "Dipolar bath Ramsey and echo coherence"},
      {"polarize", "Nuclear polarization transfer"},
  };
  std::map<std::string, CLI::App*> subs;
  for (const auto& [name, help] : commands) {
    subs[name] = app.add_subcommand(name, help);
    subs[name]->fallthrough();
  }
  subs["estimate"]->add_option("--signals", signals_path, "Signal matrix CSV");
  app.require_subcommand(1, 1);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e, out, err);
    return rc == 0 ? kExitOk : kExitConfig;
  }
  std::string command;
  for (const auto& [name, sub] : subs) {
    if (sub->parsed()) command = name;
  }

  try {
    Context ctx{config_path.empty() ? parse_config("", "<defaults>") : load_config(config_path),
                &err};
    auto& cfg = ctx.cfg;
    if (!cfg.command.empty() && cfg.command != command) {
      throw ConfigError("config was written for command '" + cfg.command + "', not '" + command +
                        "'");
    }
    cfg.command = command;
    if (*o_seed) cfg.seed = seed;
    if (*o_threads) cfg.threads = threads;
    if (!signals_path.empty()) cfg.estimate.signals_file = signals_path;

    std::ostringstream body;
    int rc = kExitOk;
    if (command == "estimate") {
      auto res = cmd_estimate(ctx);
      if (*o_format) {
        res.table.write(body, parse_format(format_name));
      } else {
        body << res.report.dump(2) << "\n";
      }
      if (!res.converged) {
        err << "error: estimator did not converge; best iterate reported\n";
        rc = kExitNotConverged;
      }
    } else {
      const Format fmt = *o_format ? parse_format(format_name) : Format::Csv;
      Table table = command == "ramsey"        ? cmd_fringe(ctx, false)
                    : command == "echo"        ? cmd_fringe(ctx, true)
                    : command == "families"    ? cmd_families(ctx)
                    : command == "sensitivity" ? cmd_sensitivity(ctx)
                    : command == "bath"        ? cmd_bath(ctx)
                                               : cmd_polarize(ctx);
      table.write(body, fmt);
    }

    if (out_path.empty()) {
      out << body.str();
    } else {
      write_text(out_path, body.str());
      write_text(out_path + ".config.json", to_json(cfg).dump(2) + "\n");
    }
    return rc;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const SchemaError& e) {
    err << "input error: " << e.what() << "\n";
    return kExitSchema;
  } catch (const IdentifiabilityError& e) {
    err << "input error: " << e.what() << "\n";
    return kExitSchema;
  } catch (const ConfigurationError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const PreconditionError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  }
}

}  // namespace nvgyro::cli
