#include "config.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <yaml-cpp/yaml.h>

namespace nvgyro::cli {

namespace {

// Walks one mapping node, rejecting keys that are not read.
class Section {
 public:
  Section(const YAML::Node& node, std::string path, const std::string& source,
          std::set<std::string> allowed)
      : node_(node), path_(std::move(path)), source_(source), allowed_(std::move(allowed)) {
    if (!node_.IsMap()) fail(node_, "expected a mapping");
    for (const auto& kv : node_) {
      const auto key = kv.first.as<std::string>();
      if (!allowed_.count(key)) {
        fail(kv.first, "unknown key '" + key + "'");
      }
    }
  }

  bool has(const std::string& key) const { return static_cast<bool>(node_[key]); }

  Section sub(const std::string& key, std::set<std::string> allowed) const {
    return Section(node_[key], join(key), source_, std::move(allowed));
  }

  void get(const std::string& key, double& out) const {
    if (auto n = node_[key]) out = number(n, key);
  }

  void get(const std::string& key, std::optional<double>& out) const {
    if (auto n = node_[key]) {
      if (n.IsNull()) {
        out.reset();
      } else {
        out = number(n, key);
      }
    }
  }

  void get(const std::string& key, bool& out) const {
    if (auto n = node_[key]) {
      try {
        out = n.as<bool>();
      } catch (const YAML::Exception&) {
        fail(n, "expected true/false for " + join(key));
      }
    }
  }

  void get(const std::string& key, std::string& out) const {
    if (auto n = node_[key]) {
      if (!n.IsScalar()) fail(n, "expected a string for " + join(key));
      out = n.as<std::string>();
    }
  }

  void get(const std::string& key, std::uint64_t& out) const {
    if (auto n = node_[key]) out = unsigned_int(n, key);
  }

  void get(const std::string& key, std::size_t& out, int) const {
    if (auto n = node_[key]) out = static_cast<std::size_t>(unsigned_int(n, key));
  }

  void get(const std::string& key, unsigned& out, int) const {
    if (auto n = node_[key]) {
      const auto v = unsigned_int(n, key);
      if (v > 4096) fail(n, join(key) + " is too large");
      out = static_cast<unsigned>(v);
    }
  }

  void get(const std::string& key, std::vector<double>& out) const {
    if (auto n = node_[key]) {
      if (!n.IsSequence()) fail(n, "expected a list of numbers for " + join(key));
      out.clear();
      for (const auto& item : n) out.push_back(number(item, key));
    }
  }

  void get(const std::string& key, std::vector<std::string>& out) const {
    if (auto n = node_[key]) {
      if (!n.IsSequence()) fail(n, "expected a list of strings for " + join(key));
      out.clear();
      for (const auto& item : n) {
        if (!item.IsScalar()) fail(item, "expected a string in " + join(key));
        out.push_back(item.as<std::string>());
      }
    }
  }

  [[noreturn]] void fail(const YAML::Node& n, const std::string& msg) const {
    std::ostringstream os;
    os << source_;
    const auto mark = n.Mark();
    if (mark.line >= 0) os << ":" << mark.line + 1;
    os << ": " << (path_.empty() ? "" : "[" + path_ + "] ") << msg;
    throw ConfigError(os.str());
  }

 private:
  std::string join(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  double number(const YAML::Node& n, const std::string& key) const {
    if (!n.IsScalar()) fail(n, "expected a number for " + join(key));
    try {
      const double v = n.as<double>();
      if (!std::isfinite(v)) fail(n, join(key) + " must be finite");
      return v;
    } catch (const YAML::Exception&) {
      fail(n, "expected a number for " + join(key) + ", got '" + n.Scalar() + "'");
    }
  }

  std::uint64_t unsigned_int(const YAML::Node& n, const std::string& key) const {
    if (!n.IsScalar()) fail(n, "expected a non-negative integer for " + join(key));
    const std::string s = n.Scalar();
    if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos) {
      fail(n, "expected a non-negative integer for " + join(key) + ", got '" + s + "'");
    }
    try {
      return n.as<std::uint64_t>();
    } catch (const YAML::Exception&) {
      fail(n, join(key) + " is out of range");
    }
  }

  YAML::Node node_;
  std::string path_;
  std::string source_;
  std::set<std::string> allowed_;
};

void require(bool ok, const std::string& msg) {
  if (!ok) throw ConfigError(msg);
}

nlohmann::json opt(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

}  // namespace

std::vector<double> SweepConfig::grid() const {
  if (!values.empty()) return values;
  std::vector<double> g(points);
  for (std::size_t i = 0; i < points; ++i) {
    g[i] = points == 1 ? start
                       : start + (stop - start) * static_cast<double>(i) /
                                     static_cast<double>(points - 1);
  }
  return g;
}

void RunConfig::validate() const {
  try {
    constants.validate();
    timing.validate();
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  require(threads >= 1, "threads must be at least 1");
  require(sweep.variable == "omega_rad_s" || sweep.variable == "tau_s" ||
              sweep.variable == "detuning_hz",
          "sweep.variable must be omega_rad_s, tau_s or detuning_hz");
  require(!sweep.grid().empty(), "sweep has no points");
  if (sweep.variable == "tau_s") {
    for (double t : sweep.grid()) require(t >= 0.0, "sweep tau values must be non-negative");
  }
  require(noise.model == "none" || noise.model == "ou", "noise.model must be none or ou");
  if (noise.model == "ou") {
    require(noise.sigma_rad_s.has_value() != noise.t2star_s.has_value(),
            "noise: give exactly one of sigma_rad_s and t2star_s");
    require(!noise.sigma_rad_s || *noise.sigma_rad_s >= 0.0, "noise.sigma_rad_s must be >= 0");
    require(!noise.t2star_s || *noise.t2star_s > 0.0, "noise.t2star_s must be positive");
    require(noise.tau_c_s > 0.0, "noise.tau_c_s must be positive");
  }
  require(!noise.nv_t1_s || *noise.nv_t1_s > 0.0, "noise.nv_t1_s must be positive");
  require(!noise.t2star_e_s || *noise.t2star_e_s > 0.0, "noise.t2star_e_s must be positive");
  require(noise.trials >= 1, "noise.trials must be at least 1");
  require(!families.names.empty(), "families.names is empty");
  for (const auto& n : families.names) {
    require(n.size() == 2 && n[0] == 'F' && n[1] >= '1' && n[1] <= '4',
            "families.names entries must be F1..F4, got '" + n + "'");
  }
  require(!families.taus_s.empty(), "families.taus_s is empty");
  for (double t : families.taus_s) require(t > 0.0, "families.taus_s must be positive");
  try {
    readout.validate();
  } catch (const std::exception& e) {
    throw ConfigError(std::string("readout: ") + e.what());
  }
  require(sensitivity.T2_s > 0.0 && sensitivity.n_spins > 0.0 && sensitivity.volume_mm3 > 0.0 &&
              sensitivity.echo_T2_s > 0.0 && sensitivity.p1_per_nv > 0.0,
          "sensitivity parameters must be positive");
  require(!sensitivity.C || (*sensitivity.C > 0.0 && *sensitivity.C <= 1.0),
          "sensitivity.C must be in (0, 1]");
  require(!sensitivity.dead_time_s || *sensitivity.dead_time_s >= 0.0,
          "sensitivity.dead_time_s must be non-negative");
  require(!sensitivity.densities_cm3.empty(), "sensitivity.densities_cm3 is empty");
  for (double d : sensitivity.densities_cm3) require(d > 0.0, "densities must be positive");
  require(!sensitivity.interrogation_times_s.empty(), "sensitivity.interrogation_times_s is empty");
  for (double t : sensitivity.interrogation_times_s) {
    require(t > 0.0, "interrogation times must be positive");
  }
  require(!bath.densities_cm3.empty(), "bath.densities_cm3 is empty");
  for (double d : bath.densities_cm3) require(d >= 0.0, "bath densities must be non-negative");
  require(bath.n_bath >= 1 && bath.n_central >= 1 && bath.trials >= 1,
          "bath sizes must be at least 1");
  require(bath.exclusion_nm >= 0.0, "bath.exclusion_nm must be non-negative");
  require(!bath.cutoff_nm || *bath.cutoff_nm > 0.0, "bath.cutoff_nm must be positive");
  require(bath.grid_points >= 2, "bath.grid_points must be at least 2");
  for (double t : bath.taus_s) require(t >= 0.0, "bath.taus_s must be non-negative");
  require(polarization.rabi_hz > 0.0 && polarization.t2star_e_s > 0.0 &&
              polarization.tau_c_e_s > 0.0,
          "polarization parameters must be positive");
  require(!polarization.duration_s || *polarization.duration_s >= 0.0,
          "polarization.duration_s must be non-negative");
  require(polarization.steps >= 1 && polarization.trials >= 1,
          "polarization steps and trials must be at least 1");
}

RunConfig parse_config(const std::string& text, const std::string& source) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::ParserException& e) {
    throw ConfigError(source + ":" + std::to_string(e.mark.line + 1) + ": " + e.msg);
  }
  RunConfig c;
  if (root.IsNull()) {
    c.validate();
    return c;
  }
  const Section top(root, "", source,
                    {"command", "seed", "threads", "detuning_hz", "constants", "timing", "noise", "rotation",
                     "sweep", "echo", "families", "estimate", "readout", "sensitivity", "bath",
                     "polarization"});
  top.get("command", c.command);
  top.get("seed", c.seed);
  top.get("threads", c.threads, 0);
  top.get("detuning_hz", c.detuning_hz);

  if (top.has("constants")) {
    const auto s = top.sub("constants", {"quadrupole_hz", "gamma_n_hz_per_gauss",
                                         "gamma_e_hz_per_gauss", "zero_field_splitting_hz",
                                         "hyperfine_hz", "bias_gauss"});
    s.get("quadrupole_hz", c.constants.quadrupole_hz);
    s.get("gamma_n_hz_per_gauss", c.constants.gamma_n_hz_per_gauss);
    s.get("gamma_e_hz_per_gauss", c.constants.gamma_e_hz_per_gauss);
    s.get("zero_field_splitting_hz", c.constants.zero_field_splitting_hz);
    s.get("hyperfine_hz", c.constants.hyperfine_hz);
    s.get("bias_gauss", c.constants.bias_gauss);
  }
  if (top.has("timing")) {
    const auto s = top.sub("timing", {"tau_s", "t_map_s", "t_pol_s", "t_ro_s"});
    s.get("tau_s", c.timing.tau_s);
    s.get("t_map_s", c.timing.t_map_s);
    s.get("t_pol_s", c.timing.t_pol_s);
    s.get("t_ro_s", c.timing.t_ro_s);
  }
  if (top.has("noise")) {
    const auto s = top.sub("noise", {"model", "sigma_rad_s", "t2star_s", "tau_c_s", "nv_t1_s",
                                     "trials", "t2star_e_s"});
    s.get("model", c.noise.model);
    s.get("sigma_rad_s", c.noise.sigma_rad_s);
    s.get("t2star_s", c.noise.t2star_s);
    s.get("tau_c_s", c.noise.tau_c_s);
    s.get("nv_t1_s", c.noise.nv_t1_s);
    s.get("trials", c.noise.trials, 0);
    s.get("t2star_e_s", c.noise.t2star_e_s);
  }
  if (top.has("rotation")) {
    const auto s = top.sub("rotation", {"omega_rad_s", "omega_lab_rad_s"});
    s.get("omega_rad_s", c.omega_rad_s);
    std::vector<double> lab(c.omega_lab_rad_s.begin(), c.omega_lab_rad_s.end());
    s.get("omega_lab_rad_s", lab);
    if (lab.size() != 3) {
      throw ConfigError(source + ": rotation.omega_lab_rad_s needs exactly 3 components");
    }
    std::copy(lab.begin(), lab.end(), c.omega_lab_rad_s.begin());
  }
  if (top.has("sweep")) {
    const auto s = top.sub("sweep", {"variable", "start", "stop", "points", "values"});
    s.get("variable", c.sweep.variable);
    s.get("start", c.sweep.start);
    s.get("stop", c.sweep.stop);
    s.get("points", c.sweep.points, 0);
    s.get("values", c.sweep.values);
  }
  if (top.has("echo")) {
    const auto s = top.sub("echo", {"axis_phase", "carrier_phase", "random_carrier_phase"});
    s.get("axis_phase", c.echo.axis_phase);
    s.get("carrier_phase", c.echo.carrier_phase);
    s.get("random_carrier_phase", c.echo.random_carrier_phase);
  }
  if (top.has("families")) {
    const auto s = top.sub("families", {"names", "taus_s", "counts"});
    s.get("names", c.families.names);
    s.get("taus_s", c.families.taus_s);
    s.get("counts", c.families.counts);
  }
  if (top.has("estimate")) {
    const auto s = top.sub("estimate", {"signals_file", "direction_grid", "magnitude_grid",
                                        "refine_starts", "max_iterations"});
    s.get("signals_file", c.estimate.signals_file);
    s.get("direction_grid", c.estimate.direction_grid, 0);
    s.get("magnitude_grid", c.estimate.magnitude_grid, 0);
    s.get("refine_starts", c.estimate.refine_starts, 0);
    s.get("max_iterations", c.estimate.max_iterations, 0);
  }
  if (top.has("readout")) {
    const auto s = top.sub("readout", {"n0", "n1", "n_r", "eta_m", "t_single_s", "max_n_r"});
    s.get("n0", c.readout.n0);
    s.get("n1", c.readout.n1);
    s.get("n_r", c.readout.n_r, 0);
    s.get("eta_m", c.readout.eta_m);
    s.get("t_single_s", c.readout.t_single_s);
    s.get("max_n_r", c.readout.max_n_r, 0);
  }
  if (top.has("sensitivity")) {
    const auto s = top.sub("sensitivity", {"T2_s", "dead_time_s", "n_spins", "C",
                                           "densities_cm3", "volume_mm3",
                                           "interrogation_times_s", "echo_T2_s", "p1_per_nv"});
    s.get("T2_s", c.sensitivity.T2_s);
    s.get("dead_time_s", c.sensitivity.dead_time_s);
    s.get("n_spins", c.sensitivity.n_spins);
    s.get("C", c.sensitivity.C);
    s.get("densities_cm3", c.sensitivity.densities_cm3);
    s.get("volume_mm3", c.sensitivity.volume_mm3);
    s.get("interrogation_times_s", c.sensitivity.interrogation_times_s);
    s.get("echo_T2_s", c.sensitivity.echo_T2_s);
    s.get("p1_per_nv", c.sensitivity.p1_per_nv);
  }
  if (top.has("bath")) {
    const auto s = top.sub("bath", {"densities_cm3", "n_bath", "n_central", "trials",
                                    "geometry_seed", "exclusion_nm", "cutoff_nm", "grid_points",
                                    "taus_s"});
    s.get("densities_cm3", c.bath.densities_cm3);
    s.get("n_bath", c.bath.n_bath, 0);
    s.get("n_central", c.bath.n_central, 0);
    s.get("trials", c.bath.trials, 0);
    s.get("geometry_seed", c.bath.geometry_seed);
    s.get("exclusion_nm", c.bath.exclusion_nm);
    s.get("cutoff_nm", c.bath.cutoff_nm);
    s.get("grid_points", c.bath.grid_points, 0);
    s.get("taus_s", c.bath.taus_s);
  }
  if (top.has("polarization")) {
    const auto s = top.sub("polarization", {"rabi_hz", "t2star_e_s", "tau_c_e_s", "two_step",
                                            "duration_s", "steps", "trials", "dephasing"});
    s.get("rabi_hz", c.polarization.rabi_hz);
    s.get("t2star_e_s", c.polarization.t2star_e_s);
    s.get("tau_c_e_s", c.polarization.tau_c_e_s);
    s.get("two_step", c.polarization.two_step);
    s.get("duration_s", c.polarization.duration_s);
    s.get("steps", c.polarization.steps, 0);
    s.get("trials", c.polarization.trials, 0);
    s.get("dephasing", c.polarization.dephasing);
  }
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(source + ": " + e.what());
  }
  return c;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path);
}

nlohmann::json to_json(const RunConfig& c) {
  using nlohmann::json;
  json j;
  if (!c.command.empty()) j["command"] = c.command;
  j["seed"] = c.seed;
  j["threads"] = c.threads;
  j["constants"] = {{"quadrupole_hz", c.constants.quadrupole_hz},
                    {"gamma_n_hz_per_gauss", c.constants.gamma_n_hz_per_gauss},
                    {"gamma_e_hz_per_gauss", c.constants.gamma_e_hz_per_gauss},
                    {"zero_field_splitting_hz", c.constants.zero_field_splitting_hz},
                    {"hyperfine_hz", c.constants.hyperfine_hz},
                    {"bias_gauss", c.constants.bias_gauss}};
  j["timing"] = {{"tau_s", c.timing.tau_s},
                 {"t_map_s", c.timing.t_map_s},
                 {"t_pol_s", c.timing.t_pol_s},
                 {"t_ro_s", c.timing.t_ro_s}};
  j["noise"] = {{"model", c.noise.model},         {"sigma_rad_s", opt(c.noise.sigma_rad_s)},
                {"t2star_s", opt(c.noise.t2star_s)}, {"tau_c_s", c.noise.tau_c_s},
                {"nv_t1_s", opt(c.noise.nv_t1_s)},   {"trials", c.noise.trials},
                {"t2star_e_s", opt(c.noise.t2star_e_s)}};
  j["rotation"] = {{"omega_rad_s", c.omega_rad_s}, {"omega_lab_rad_s", c.omega_lab_rad_s}};
  j["sweep"] = {{"variable", c.sweep.variable},
                {"start", c.sweep.start},
                {"stop", c.sweep.stop},
                {"points", c.sweep.points},
                {"values", c.sweep.values}};
  j["detuning_hz"] = c.detuning_hz;
  j["echo"] = {{"axis_phase", c.echo.axis_phase},
               {"carrier_phase", c.echo.carrier_phase},
               {"random_carrier_phase", c.echo.random_carrier_phase}};
  j["families"] = {{"names", c.families.names},
                   {"taus_s", c.families.taus_s},
                   {"counts", c.families.counts}};
  j["estimate"] = {{"signals_file", c.estimate.signals_file},
                   {"direction_grid", c.estimate.direction_grid},
                   {"magnitude_grid", c.estimate.magnitude_grid},
                   {"refine_starts", c.estimate.refine_starts},
                   {"max_iterations", c.estimate.max_iterations}};
  j["readout"] = {{"n0", c.readout.n0},       {"n1", c.readout.n1},
                  {"n_r", c.readout.n_r},     {"eta_m", c.readout.eta_m},
                  {"t_single_s", c.readout.t_single_s}, {"max_n_r", c.readout.max_n_r}};
  j["sensitivity"] = {{"T2_s", c.sensitivity.T2_s},
                      {"dead_time_s", opt(c.sensitivity.dead_time_s)},
                      {"n_spins", c.sensitivity.n_spins},
                      {"C", opt(c.sensitivity.C)},
                      {"densities_cm3", c.sensitivity.densities_cm3},
                      {"volume_mm3", c.sensitivity.volume_mm3},
                      {"interrogation_times_s", c.sensitivity.interrogation_times_s},
                      {"echo_T2_s", c.sensitivity.echo_T2_s},
                      {"p1_per_nv", c.sensitivity.p1_per_nv}};
  j["bath"] = {{"densities_cm3", c.bath.densities_cm3},
               {"n_bath", c.bath.n_bath},
               {"n_central", c.bath.n_central},
               {"trials", c.bath.trials},
               {"geometry_seed", c.bath.geometry_seed},
               {"exclusion_nm", c.bath.exclusion_nm},
               {"cutoff_nm", opt(c.bath.cutoff_nm)},
               {"grid_points", c.bath.grid_points},
               {"taus_s", c.bath.taus_s}};
  j["polarization"] = {{"rabi_hz", c.polarization.rabi_hz},
                       {"t2star_e_s", c.polarization.t2star_e_s},
                       {"tau_c_e_s", c.polarization.tau_c_e_s},
                       {"two_step", c.polarization.two_step},
                       {"duration_s", opt(c.polarization.duration_s)},
                       {"steps", c.polarization.steps},
                       {"trials", c.polarization.trials},
                       {"dephasing", c.polarization.dephasing}};
  return j;
}

}  // namespace nvgyro::cli
