#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>
#include <unistd.h>

#include "cli/config.hpp"
#include "nvgyro/cli.hpp"

namespace fs = std::filesystem;
using namespace nvgyro::cli;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run run_cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run(args, out, err);
  return {code, out.str(), err.str()};
}

class TempDir {
 public:
  TempDir() {
    static int counter = 0;
    path_ = fs::temp_directory_path() /
            ("nvgyro_cli_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  std::string file(const std::string& name, const std::string& text = {}) const {
    const auto p = (path_ / name).string();
    if (!text.empty()) std::ofstream(p) << text;
    return p;
  }

 private:
  fs::path path_;
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

}  // namespace

TEST_CASE("config parsing") {
  SUBCASE("defaults") {
    const auto c = parse_config("", "<empty>");
    CHECK(c.seed == 1);
    CHECK(c.constants.bias_gauss == 20.0);
    CHECK(c.families.names.size() == 4);
  }
  SUBCASE("values and nesting") {
    const auto c = parse_config(
        "seed: 42\nconstants:\n  bias_gauss: 0\nrotation:\n  omega_lab_rad_s: [1, 2, 3]\n"
        "noise:\n  model: ou\n  t2star_s: 0.01\n",
        "x.yaml");
    CHECK(c.seed == 42);
    CHECK(c.constants.bias_gauss == 0.0);
    CHECK(c.omega_lab_rad_s[2] == 3.0);
    CHECK(c.noise.t2star_s.value() == 0.01);
  }
  SUBCASE("unknown keys are rejected with a line number") {
    try {
      parse_config("seed: 1\nconstants:\n  bias_gaus: 3\n", "typo.yaml");
      FAIL("expected a ConfigError");
    } catch (const ConfigError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("typo.yaml:3") != std::string::npos);
      CHECK(msg.find("bias_gaus") != std::string::npos);
    }
    CHECK_THROWS_AS(parse_config("sede: 1\n", "a"), ConfigError);
  }
  SUBCASE("type and range errors") {
    CHECK_THROWS_AS(parse_config("seed: banana\n", "a"), ConfigError);
    CHECK_THROWS_AS(parse_config("threads: -2\n", "a"), ConfigError);
    CHECK_THROWS_AS(parse_config("timing:\n  tau_s: -1\n", "a"), ConfigError);
    CHECK_THROWS_AS(parse_config("noise:\n  model: pink\n", "a"), ConfigError);
    CHECK_THROWS_AS(parse_config("noise:\n  model: ou\n", "a"), ConfigError);
    CHECK_THROWS_AS(parse_config("sweep:\n  variable: b\n", "a"), ConfigError);
    CHECK_THROWS_AS(parse_config("rotation:\n  omega_lab_rad_s: [1, 2]\n", "a"), ConfigError);
    CHECK_THROWS_AS(parse_config("seed: [1\n", "a"), ConfigError);
  }
  SUBCASE("JSON input and round trip through the snapshot") {
    const auto c = parse_config(
        "{\"seed\": 9, \"noise\": {\"model\": \"ou\", \"sigma_rad_s\": 3.5, \"nv_t1_s\": 0.004}, "
        "\"bath\": {\"cutoff_nm\": 12.5}, \"families\": {\"names\": [\"F1\", \"F3\", \"F4\"]}}",
        "c.json");
    const auto snap = to_json(c);
    const auto back = parse_config(snap.dump(), "snap");
    CHECK(to_json(back) == snap);
    CHECK(back.noise.sigma_rad_s.value() == 3.5);
    CHECK(back.bath.cutoff_nm.value() == 12.5);
    CHECK_FALSE(back.noise.t2star_s.has_value());
  }
}

TEST_CASE("command-line errors map to exit codes") {
  CHECK(run_cli({}).code == kExitConfig);
  CHECK(run_cli({"bogus"}).code == kExitConfig);
  CHECK(run_cli({"ramsey", "--format", "xml"}).code == kExitConfig);
  CHECK(run_cli({"ramsey", "--config", "/nonexistent/x.yaml"}).code == kExitConfig);
  CHECK(run_cli({"--help"}).code == kExitOk);
  TempDir dir;
  const auto cfg = dir.file("c.yaml", "command: echo\n");
  const auto r = run_cli({"ramsey", "--config", cfg});
  CHECK(r.code == kExitConfig);
  CHECK(r.err.find("echo") != std::string::npos);
  const auto bad = dir.file("bad.yaml", "sweep:\n  points: 3\n  colour: red\n");
  const auto rb = run_cli({"ramsey", "--config", bad});
  CHECK(rb.code == kExitConfig);
  CHECK(rb.err.find("bad.yaml:3") != std::string::npos);
}

TEST_CASE("ramsey fringe without field or noise") {
  TempDir dir;
  const auto cfg = dir.file("r.yaml",
                            "constants:\n  bias_gauss: 0\ntiming:\n  tau_s: 0.001\n"
                            "sweep:\n  variable: omega_rad_s\n  start: 0\n  stop: 6000\n"
                            "  points: 57\n");
  const auto r = run_cli({"ramsey", "--config", cfg});
  REQUIRE(r.code == 0);
  const auto rows = parse_csv(r.out);
  REQUIRE(rows.size() == 58);
  CHECK(rows[0] == std::vector<std::string>{"omega_rad_s", "signal", "signal_stderr", "n_trials"});
  double worst = 0.0;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const double w = std::stod(rows[i][0]);
    const double s = std::stod(rows[i][1]);
    worst = std::max(worst, std::abs(s - std::pow(std::cos(w * 1e-3), 2)));
  }
  CHECK(worst < 1e-9);
}

TEST_CASE("echo is flat in detuning where Ramsey is not") {
  TempDir dir;
  const auto cfg = dir.file("d.yaml",
                            "constants:\n  bias_gauss: 0\ntiming:\n  tau_s: 0.001\n"
                            "rotation:\n  omega_rad_s: 300\n"
                            "sweep:\n  variable: detuning_hz\n  values: [0, 10, 100, 1000, 10000]\n"
                            "echo:\n  random_carrier_phase: true\n");
  const auto e = parse_csv(run_cli({"echo", "--config", cfg}).out);
  const auto r = parse_csv(run_cli({"ramsey", "--config", cfg}).out);
  REQUIRE(e.size() == 6);
  double spread_e = 0.0, spread_r = 0.0;
  for (std::size_t i = 2; i < e.size(); ++i) {
    spread_e = std::max(spread_e, std::abs(std::stod(e[i][1]) - std::stod(e[1][1])));
    spread_r = std::max(spread_r, std::abs(std::stod(r[i][1]) - std::stod(r[1][1])));
  }
  CHECK(spread_e < 1e-9);
  CHECK(spread_r > 0.1);
}

TEST_CASE("noisy fringe columns and mapping contrast") {
  TempDir dir;
  const auto cfg = dir.file("n.yaml",
                            "timing:\n  tau_s: 0.001\nsweep:\n  points: 3\n"
                            "noise:\n  model: ou\n  t2star_s: 0.002\n  trials: 300\n"
                            "  t2star_e_s: 2.0e-7\n");
  const auto rows = parse_csv(run_cli({"ramsey", "--config", cfg, "--threads", "3"}).out);
  REQUIRE(rows.size() == 4);
  for (std::size_t i = 1; i < rows.size(); ++i) {
    CHECK(rows[i][3] == "300");
    CHECK(std::stod(rows[i][2]) > 0.0);
    const double c = std::exp(-std::pow(230e-9 / 2e-7, 2));
    CHECK(std::abs(std::stod(rows[i][1]) - 0.5) <= c * 0.5 + 1e-12);
  }
}

TEST_CASE("families to estimate round trip") {
  TempDir dir;
  const auto cfg = dir.file("f.yaml", "rotation:\n  omega_lab_rad_s: [0.5, -0.2, 0.1]\n");
  const auto sig = dir.file("signals.csv");
  REQUIRE(run_cli({"families", "--config", cfg, "--out", sig}).code == 0);
  CHECK(fs::exists(sig + ".config.json"));
  const auto r = run_cli({"estimate", "--signals", sig});
  REQUIRE(r.code == 0);
  const auto j = nlohmann::json::parse(r.out);
  CHECK(j["status"] == "converged");
  const std::vector<double> w = j["omega_lab_rad_s"];
  const double err = std::hypot(w[0] - 0.5, w[1] + 0.2, w[2] - 0.1);
  CHECK(err / std::sqrt(0.3) < 1e-6);
  CHECK(j["aliasing_warning"] == false);
  CHECK(j.contains("residual_norm"));

  const auto csv = run_cli({"estimate", "--signals", sig, "--format", "csv"});
  CHECK(csv.code == 0);
  CHECK(csv.out.rfind("omega_x_rad_s,", 0) == 0);

  SUBCASE("shot noise adds a covariance") {
    const auto noisy = dir.file("noisy.yaml",
                                "rotation:\n  omega_lab_rad_s: [0.5, -0.2, 0.1]\n"
                                "families:\n  counts: 1000000\n");
    const auto nsig = dir.file("noisy.csv");
    REQUIRE(run_cli({"families", "--config", noisy, "--out", nsig, "--seed", "5"}).code == 0);
    const auto est = nlohmann::json::parse(run_cli({"estimate", "--signals", nsig}).out);
    CHECK(est.contains("covariance_rad2_s2"));
    CHECK(est["omega_sigma_rad_s"][0].get<double>() > 0.0);
  }
}

TEST_CASE("estimate input validation") {
  TempDir dir;
  SUBCASE("all ones with no field is a null rotation") {
    std::string text = "family,tau_s,signal,stderr\n";
    for (const char* f : {"F1", "F2", "F3", "F4"}) {
      for (int t = 1; t <= 4; ++t) text += std::string(f) + "," + std::to_string(t) + ",1,0\n";
    }
    const auto sig = dir.file("ones.csv", text);
    const auto cfg = dir.file("b0.yaml", "constants:\n  bias_gauss: 0\n");
    const auto r = run_cli({"estimate", "--config", cfg, "--signals", sig});
    CHECK(r.code == 0);
    CHECK(nlohmann::json::parse(r.out)["status"] == "null_rotation");
  }
  SUBCASE("two families is an identifiability error") {
    const auto sig = dir.file("two.csv",
                              "family,tau_s,signal,stderr\nF1,1,0.9,0\nF1,2,0.7,0\n"
                              "F2,1,0.8,0\nF2,2,0.5,0\n");
    const auto r = run_cli({"estimate", "--signals", sig});
    CHECK(r.code == kExitSchema);
    CHECK(r.err.find("three") != std::string::npos);
  }
  SUBCASE("schema errors name the row and column") {
    const auto bad_header = dir.file("h.csv", "fam,tau,signal,stderr\nF1,1,0.5,0\n");
    CHECK(run_cli({"estimate", "--signals", bad_header}).code == kExitSchema);

    const auto bad_value = dir.file("v.csv",
                                    "family,tau_s,signal,stderr\nF1,1,0.5,0\nF2,1,abc,0\n");
    const auto r = run_cli({"estimate", "--signals", bad_value});
    CHECK(r.code == kExitSchema);
    CHECK(r.err.find("row 3") != std::string::npos);
    CHECK(r.err.find("'signal'") != std::string::npos);

    const auto range = dir.file("r.csv", "family,tau_s,signal,stderr\nF1,1,1.5,0\n");
    CHECK(run_cli({"estimate", "--signals", range}).err.find("row 2") != std::string::npos);

    const auto fam = dir.file("f.csv", "family,tau_s,signal,stderr\nF7,1,0.5,0\n");
    CHECK(run_cli({"estimate", "--signals", fam}).err.find("'family'") != std::string::npos);

    const auto dup = dir.file("d.csv",
                              "family,tau_s,signal,stderr\nF1,1,0.5,0\nF1,1,0.6,0\n");
    CHECK(run_cli({"estimate", "--signals", dup}).err.find("duplicate") != std::string::npos);

    const auto hole = dir.file("m.csv",
                               "family,tau_s,signal,stderr\nF1,1,0.5,0\nF2,1,0.5,0\n"
                               "F3,1,0.5,0\nF3,2,0.5,0\n");
    const auto rh = run_cli({"estimate", "--signals", hole});
    CHECK(rh.code == kExitSchema);
    CHECK(rh.err.find("missing") != std::string::npos);

    const auto cols = dir.file("c.csv", "family,tau_s,signal,stderr\nF1,1,0.5\n");
    CHECK(run_cli({"estimate", "--signals", cols}).code == kExitSchema);
  }
  SUBCASE("missing signals file is a config error") {
    CHECK(run_cli({"estimate"}).code == kExitConfig);
    CHECK(run_cli({"estimate", "--signals", "/nonexistent.csv"}).code == kExitConfig);
  }
  SUBCASE("non-convergence exits 4 after writing the report") {
    const auto sig = dir.file("s.csv");
    REQUIRE(run_cli({"families", "--out", sig}).code == 0);
    const auto cfg = dir.file("e.yaml",
                              "estimate:\n  max_iterations: 1\n  direction_grid: 4\n"
                              "  magnitude_grid: 1\n  refine_starts: 1\n");
    const auto r = run_cli({"estimate", "--config", cfg, "--signals", sig});
    CHECK(r.code == kExitNotConverged);
    CHECK(nlohmann::json::parse(r.out)["status"] == "not_converged");
  }
}

TEST_CASE("sensitivity, bath and polarization outputs") {
  TempDir dir;
  SUBCASE("headline row") {
    const auto r = run_cli({"sensitivity"});
    REQUIRE(r.code == 0);
    const auto rows = parse_csv(r.out);
    CHECK(rows[0].back() == "eta_mdeg_s_rthz");
    CHECK(rows[1][0] == "headline");
    CHECK(std::stod(rows[1].back()) == doctest::Approx(0.49).epsilon(0.02));
    CHECK(r.err.find("n_r") != std::string::npos);
  }
  SUBCASE("bath ordering holds row by row") {
    const auto cfg = dir.file("b.yaml", "bath:\n  n_central: 6\n  trials: 60\n  grid_points: 16\n");
    const auto r = run_cli({"bath", "--config", cfg, "--threads", "4"});
    REQUIRE(r.code == 0);
    const auto rows = parse_csv(r.out);
    CHECK(rows.size() == 1 + 3 * 16);
    for (std::size_t i = 1; i < rows.size(); ++i) {
      const double ram = std::stod(rows[i][2]), ram_se = std::stod(rows[i][3]);
      const double ech = std::stod(rows[i][4]), ech_se = std::stod(rows[i][5]);
      CHECK(ech + 3.0 * (ram_se + ech_se) >= ram);
    }
  }
  SUBCASE("two-step polarization ends higher") {
    const auto one = dir.file("p1.yaml", "polarization:\n  trials: 50\n  steps: 100\n");
    const auto two =
        dir.file("p2.yaml", "polarization:\n  trials: 50\n  steps: 100\n  two_step: true\n");
    const auto a = parse_csv(run_cli({"polarize", "--config", one}).out);
    const auto b = parse_csv(run_cli({"polarize", "--config", two}).out);
    CHECK(std::stod(b.back()[1]) > std::stod(a.back()[1]));
    CHECK(a[0] == std::vector<std::string>{"time_s", "polarization", "polarization_stderr"});
  }
  SUBCASE("jsonl output") {
    const auto r = run_cli({"polarize", "--format", "jsonl"});
    std::istringstream in(r.out);
    std::string line;
    std::getline(in, line);
    const auto j = nlohmann::json::parse(line);
    CHECK(j.contains("time_s"));
    CHECK(j["polarization"].is_number());
  }
}

TEST_CASE("outputs are reproducible from the config snapshot") {
  TempDir dir;
  const auto cfg = dir.file("n.yaml",
                            "sweep:\n  points: 4\nnoise:\n  model: ou\n  t2star_s: 0.002\n"
                            "  trials: 100\n");
  const auto a = dir.file("a.csv");
  const auto b = dir.file("b.csv");
  REQUIRE(run_cli({"ramsey", "--config", cfg, "--out", a, "--seed", "77"}).code == 0);
  REQUIRE(run_cli({"ramsey", "--config", a + ".config.json", "--out", b}).code == 0);
  CHECK(slurp(a) == slurp(b));
  CHECK(slurp(a + ".config.json") == slurp(b + ".config.json"));
  const auto snap = nlohmann::json::parse(slurp(a + ".config.json"));
  CHECK(snap["seed"] == 77);
  CHECK(snap["command"] == "ramsey");

  const auto c = dir.file("c.csv");
  REQUIRE(run_cli({"ramsey", "--config", cfg, "--out", c, "--seed", "78"}).code == 0);
  CHECK(slurp(a) != slurp(c));
}

TEST_CASE("shipped example configs load") {
  for (const auto& entry : fs::directory_iterator(NVGYRO_CONFIG_DIR)) {
    CAPTURE(entry.path().string());
    CHECK_NOTHROW(load_config(entry.path().string()));
  }
}
