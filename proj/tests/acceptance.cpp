// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fail.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <unistd.h>

#include "nvgyro/cli.hpp"
#include "nvgyro/noise.hpp"
#include "nvgyro/random.hpp"
#include "nvgyro/sensor.hpp"
#include "nvgyro/sequence.hpp"
#include "nvgyro/threeaxis.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using namespace nvgyro;
using std::numbers::pi;

namespace {

struct Outcome {
  bool pass;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}
std::string fmt(const char* f, double a, double b) {
  char buf[160];
  std::snprintf(buf, sizeof buf, f, a, b);
  return buf;
}
std::string fmt(const char* f, double a, double b, double c) {
  char buf[200];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

spin::PhysicalConstants zero_field() {
  spin::PhysicalConstants c;
  c.bias_gauss = 0.0;
  return c;
}

Outcome headline_sensitivity() {
  const auto eta = sensor::sensitivity({1e-3, 152e-6, 2.5e14, 0.25});
  const double v = eta.mdeg_s_per_rthz;
  return {std::abs(v - 0.49) <= 0.02,
          fmt("eta = %.4f mdeg/s/rtHz (%.3e rad/s/rtHz), target 0.49 +- 0.02", v,
              eta.rad_s_per_rthz)};
}

Outcome polarization_time() {
  const spin::PhysicalConstants c;
  const sensor::PolarizationDrive d;
  const double t = sensor::polarization_time(c, d);
  const double hz = sensor::polarization_time_hz_reading(c, d);
  return {std::abs(t / 1.33e-6 - 1.0) <= 0.05,
          fmt("t_pol = %.4f us, target 1.33 us +- 5%%; note: literal Hz reading gives %.2f us",
              t * 1e6, hz * 1e6)};
}

Outcome ramsey_oracle() {
  const auto c = zero_field();
  const seq::SequenceTiming timing{1e-3};
  const auto h = seq::free_evolution_hamiltonian(c);
  const auto zero = spin::SpinState::basis_state(spin::LevelBasis::nuclear(), 1);
  double fringe = 0.0, state = 0.0;
  for (int k = 0; k < 100; ++k) {
    const double phase = 2.0 * pi * k / 100.0;
    const double omega = phase / timing.tau_s;
    const auto r = seq::run_ramsey_aligned(omega, timing, c);
    fringe = std::max(fringe, std::abs(r.signal - std::cos(phase) * std::cos(phase)));
    const auto u = spin::compose(
        spin::rf_pulse_unitary(-omega * timing.tau_s, pi / 2.0),
        spin::compose(spin::evolution_operator(h, timing.tau_s), spin::rf_pulse_unitary(0.0, pi / 2.0)));
    const auto psi = spin::apply(u, zero);
    state = std::max(state, oracle::phase_distance(psi.amplitudes(),
                                                   seq::ramsey_closed_form(phase).amplitudes()));
  }
  return {fringe < 1e-9 && state < 1e-10,
          fmt("max |signal - cos^2| = %.2e (< 1e-9); composed unitary vs closed form %.2e (< 1e-10)",
              fringe, state)};
}

Outcome echo_refocusing() {
  const spin::PhysicalConstants c;  // includes the 20 G bias precession
  const seq::SequenceTiming timing{1e-3};
  const double omega = 300.0;
  std::vector<double> detunings;
  for (int k = 0; k <= 40; ++k) detunings.push_back(std::pow(10.0, k / 10.0));
  double lo = 1.0, hi = 0.0;
  for (double d : detunings) {
    const double s = seq::run_echo_aligned(omega, d, timing, c).signal;
    lo = std::min(lo, s);
    hi = std::max(hi, s);
  }
  const double detuning_spread = hi - lo;
  Rng rng(derive_seed(2024, 4));
  std::uniform_real_distribution<double> u(0.0, 2.0 * pi);
  double plo = 1.0, phi = 0.0;
  for (int k = 0; k < 100; ++k) {
    const seq::EchoOptions opt{0.0, u(rng)};
    for (double d : {detunings.front(), detunings[20], detunings.back()}) {
      const double s = seq::run_echo_aligned(omega, d, timing, c, opt).signal;
      plo = std::min(plo, s);
      phi = std::max(phi, s);
    }
  }
  const double phase_spread = phi - plo;
  return {detuning_spread < 1e-6 && phase_spread < 1e-6,
          fmt("spread over 1 Hz..10 kHz detuning %.2e, over 100 random carrier offsets %.2e (< 1e-6)",
              detuning_spread, phase_spread)};
}

Outcome tilted_validation() {
  const auto c = zero_field();
  Rng rng(derive_seed(2024, 5));
  std::uniform_real_distribution<double> th(0.0, pi), ph(0.0, 2.0 * pi), w(0.0, 2.0 * pi);
  double amp = 0.0, seq_err = 0.0, tan_err = 0.0, alpha_err = 0.0;
  const auto& fam = three::family(three::FamilyId::F3);
  for (int k = 0; k < 1000; ++k) {
    const double t = th(rng), p = ph(rng), wt = w(rng);
    const Eigen::Vector3d n(std::sin(t) * std::cos(p), std::sin(t) * std::sin(p), std::cos(t));
    const auto ref = oracle::frame_rotating_ramsey(n, wt, 1.0, 0.0, 256);
    const auto g = three::tilted_geometry_bruteforce(t, p, -wt);
    amp = std::max(amp, oracle::phase_distance(three::tilted_closed_form(g.psi, g.alpha).amplitudes(),
                                               ref.state));
    const Eigen::Vector3d lab = n.x() * fam.x + n.y() * fam.y + n.z() * fam.axis;
    const auto r = three::run_ramsey_tilted(fam, three::RotationSpec{wt * lab}, 1.0, c);
    seq_err = std::max(seq_err, oracle::phase_distance(r.final_state.amplitudes(), ref.state));
    // The closed-form tangent fixes psi modulo pi.
    const double psi_ref = std::atan2(ref.ey, ref.ex);
    const double psi_formula = std::atan(three::appendix_tan_psi(t, p, -wt));
    if (std::hypot(ref.ex, ref.ey) > 1e-6) {
      tan_err = std::max(tan_err, std::abs(std::sin(psi_ref - psi_formula)));
    }
    alpha_err = std::max(alpha_err, std::abs(three::appendix_alpha_expression(t, p, -wt) -
                                             (ref.ex * ref.ex + ref.ey * ref.ey)));
  }
  double limit = 0.0;
  for (double wt : {0.3, 1.7, 4.0}) {
    for (double p : {0.0, 2.0}) {
      const auto g = three::tilted_geometry_bruteforce(0.0, p, wt);
      limit = std::max({limit, std::abs(std::remainder(g.psi - wt, 2.0 * pi)),
                        std::abs(g.alpha - pi)});
      const auto r = three::run_ramsey_tilted(fam, three::RotationSpec{wt * fam.axis}, 1.0, c);
      limit = std::max(limit, std::abs(r.signal - std::pow(std::cos(wt), 2)));
    }
  }
  const bool ok = amp < 1e-8 && seq_err < 1e-8 && tan_err < 1e-8 && alpha_err < 1e-8 &&
                  limit < 1e-10;
  std::string d = fmt("1000 draws: closed-form amplitudes %.1e, sequence %.1e", amp, seq_err);
  d += fmt(" vs stepped propagation (< 1e-8); tan(psi) %.1e, transverse-fraction %.1e", tan_err,
           alpha_err);
  d += fmt("; theta=0 limits %.1e", limit);
  return {ok, d};
}

Outcome three_axis_round_trip() {
  const spin::PhysicalConstants c;
  const Eigen::Vector3d truth(0.5, -0.2, 0.1);
  std::vector<double> taus;
  for (int k = 1; k <= 10; ++k) taus.push_back(0.5 * k);
  const std::vector<three::FamilyId> fams{three::FamilyId::F1, three::FamilyId::F2,
                                          three::FamilyId::F3, three::FamilyId::F4};
  const auto exact = three::forward_model(three::RotationSpec{truth}, taus, fams, c);
  const auto rep = three::estimate_rotation(exact, c);
  const double rel = (rep.rotation.omega_lab - truth).norm() / truth.norm();

  const double counts = 1e6;
  const Eigen::MatrixXd J = three::signal_jacobian(truth, fams, taus, c);
  Eigen::VectorXd var(J.rows());
  for (Eigen::Index f = 0; f < exact.signal.rows(); ++f) {
    for (Eigen::Index t = 0; t < exact.signal.cols(); ++t) {
      const double p = exact.signal(f, t);
      var(f * exact.signal.cols() + t) = p * (1.0 - p) / counts;
    }
  }
  const Eigen::Matrix3d cov = three::linearized_covariance(J, var);
  const Eigen::Matrix3d info = cov.inverse();
  int inside = 0, per_axis = 0, converged = 0;
  for (int trial = 0; trial < 100; ++trial) {
    auto noisy = exact;
    for (Eigen::Index f = 0; f < noisy.signal.rows(); ++f) {
      for (Eigen::Index t = 0; t < noisy.signal.cols(); ++t) {
        Rng rng(derive_seed(2024, static_cast<std::uint64_t>(trial),
                            static_cast<std::uint64_t>(f * noisy.signal.cols() + t)));
        std::binomial_distribution<long> shots(static_cast<long>(counts),
                                               std::clamp(exact.signal(f, t), 0.0, 1.0));
        noisy.signal(f, t) = static_cast<double>(shots(rng)) / counts;
      }
    }
    const auto fit = three::estimate_rotation(noisy, c);
    if (fit.status == three::FitStatus::Converged) ++converged;
    const Eigen::Vector3d d = fit.rotation.omega_lab - truth;
    if (d.dot(info * d) <= 9.0) ++inside;
    bool axis_ok = true;
    for (int k = 0; k < 3; ++k) axis_ok = axis_ok && std::abs(d(k)) <= 3.0 * std::sqrt(cov(k, k));
    if (axis_ok) ++per_axis;
  }
  std::string d = fmt("noiseless relative error %.2e (< 1e-6); 10^6 counts: %g/100 inside the 3-sigma",
                      rel, inside);
  d += fmt(" ellipsoid (>= 95), %g/100 inside per-axis 3-sigma, %g/100 converged", per_axis,
           converged);
  return {rel < 1e-6 && inside >= 95, d};
}

double interpolate_log(const std::vector<double>& x, const std::vector<double>& y, double at) {
  for (std::size_t i = 1; i < x.size(); ++i) {
    if (x[i] >= at) {
      const double f = std::log(at / x[i - 1]) / std::log(x[i] / x[i - 1]);
      return y[i - 1] + f * (y[i] - y[i - 1]);
    }
  }
  return y.back();
}

Outcome bath_ordering() {
  noise::BathModel bath;
  bath.n_bath = 50;
  bath.n_central = 20;
  bath.trials = 200;
  const unsigned threads = std::max(1u, std::thread::hardware_concurrency());
  double last_rate = 0.0;
  bool increasing = true;
  double min_echo = 1.0;
  std::string rates;
  for (double n : {0.35e19, 1.06e19, 3.17e19}) {
    bath.density_cm3 = n;
    const auto taus = noise::bath_tau_grid(n);
    const auto ram = noise::bath_coherence_simulation(bath, noise::SequenceKind::Ramsey, taus, threads);
    const auto ech = noise::bath_coherence_simulation(bath, noise::SequenceKind::Echo, taus, threads);
    const double t_e = ram.one_over_e_time;
    const double rate = std::isfinite(t_e) ? 1.0 / t_e : 0.0;
    increasing = increasing && rate > last_rate;
    last_rate = rate;
    const double echo_at = std::isfinite(t_e) ? interpolate_log(taus, ech.coherence, t_e) : 0.0;
    min_echo = std::min(min_echo, echo_at);
    rates += fmt(" %.3g/s", rate);
  }
  const auto s = noise::dipolar_coupling_scales(1e19);
  const bool ee = s.electron_electron_hz >= 3e6 / 2.0 && s.electron_electron_hz <= 3e6 * 2.0;
  const bool en = s.electron_nuclear_hz >= 345.0 / 2.0 && s.electron_nuclear_hz <= 345.0 * 2.0;
  std::string d = "Ramsey 1/e rates" + rates + (increasing ? " (increasing)" : " (NOT increasing)");
  d += fmt("; min echo at Ramsey 1/e time %.3f (> 0.9); couplings %.2f MHz, %.0f Hz at 1e19 cm^-3",
           min_echo, s.electron_electron_hz / 1e6, s.electron_nuclear_hz);
  return {increasing && min_echo > 0.9 && ee && en, d};
}

Outcome readout_efficiency() {
  sensor::ReadoutModel r;
  const double c100 = sensor::detection_efficiency(r);
  double worst = 0.0;
  for (std::size_t n : {1, 2, 5, 10}) {
    r.n_r = n;
    const double a = sensor::detection_efficiency(r);
    r.n_r = 4 * n;
    worst = std::max(worst, std::abs(sensor::detection_efficiency(r) / a / 2.0 - 1.0));
  }
  const auto best = sensor::optimal_readout_count(sensor::ReadoutModel{}, 1e-3, 2e-6);
  const double ratio = static_cast<double>(best.n_r) / 100.0;
  const bool ok = std::abs(c100 - 0.25) < 1e-9 && worst < 0.01 && ratio >= 0.5 && ratio <= 2.0;
  std::string d = fmt("C_100 = %.6f; sqrt(n_r) scaling deviation %.2e (< 1%%); eta-optimal n_r = %g",
                      c100, worst, static_cast<double>(best.n_r));
  d += fmt(" under the n_r <= %g cap (uncapped optimum %g)", 100.0,
           static_cast<double>(best.n_r_unconstrained));
  return {ok, d};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome determinism() {
  const fs::path dir = fs::temp_directory_path() / ("nvgyro_accept_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  auto write = [&](const std::string& name, const std::string& text) {
    std::ofstream((dir / name).string()) << text;
    return (dir / name).string();
  };
  const std::string signals = (dir / "signals.csv").string();
  struct Case {
    std::string name;
    std::vector<std::string> args;
  };
  const std::vector<Case> cases{
      {"ramsey", {"ramsey", "--config", write("r.yaml",
                                             "sweep:\n  points: 21\nnoise:\n  model: ou\n"
                                             "  t2star_s: 0.002\n  trials: 200\n")}},
      {"echo", {"echo", "--config", write("e.yaml",
                                         "sweep:\n  points: 21\necho:\n  random_carrier_phase: true\n"
                                         "noise:\n  model: ou\n  t2star_s: 0.002\n  trials: 200\n")}},
      {"families", {"families", "--config", write("f.yaml", "families:\n  counts: 1000000\n")}},
      {"estimate", {"estimate", "--signals", signals}},
      {"sensitivity", {"sensitivity"}},
      {"bath", {"bath"}},
      {"polarize", {"polarize", "--config", write("p.yaml", "polarization:\n  two_step: true\n")}},
  };
  // Signal file for the estimator.
  {
    std::ostringstream o, e;
    cli::run({"families", "--config", (dir / "f.yaml").string(), "--seed", "11", "--out", signals},
             o, e);
  }
  int identical = 0;
  std::string failed;
  for (const auto& c : cases) {
    std::vector<std::string> outputs;
    for (const char* threads : {"1", "4"}) {
      auto args = c.args;
      const auto out = (dir / (c.name + "_" + threads + ".out")).string();
      args.insert(args.end(), {"--seed", "11", "--threads", threads, "--out", out});
      std::ostringstream o, e;
      const int code = cli::run(args, o, e);
      outputs.push_back(std::to_string(code) + "\n" + slurp(out));
    }
    if (outputs[0] == outputs[1] && outputs[0].rfind("0\n", 0) == 0 && outputs[0].size() > 10) {
      ++identical;
    } else {
      failed += " " + c.name;
    }
  }
  fs::remove_all(dir);
  std::string d = fmt("%g/%g commands byte-identical across repeated runs (1 vs 4 threads)",
                      identical, static_cast<double>(cases.size()));
  if (!failed.empty()) d += "; differing:" + failed;
  return {identical == static_cast<int>(cases.size()), d};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"headline sensitivity", headline_sensitivity},
      {"polarization time", polarization_time},
      {"Ramsey fringe oracle", ramsey_oracle},
      {"echo refocusing", echo_refocusing},
      {"tilted-axis validation", tilted_validation},
      {"three-axis round trip", three_axis_round_trip},
      {"bath decoherence ordering", bath_ordering},
      {"repeated-readout efficiency", readout_efficiency},
      {"determinism", determinism},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (!o.pass) ++failures;
    std::printf("%s  %zu  %-28s %s [%.2fs]\n", o.pass ? "PASS" : "FAIL", i + 1,
                criteria[i].first.c_str(), o.detail.c_str(), secs);
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failures,
              criteria.size());
  return failures == 0 ? 0 : 1;
}
