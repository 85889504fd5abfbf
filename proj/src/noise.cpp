#include "nvgyro/noise.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <string>

#include "nvgyro/errors.hpp"

namespace nvgyro::noise {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

// r - 1 + exp(-r), accurate for small r.
double g_ramp(double r) {
  if (r < 1e-3) return r * r * (0.5 - r / 6.0 + r * r / 24.0);
  return r + std::expm1(-r);
}

// 2r - 3 + 4 e^{-r} - e^{-2r}, the conditional variance of the OU integral
// in units of sigma^2 tau_c^2. Leading term is 2 r^3 / 3.
double f_cond(double r) {
  if (r < 0.1) {
    double term = r * r / 2.0;  // r^k / k! at k = 2
    double pow2 = 4.0;          // 2^k
    double sum = 0.0;
    for (int k = 3; k <= 16; ++k) {
      term *= r / k;
      pow2 *= 2.0;
      const double sign = (k % 2 == 0) ? 1.0 : -1.0;
      sum += sign * (4.0 - pow2) * term;
    }
    return sum;
  }
  const double a = std::exp(-r);
  return 2.0 * r - 3.0 + 4.0 * a - a * a;
}

struct MeanAccumulator {
  CompensatedSum sum;
  CompensatedSum sum_sq;
  std::size_t n = 0;

  void add(double x) {
    sum.add(x);
    sum_sq.add(x * x);
    ++n;
  }
  double mean() const { return n ? sum.value() / static_cast<double>(n) : 0.0; }
  double standard_error() const {
    if (n < 2) return 0.0;
    const double m = mean();
    const double var = std::max(0.0, (sum_sq.value() - static_cast<double>(n) * m * m) /
                                         static_cast<double>(n - 1));
    return std::sqrt(var / static_cast<double>(n));
  }
};

void require_taus(std::span<const double> taus) {
  for (double t : taus) {
    if (!(t >= 0.0) || !std::isfinite(t)) {
      throw PreconditionError("interrogation times must be finite and non-negative");
    }
  }
}

void finish_curve(CoherenceCurve& curve) {
  const auto fit = fit_stretched_exponential(curve.times, curve.coherence);
  if (fit.ok) {
    curve.fitted_T2 = fit.T2;
    curve.fitted_exponent = fit.exponent;
  }
  curve.one_over_e_time = one_over_e_time(curve.times, curve.coherence);
}

}  // namespace

void OUProcess::validate() const {
  if (!(sigma_rad_s >= 0.0) || !std::isfinite(sigma_rad_s)) {
    throw PreconditionError("OU sigma must be finite and non-negative");
  }
  if (!(tau_c_s > 0.0)) throw PreconditionError("OU tau_c must be positive");
}

double ou_phase_variance(double sigma_rad_s, double tau_c_s, double t) {
  if (std::isinf(tau_c_s)) return sigma_rad_s * sigma_rad_s * t * t;
  return 2.0 * sigma_rad_s * sigma_rad_s * tau_c_s * tau_c_s * g_ramp(t / tau_c_s);
}

OUProcess ou_for_t2star(double t2star_s, double tau_c_s, std::uint64_t seed) {
  if (!(t2star_s > 0.0)) throw PreconditionError("T2* must be positive");
  if (!(tau_c_s > 0.0)) throw PreconditionError("tau_c must be positive");
  OUProcess p;
  p.tau_c_s = tau_c_s;
  p.seed = seed;
  if (std::isinf(tau_c_s)) {
    p.sigma_rad_s = std::sqrt(2.0) / t2star_s;
  } else {
    p.sigma_rad_s = 1.0 / (tau_c_s * std::sqrt(g_ramp(t2star_s / tau_c_s)));
  }
  return p;
}

OUStepper::OUStepper(double sigma_rad_s, double tau_c_s, double dt) {
  if (!(dt >= 0.0)) throw PreconditionError("OU step must be non-negative");
  if (!(tau_c_s > 0.0)) throw PreconditionError("OU tau_c must be positive");
  if (std::isinf(tau_c_s) || dt == 0.0) {
    decay_ = 1.0;
    mean_int_ = dt;
    sd_x_ = 0.0;
    sd_int_ = 0.0;
    corr_ = 0.0;
    return;
  }
  const double r = dt / tau_c_s;
  decay_ = std::exp(-r);
  const double one_minus_a = -std::expm1(-r);
  mean_int_ = tau_c_s * one_minus_a;
  const double s2 = sigma_rad_s * sigma_rad_s;
  const double var_x = s2 * (-std::expm1(-2.0 * r));
  const double var_int = s2 * tau_c_s * tau_c_s * f_cond(r);
  const double cov = s2 * tau_c_s * one_minus_a * one_minus_a;
  sd_x_ = std::sqrt(std::max(var_x, 0.0));
  sd_int_ = std::sqrt(std::max(var_int, 0.0));
  corr_ = (sd_x_ > 0.0 && sd_int_ > 0.0) ? std::clamp(cov / (sd_x_ * sd_int_), -1.0, 1.0) : 0.0;
}

OUStepper::Step OUStepper::step(double x0, Rng& rng) const {
  std::normal_distribution<double> normal(0.0, 1.0);
  const double z1 = normal(rng);
  const double z2 = normal(rng);
  Step s;
  s.x_end = decay_ * x0 + sd_x_ * z1;
  s.integral = mean_int_ * x0 + sd_int_ * (corr_ * z1 + std::sqrt(1.0 - corr_ * corr_) * z2);
  return s;
}

std::vector<double> sample_ou_path(const OUProcess& p, double dt, std::size_t n_steps) {
  p.validate();
  if (!(dt > 0.0)) throw PreconditionError("dt must be positive");
  if (n_steps < 1) throw PreconditionError("n_steps must be at least 1");

  Rng rng(p.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double a = std::isinf(p.tau_c_s) ? 1.0 : std::exp(-dt / p.tau_c_s);
  const double kick = std::isinf(p.tau_c_s)
                          ? 0.0
                          : p.sigma_rad_s * std::sqrt(-std::expm1(-2.0 * dt / p.tau_c_s));
  std::vector<double> path(n_steps + 1);
  path[0] = p.sigma_rad_s * normal(rng);
  for (std::size_t k = 0; k < n_steps; ++k) {
    path[k + 1] = a * path[k] + kick * normal(rng);
  }
  return path;
}

std::vector<double> sample_ou_phases_from(double x0, double sigma_rad_s, double tau_c_s,
                                          std::span<const double> segments, Rng& rng,
                                          std::size_t substeps) {
  if (substeps < 1) throw PreconditionError("substeps must be at least 1");
  std::vector<double> phases;
  phases.reserve(segments.size());
  double x = x0;
  for (double seg : segments) {
    if (!(seg >= 0.0)) throw PreconditionError("segment lengths must be non-negative");
    const OUStepper stepper(sigma_rad_s, tau_c_s, seg / static_cast<double>(substeps));
    double phase = 0.0;
    for (std::size_t k = 0; k < substeps; ++k) {
      const auto s = stepper.step(x, rng);
      phase += s.integral;
      x = s.x_end;
    }
    phases.push_back(phase);
  }
  return phases;
}

std::vector<double> sample_ou_phases(const OUProcess& p, std::span<const double> segments,
                                     Rng& rng, std::size_t substeps) {
  p.validate();
  std::normal_distribution<double> normal(0.0, 1.0);
  const double x0 = p.sigma_rad_s * normal(rng);
  return sample_ou_phases_from(x0, p.sigma_rad_s, p.tau_c_s, segments, rng, substeps);
}

StretchedExpFit fit_stretched_exponential(std::span<const double> times,
                                          std::span<const double> coherence) {
  StretchedExpFit fit;
  const std::size_t n = std::min(times.size(), coherence.size());
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  std::size_t m = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double c = coherence[i];
    if (!(times[i] > 0.0) || !(c >= 0.05) || !(c <= 0.95)) continue;
    const double x = std::log(times[i]);
    const double y = std::log(-std::log(c));
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
    ++m;
  }
  if (m < 2) return fit;
  const double dm = static_cast<double>(m);
  const double denom = dm * sxx - sx * sx;
  if (!(std::abs(denom) > 1e-300)) return fit;
  const double slope = (dm * sxy - sx * sy) / denom;
  const double intercept = (sy - slope * sx) / dm;
  if (!(slope > 0.0)) return fit;
  fit.exponent = slope;
  fit.T2 = std::exp(-intercept / slope);
  fit.ok = std::isfinite(fit.T2);
  return fit;
}

double one_over_e_time(std::span<const double> times, std::span<const double> coherence) {
  const double level = std::exp(-1.0);
  const std::size_t n = std::min(times.size(), coherence.size());
  for (std::size_t i = 0; i < n; ++i) {
    if (coherence[i] < level) {
      if (i == 0) return times[0];
      const double c0 = coherence[i - 1], c1 = coherence[i];
      const double w = (c0 - level) / (c0 - c1);
      return times[i - 1] + w * (times[i] - times[i - 1]);
    }
  }
  return std::numeric_limits<double>::quiet_NaN();
}

CoherenceCurve dephased_ramsey_coherence(const OUProcess& p, std::span<const double> taus,
                                         std::size_t n_trials, SequenceKind sequence,
                                         unsigned threads) {
  p.validate();
  require_taus(taus);
  if (n_trials < 1) throw PreconditionError("n_trials must be at least 1");

  CoherenceCurve curve;
  curve.sequence = sequence;
  curve.times.assign(taus.begin(), taus.end());
  curve.coherence.assign(taus.size(), 1.0);
  curve.stderr_.assign(taus.size(), 0.0);

  parallel_for(taus.size(), threads, [&](std::size_t i) {
    const double tau = taus[i];
    MeanAccumulator acc;
    std::array<double, 2> halves{tau / 2.0, tau / 2.0};
    std::array<double, 1> whole{tau};
    for (std::size_t j = 0; j < n_trials; ++j) {
      Rng rng(derive_seed(p.seed, i, j));
      double phi;
      if (sequence == SequenceKind::Ramsey) {
        phi = sample_ou_phases(p, whole, rng)[0];
      } else {
        const auto ph = sample_ou_phases(p, halves, rng);
        phi = ph[0] - ph[1];
      }
      acc.add(std::cos(phi));
    }
    curve.coherence[i] = acc.mean();
    curve.stderr_[i] = acc.standard_error();
  });
  finish_curve(curve);
  return curve;
}

double nv_t1_dephasing_factor(double t1_s, double tau_s) {
  if (!(t1_s > 0.0)) throw PreconditionError("T1 must be positive");
  if (!(tau_s >= 0.0)) throw PreconditionError("tau must be non-negative");
  if (std::isinf(t1_s)) return 1.0;
  return std::exp(-tau_s / t1_s);
}

DipolarScales dipolar_coupling_scales(double density_cm3) {
  if (!(density_cm3 > 0.0)) throw PreconditionError("density must be positive");
  const double n_nm3 = density_cm3 * 1e-21;
  const double r = std::tgamma(4.0 / 3.0) * std::cbrt(3.0 / (4.0 * std::numbers::pi * n_nm3));
  const double r3 = r * r * r;
  return {r, kElectronElectronHzNm3 / r3, kElectronNitrogenHzNm3 / r3};
}

double BathModel::sphere_radius_nm() const {
  if (density_cm3 <= 0.0) return std::numeric_limits<double>::infinity();
  const double n_nm3 = density_cm3 * 1e-21;
  return std::cbrt(3.0 * static_cast<double>(n_bath) / (4.0 * std::numbers::pi * n_nm3));
}

void BathModel::validate() const {
  if (!(density_cm3 >= 0.0) || !std::isfinite(density_cm3)) {
    throw ConfigurationError("bath density must be finite and non-negative");
  }
  if (n_bath < 1) throw ConfigurationError("n_bath must be at least 1");
  if (n_central < 1) throw ConfigurationError("n_central must be at least 1");
  if (trials < 1) throw ConfigurationError("bath trials must be at least 1");
  if (!(exclusion_nm >= 0.0)) throw ConfigurationError("exclusion radius must be non-negative");
  if (!(cutoff_nm > 0.0)) throw ConfigurationError("coupling cutoff must be positive");
  if (density_cm3 > 0.0 && sphere_radius_nm() < 2.0 * exclusion_nm) {
    throw ConfigurationError("bath sphere radius " + std::to_string(sphere_radius_nm()) +
                             " nm is below twice the exclusion distance");
  }
}

BathRealization sample_bath(const BathModel& bath, std::size_t central_index) {
  bath.validate();
  if (bath.density_cm3 <= 0.0) throw PreconditionError("sample_bath needs a positive density");

  const double radius = bath.sphere_radius_nm();
  const double excl2 = bath.exclusion_nm * bath.exclusion_nm;
  Rng rng(derive_seed(bath.geometry_seed, central_index));
  std::uniform_real_distribution<double> uni(-1.0, 1.0);

  std::vector<std::array<double, 3>> pos;
  pos.reserve(bath.n_bath);
  const std::size_t max_attempts = 1000 * bath.n_bath + 10000;
  std::size_t attempts = 0;
  while (pos.size() < bath.n_bath) {
    if (++attempts > max_attempts) {
      throw ConfigurationError("cannot place bath spins with the requested exclusion distance");
    }
    std::array<double, 3> v{uni(rng), uni(rng), uni(rng)};
    const double rr = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
    if (rr > 1.0) continue;
    for (double& x : v) x *= radius;
    if (rr * radius * radius < excl2) continue;
    bool clash = false;
    for (const auto& q : pos) {
      const double dx = v[0] - q[0], dy = v[1] - q[1], dz = v[2] - q[2];
      if (dx * dx + dy * dy + dz * dz < excl2) {
        clash = true;
        break;
      }
    }
    if (!clash) pos.push_back(v);
  }

  const std::size_t nb = pos.size();
  BathRealization out;
  out.nuclear_coupling_hz.resize(nb);
  for (std::size_t j = 0; j < nb; ++j) {
    const auto& v = pos[j];
    const double r2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
    const double r = std::sqrt(r2);
    const double c2 = v[2] * v[2] / r2;
    out.nuclear_coupling_hz[j] = kElectronNitrogenHzNm3 * (1.0 - 3.0 * c2) / (r2 * r);
  }

  CompensatedSum rate_sum;
  for (std::size_t i = 0; i < nb; ++i) {
    CompensatedSum row;
    for (std::size_t j = 0; j < nb; ++j) {
      if (i == j) continue;
      const double dx = pos[i][0] - pos[j][0], dy = pos[i][1] - pos[j][1],
                   dz = pos[i][2] - pos[j][2];
      const double r2 = dx * dx + dy * dy + dz * dz;
      const double r = std::sqrt(r2);
      if (r > bath.cutoff_nm) continue;
      const double coupling = kElectronElectronHzNm3 * (1.0 - 3.0 * dz * dz / r2) / (r2 * r);
      out.max_pair_coupling_hz = std::max(out.max_pair_coupling_hz, std::abs(coupling));
      row.add(std::numbers::pi * std::abs(coupling));
    }
    rate_sum.add(row.value());
  }
  out.flip_flop_rate_hz = rate_sum.value() / static_cast<double>(nb) / 2.0;
  out.tau_c_s = out.flip_flop_rate_hz > 0.0 ? 1.0 / out.flip_flop_rate_hz
                                            : std::numeric_limits<double>::infinity();

  CompensatedSum a_sum;
  for (double a : out.nuclear_coupling_hz) a_sum.add(a);
  out.mean_coupling_hz = a_sum.value() / static_cast<double>(nb);
  CompensatedSum dev_sq;
  for (double a : out.nuclear_coupling_hz) {
    const double d = a - out.mean_coupling_hz;
    dev_sq.add(d * d);
  }
  // Each bath spin contributes a_j s_j with s_j = +-1/2.
  out.sigma_rad_s = kTwoPi * std::sqrt(dev_sq.value() / 4.0);
  return out;
}

CoherenceCurve bath_coherence_simulation(const BathModel& bath, SequenceKind sequence,
                                         std::span<const double> taus, unsigned threads) {
  bath.validate();
  require_taus(taus);

  CoherenceCurve curve;
  curve.sequence = sequence;
  curve.times.assign(taus.begin(), taus.end());
  curve.coherence.assign(taus.size(), 1.0);
  curve.stderr_.assign(taus.size(), 0.0);
  if (bath.density_cm3 == 0.0) return curve;

  const std::size_t nt = taus.size();
  std::vector<std::vector<MeanAccumulator>> per_central(bath.n_central,
                                                         std::vector<MeanAccumulator>(nt));
  const std::uint64_t trial_root = derive_seed(bath.geometry_seed, 0x6261746855ULL);

  parallel_for(bath.n_central, threads, [&](std::size_t c) {
    const BathRealization real = sample_bath(bath, c);
    const auto& a = real.nuclear_coupling_hz;
    auto& acc = per_central[c];
    std::vector<OUStepper> full, half;
    full.reserve(nt);
    half.reserve(nt);
    for (double tau : taus) {
      full.emplace_back(real.sigma_rad_s, real.tau_c_s, tau);
      half.emplace_back(real.sigma_rad_s, real.tau_c_s, tau / 2.0);
    }
    for (std::size_t t = 0; t < bath.trials; ++t) {
      Rng rng(derive_seed(trial_root, c, t));
      std::bernoulli_distribution up(0.5);
      double m = 0.0, x0 = 0.0;
      for (double aj : a) {
        const double s = up(rng) ? 0.5 : -0.5;
        m += s;
        x0 += (aj - real.mean_coupling_hz) * s;
      }
      x0 *= kTwoPi;
      for (std::size_t i = 0; i < nt; ++i) {
        double phi;
        if (sequence == SequenceKind::Ramsey) {
          phi = kTwoPi * real.mean_coupling_hz * m * taus[i] + full[i].step(x0, rng).integral;
        } else {
          const auto first = half[i].step(x0, rng);
          const auto second = half[i].step(first.x_end, rng);
          phi = first.integral - second.integral;
        }
        acc[i].add(std::cos(phi));
      }
    }
  });

  for (std::size_t i = 0; i < nt; ++i) {
    CompensatedSum sum, sum_sq;
    std::size_t n = 0;
    for (const auto& acc : per_central) {
      sum.add(acc[i].sum.value());
      sum_sq.add(acc[i].sum_sq.value());
      n += acc[i].n;
    }
    const double dn = static_cast<double>(n);
    const double mean = sum.value() / dn;
    const double var = n > 1 ? std::max(0.0, (sum_sq.value() - dn * mean * mean) / (dn - 1.0)) : 0.0;
    curve.coherence[i] = taus[i] == 0.0 ? 1.0 : mean;
    curve.stderr_[i] = std::sqrt(var / dn);
  }
  finish_curve(curve);
  return curve;
}

std::vector<double> bath_tau_grid(double density_cm3, std::size_t points) {
  if (points < 2) throw PreconditionError("tau grid needs at least 2 points");
  const auto scales = dipolar_coupling_scales(density_cm3);
  const double t_ref = 1.0 / (kTwoPi * scales.electron_nuclear_hz);
  const double lo = std::log(1e-3 * t_ref), hi = std::log(1e4 * t_ref);
  std::vector<double> grid(points);
  for (std::size_t i = 0; i < points; ++i) {
    grid[i] = std::exp(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(points - 1));
  }
  return grid;
}

double bath_ramsey_t2star(const BathModel& bath, unsigned threads) {
  const auto grid = bath_tau_grid(bath.density_cm3);
  return bath_coherence_simulation(bath, SequenceKind::Ramsey, grid, threads).one_over_e_time;
}

}  // namespace nvgyro::noise
