#include "nvgyro/threeaxis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <set>

#include "nvgyro/errors.hpp"
#include "nvgyro/random.hpp"

namespace nvgyro::three {

namespace {

constexpr double kPi = std::numbers::pi;

NVFamily make_family(FamilyId id, Eigen::Vector3d axis, Eigen::Vector3d x) {
  axis.normalize();
  x.normalize();
  return {id, axis, x, axis.cross(x)};
}

std::size_t distinct_families(const std::vector<FamilyId>& fams) {
  return std::set<FamilyId>(fams.begin(), fams.end()).size();
}

double max_tau(const std::vector<double>& taus) {
  return *std::max_element(taus.begin(), taus.end());
}

// Model minus measurement, families-major.
Eigen::VectorXd residuals(const Eigen::Vector3d& w, const SignalMatrix& m,
                          const spin::PhysicalConstants& c) {
  const Eigen::Index nt = static_cast<Eigen::Index>(m.taus.size());
  Eigen::VectorXd r(static_cast<Eigen::Index>(m.families.size()) * nt);
  for (std::size_t f = 0; f < m.families.size(); ++f) {
    const NVFamily& fam = family(m.families[f]);
    for (Eigen::Index t = 0; t < nt; ++t) {
      const Eigen::Index row = static_cast<Eigen::Index>(f);
      r(row * nt + t) = tilted_signal(fam, w, m.taus[static_cast<std::size_t>(t)], c) -
                        m.signal(row, t);
    }
  }
  return r;
}

struct LocalFit {
  Eigen::Vector3d w = Eigen::Vector3d::Zero();
  double cost = std::numeric_limits<double>::infinity();
  std::size_t iterations = 0;
  bool converged = false;
};

// Levenberg-Marquardt on the signal residuals.
LocalFit refine(Eigen::Vector3d w, const SignalMatrix& m, const spin::PhysicalConstants& c,
                const EstimatorOptions& opt, double scale) {
  LocalFit fit;
  Eigen::VectorXd r = residuals(w, m, c);
  double cost = r.squaredNorm();
  double lambda = 1e-3;
  for (std::size_t it = 1; it <= opt.max_iterations; ++it) {
    fit.iterations = it;
    const Eigen::MatrixXd J = signal_jacobian(w, m.families, m.taus, c);
    const Eigen::Matrix3d A = J.transpose() * J;
    const Eigen::Vector3d g = J.transpose() * r;
    if (g.norm() <= 1e-30 || cost == 0.0) {
      fit.converged = true;
      break;
    }
    bool accepted = false;
    Eigen::Vector3d step = Eigen::Vector3d::Zero();
    while (lambda < 1e16) {
      Eigen::Matrix3d damped = A;
      for (int k = 0; k < 3; ++k) damped(k, k) += lambda * std::max(A(k, k), 1e-300);
      step = damped.ldlt().solve(-g);
      const Eigen::Vector3d trial = w + step;
      const Eigen::VectorXd r_trial = residuals(trial, m, c);
      const double c_trial = r_trial.squaredNorm();
      if (c_trial <= cost) {
        w = trial;
        r = r_trial;
        cost = c_trial;
        lambda = std::max(lambda / 3.0, 1e-12);
        accepted = true;
        break;
      }
      lambda *= 4.0;
    }
    if (!accepted || step.norm() <= opt.step_tolerance * std::max(w.norm(), scale)) {
      // Either no downhill step exists at machine precision or the iterate
      // has stopped moving: a local minimum.
      fit.converged = true;
      break;
    }
  }
  fit.w = w;
  fit.cost = cost;
  return fit;
}

std::vector<Eigen::Vector3d> fibonacci_sphere(std::size_t n) {
  std::vector<Eigen::Vector3d> dirs;
  dirs.reserve(n);
  const double golden = kPi * (3.0 - std::sqrt(5.0));
  for (std::size_t i = 0; i < n; ++i) {
    const double z = 1.0 - 2.0 * (static_cast<double>(i) + 0.5) / static_cast<double>(n);
    const double rho = std::sqrt(std::max(0.0, 1.0 - z * z));
    const double a = golden * static_cast<double>(i);
    dirs.emplace_back(rho * std::cos(a), rho * std::sin(a), z);
  }
  return dirs;
}

}  // namespace

std::string family_name(FamilyId id) {
  return "F" + std::to_string(static_cast<int>(id) + 1);
}

FamilyId parse_family(const std::string& name) {
  if (name.size() == 2 && name[0] == 'F' && name[1] >= '1' && name[1] <= '4') {
    return static_cast<FamilyId>(name[1] - '1');
  }
  throw PreconditionError("unknown NV family '" + name + "' (expected F1..F4)");
}

const std::array<NVFamily, 4>& all_families() {
  static const std::array<NVFamily, 4> fams{
      make_family(FamilyId::F1, {1, 1, 1}, {1, -1, 0}),
      make_family(FamilyId::F2, {1, -1, -1}, {1, 1, 0}),
      make_family(FamilyId::F3, {-1, 1, -1}, {1, 1, 0}),
      make_family(FamilyId::F4, {-1, -1, 1}, {1, -1, 0}),
  };
  return fams;
}

const NVFamily& family(FamilyId id) { return all_families()[static_cast<std::size_t>(id)]; }

void RotationSpec::validate() const {
  if (!omega_lab.allFinite()) throw PreconditionError("rotation vector must be finite");
}

FamilyAxisAngles axis_angles(const NVFamily& f, const RotationSpec& rot) {
  rot.validate();
  FamilyAxisAngles out;
  out.magnitude = rot.magnitude();
  if (out.magnitude == 0.0) return out;
  const Eigen::Vector3d n = rot.omega_lab / out.magnitude;
  const double nx = n.dot(f.x), ny = n.dot(f.y), nz = n.dot(f.axis);
  out.theta = std::acos(std::clamp(nz, -1.0, 1.0));
  out.phi = std::atan2(ny, nx);
  if (out.phi < 0.0) out.phi += 2.0 * kPi;
  return out;
}

TiltedPulseGeometry tilted_geometry_bruteforce(double theta, double phi, double omega_t) {
  const Eigen::Vector3d n(std::sin(theta) * std::cos(phi), std::sin(theta) * std::sin(phi),
                          std::cos(theta));
  const Eigen::Vector3d e = Eigen::AngleAxisd(omega_t, n) * Eigen::Vector3d::UnitX();
  TiltedPulseGeometry g;
  g.theta = theta;
  g.phi = phi;
  g.omega_t = omega_t;
  g.transverse_fraction = std::min(1.0, std::hypot(e.x(), e.y()));
  g.psi = std::atan2(e.y(), e.x());
  g.alpha = kPi * g.transverse_fraction;
  return g;
}

double appendix_tan_psi(double theta, double phi, double omega_t) {
  const double s2 = std::pow(std::sin(omega_t / 2.0), 2);
  const double num = 4.0 * (std::pow(std::sin(theta), 2) * std::sin(2.0 * phi) * s2 +
                            std::cos(theta) * std::sin(omega_t));
  const double den = 2.0 * s2 * (std::cos(2.0 * phi) - 2.0 * std::cos(2.0 * theta) *
                                                           std::pow(std::cos(phi), 2)) +
                     3.0 * std::cos(omega_t) + 1.0;
  return num / den;
}

double appendix_alpha_expression(double theta, double phi, double omega_t) {
  const double s2 = std::pow(std::sin(omega_t / 2.0), 2);
  const double a = 2.0 * s2 * (std::cos(2.0 * phi) - 2.0 * std::cos(2.0 * theta) *
                                                         std::pow(std::cos(phi), 2)) +
                   3.0 * std::cos(omega_t) + 1.0;
  const double b = std::pow(std::sin(theta), 2) * std::sin(2.0 * phi) * s2 +
                   std::cos(theta) * std::sin(omega_t);
  return a * a / 16.0 + b * b;
}

spin::SpinState tilted_closed_form(double psi, double alpha) {
  const double ch = std::cos(alpha / 2.0), sh = std::sin(alpha / 2.0);
  const double r = 1.0 / std::sqrt(2.0);
  const spin::cplx i(0.0, 1.0);
  Eigen::VectorXcd v(3);
  v(0) = std::polar(1.0, -psi) * (std::sin(psi) - i * ch * std::cos(psi)) * r;
  v(1) = -sh * std::cos(psi);
  v(2) = -std::polar(1.0, psi) * (std::sin(psi) + i * ch * std::cos(psi)) * r;
  return spin::SpinState(spin::LevelBasis::nuclear(), v);
}

seq::RamseyResult run_ramsey_tilted(const NVFamily& f, const RotationSpec& rot, double tau_s,
                                    const spin::PhysicalConstants& c,
                                    const seq::NoiseModel& noise) {
  c.validate();
  if (!(tau_s >= 0.0) || !std::isfinite(tau_s)) {
    throw PreconditionError("tau must be finite and non-negative");
  }
  const auto ang = axis_angles(f, rot);
  // The lab-fixed coil turns by -|Omega| tau as seen from the diamond.
  const auto g = tilted_geometry_bruteforce(ang.theta, ang.phi, -ang.magnitude * tau_s);
  const auto h = seq::free_evolution_hamiltonian(c);
  std::vector<seq::SequenceStep> steps{
      {spin::rf_pulse_unitary(0.0, kPi / 2.0)},
      {spin::evolution_operator(h, tau_s), tau_s},
      {spin::rf_pulse_unitary(g.psi, g.alpha / 2.0)},
  };
  return seq::execute_sequence(steps, noise);
}

double tilted_signal(const NVFamily& f, const Eigen::Vector3d& omega_lab, double tau_s,
                     const spin::PhysicalConstants& c) {
  const double mag = omega_lab.norm();
  double theta = 0.0, phi = 0.0;
  if (mag > 0.0) {
    const Eigen::Vector3d n = omega_lab / mag;
    theta = std::acos(std::clamp(n.dot(f.axis), -1.0, 1.0));
    phi = std::atan2(n.dot(f.y), n.dot(f.x));
  }
  const auto g = tilted_geometry_bruteforce(theta, phi, -mag * tau_s);
  // Free precession at gamma_N b shifts the effective pulse axis.
  const double delta = 2.0 * kPi * c.gamma_n_hz_per_gauss * c.bias_gauss * tau_s;
  const double sh = std::sin(g.alpha / 2.0);
  const double cp = std::cos(g.psi - delta);
  return sh * sh * cp * cp;
}

SignalMatrix forward_model(const RotationSpec& rot, const std::vector<double>& taus,
                           const std::vector<FamilyId>& families,
                           const spin::PhysicalConstants& c, const seq::NoiseModel& noise) {
  if (taus.empty() || families.empty()) {
    throw PreconditionError("forward model needs at least one family and one tau");
  }
  rot.validate();
  c.validate();
  noise.validate();
  for (double t : taus) {
    if (!(t >= 0.0) || !std::isfinite(t)) throw PreconditionError("taus must be non-negative");
  }
  const auto nf = static_cast<Eigen::Index>(families.size());
  const auto nt = static_cast<Eigen::Index>(taus.size());
  SignalMatrix out{families, taus, Eigen::MatrixXd::Ones(nf, nt), Eigen::MatrixXd::Zero(nf, nt)};
  const bool exact_path = noise.stochastic() || noise.nv_t1_s.has_value();
  for (Eigen::Index f = 0; f < nf; ++f) {
    const NVFamily& fam = family(families[static_cast<std::size_t>(f)]);
    for (Eigen::Index t = 0; t < nt; ++t) {
      const double tau = taus[static_cast<std::size_t>(t)];
      if (!exact_path) {
        out.signal(f, t) = tilted_signal(fam, rot.omega_lab, tau, c);
        continue;
      }
      seq::NoiseModel cell = noise;
      if (cell.ou) {
        cell.ou->seed = derive_seed(noise.ou->seed, static_cast<std::uint64_t>(fam.id),
                                    static_cast<std::uint64_t>(t));
      }
      const auto res = run_ramsey_tilted(fam, rot, tau, c, cell);
      out.signal(f, t) = res.signal;
      out.stderr_(f, t) = res.signal_stderr;
    }
  }
  return out;
}

std::string status_name(FitStatus s) {
  switch (s) {
    case FitStatus::Converged:
      return "converged";
    case FitStatus::NullRotation:
      return "null_rotation";
    case FitStatus::NotConverged:
      return "not_converged";
  }
  return "unknown";
}

Eigen::MatrixXd signal_jacobian(const Eigen::Vector3d& omega_lab,
                                const std::vector<FamilyId>& families,
                                const std::vector<double>& taus,
                                const spin::PhysicalConstants& c) {
  const double scale = std::max(omega_lab.norm(), 1.0 / max_tau(taus));
  const double h = 1e-6 * scale;
  const auto nt = static_cast<Eigen::Index>(taus.size());
  Eigen::MatrixXd J(static_cast<Eigen::Index>(families.size()) * nt, 3);
  for (int k = 0; k < 3; ++k) {
    Eigen::Vector3d wp = omega_lab, wm = omega_lab;
    wp(k) += h;
    wm(k) -= h;
    for (std::size_t f = 0; f < families.size(); ++f) {
      const NVFamily& fam = family(families[f]);
      for (Eigen::Index t = 0; t < nt; ++t) {
        const double tau = taus[static_cast<std::size_t>(t)];
        J(static_cast<Eigen::Index>(f) * nt + t, k) =
            (tilted_signal(fam, wp, tau, c) - tilted_signal(fam, wm, tau, c)) / (2.0 * h);
      }
    }
  }
  return J;
}

FitReport estimate_rotation(const SignalMatrix& measured, const spin::PhysicalConstants& c,
                            const EstimatorOptions& options) {
  c.validate();
  if (measured.taus.empty() || measured.families.empty()) {
    throw PreconditionError("signal matrix is empty");
  }
  if (measured.signal.rows() != static_cast<Eigen::Index>(measured.families.size()) ||
      measured.signal.cols() != static_cast<Eigen::Index>(measured.taus.size())) {
    throw PreconditionError("signal matrix shape does not match families x taus");
  }
  if (distinct_families(measured.families) < 3) {
    throw IdentifiabilityError("at least three distinct NV families are required");
  }
  for (double t : measured.taus) {
    if (!(t > 0.0) || !std::isfinite(t)) throw PreconditionError("taus must be positive");
  }
  if (!measured.signal.allFinite()) throw PreconditionError("signals must be finite");

  const double tmax = max_tau(measured.taus);
  const double scale = 1.0 / tmax;
  FitReport report;

  const Eigen::VectorXd r0 = residuals(Eigen::Vector3d::Zero(), measured, c);
  if (r0.cwiseAbs().maxCoeff() < options.null_tolerance) {
    report.status = FitStatus::NullRotation;
    report.residual_norm = r0.norm();
    report.jacobian = signal_jacobian(Eigen::Vector3d::Zero(), measured.families, measured.taus, c);
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(report.jacobian);
    const auto& sv = svd.singularValues();
    report.jacobian_condition = sv(sv.size() - 1) > 0.0 ? sv(0) / sv(sv.size() - 1)
                                                         : std::numeric_limits<double>::infinity();
    return report;
  }

  // Coarse multi-start grid, then refine the best candidates.
  const auto dirs = fibonacci_sphere(std::max<std::size_t>(options.direction_grid, 1));
  const std::size_t nm = std::max<std::size_t>(options.magnitude_grid, 1);
  std::vector<std::pair<double, Eigen::Vector3d>> candidates;
  candidates.reserve(dirs.size() * nm);
  for (const auto& d : dirs) {
    for (std::size_t k = 0; k < nm; ++k) {
      const double mag = (static_cast<double>(k) + 0.5) / static_cast<double>(nm) * kPi / tmax;
      const Eigen::Vector3d w = mag * d;
      candidates.emplace_back(residuals(w, measured, c).squaredNorm(), w);
    }
  }
  const std::size_t keep = std::min(std::max<std::size_t>(options.refine_starts, 1),
                                    candidates.size());
  std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(keep),
                    candidates.end(),
                    [](const auto& a, const auto& b) { return a.first < b.first; });

  std::vector<LocalFit> fits(keep);
  parallel_for(keep, options.threads, [&](std::size_t i) {
    fits[i] = refine(candidates[i].second, measured, c, options, scale);
  });
  std::size_t best = 0;
  for (std::size_t i = 1; i < keep; ++i) {
    if (fits[i].cost < fits[best].cost) best = i;
  }

  const LocalFit& fit = fits[best];
  report.rotation.omega_lab = fit.w;
  report.residual_norm = std::sqrt(fit.cost);
  report.iterations = fit.iterations;
  report.status = fit.converged ? FitStatus::Converged : FitStatus::NotConverged;
  report.aliasing_warning = fit.w.norm() * tmax >= 0.95 * kPi;
  report.jacobian = signal_jacobian(fit.w, measured.families, measured.taus, c);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(report.jacobian);
  const auto& sv = svd.singularValues();
  report.jacobian_condition = sv(sv.size() - 1) > 0.0 ? sv(0) / sv(sv.size() - 1)
                                                       : std::numeric_limits<double>::infinity();
  return report;
}

Eigen::Matrix3d linearized_covariance(const Eigen::MatrixXd& jacobian,
                                      const Eigen::VectorXd& variances) {
  if (jacobian.cols() != 3 || jacobian.rows() != variances.size()) {
    throw PreconditionError("jacobian and variance sizes do not match");
  }
  const Eigen::Matrix3d A = jacobian.transpose() * jacobian;
  const Eigen::Matrix3d Ainv = A.inverse();
  const Eigen::Matrix3d middle = jacobian.transpose() * variances.asDiagonal() * jacobian;
  return Ainv * middle * Ainv;
}

}  // namespace nvgyro::three
