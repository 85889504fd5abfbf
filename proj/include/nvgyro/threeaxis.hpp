#pragma once

// Arbitrary-axis rotations: the four NV orientation families, the tilted
// second-pulse geometry, the forward signal model and the inverse estimator.

#include <Eigen/Dense>
#include <array>
#include <string>
#include <vector>

#include "nvgyro/sequence.hpp"
#include "nvgyro/spincore.hpp"

namespace nvgyro::three {

enum class FamilyId { F1 = 0, F2 = 1, F3 = 2, F4 = 3 };

std::string family_name(FamilyId id);
/// Parses "F1".."F4"; throws PreconditionError otherwise.
FamilyId parse_family(const std::string& name);

struct NVFamily {
  FamilyId id;
  Eigen::Vector3d axis;  // unit <111> direction, lab frame
  Eigen::Vector3d x;     // transverse frame, x along the rf coil projection
  Eigen::Vector3d y;     // axis x x
};

const NVFamily& family(FamilyId id);
const std::array<NVFamily, 4>& all_families();

struct RotationSpec {
  Eigen::Vector3d omega_lab = Eigen::Vector3d::Zero();  // rad/s

  double magnitude() const { return omega_lab.norm(); }
  void validate() const;
};

/// Rotation axis of `rot` expressed in a family frame.
struct FamilyAxisAngles {
  double theta = 0.0;
  double phi = 0.0;
  double magnitude = 0.0;  // rad/s
};
FamilyAxisAngles axis_angles(const NVFamily& f, const RotationSpec& rot);

struct TiltedPulseGeometry {
  double psi = 0.0;     // in-plane axis angle of the second pulse
  double alpha = 0.0;   // effective flip angle, two-level convention (nominal pi)
  double theta = 0.0;
  double phi = 0.0;
  double omega_t = 0.0;
  double transverse_fraction = 1.0;  // |e_perp| of the rotated rf direction
};

/// Rotates the rf direction x by omega_t about the axis (theta, phi) and
/// splits the result into an in-plane angle and a transverse drive fraction.
TiltedPulseGeometry tilted_geometry_bruteforce(double theta, double phi, double omega_t);

/// Closed-form ratio e_y / e_x of the rotated rf direction.
double appendix_tan_psi(double theta, double phi, double omega_t);
/// Closed-form squared transverse fraction |e_perp|^2 (equals 1 at theta = 0).
double appendix_alpha_expression(double theta, double phi, double omega_t);

/// Post-Ramsey state for a second pulse with in-plane angle psi and
/// two-level flip alpha; the |0> population is sin^2(alpha/2) cos^2(psi).
spin::SpinState tilted_closed_form(double psi, double alpha);

/// Ramsey on one family with an arbitrary rotation vector.
seq::RamseyResult run_ramsey_tilted(const NVFamily& f, const RotationSpec& rot, double tau_s,
                                    const spin::PhysicalConstants& c,
                                    const seq::NoiseModel& noise = {});

/// Noiseless |0> population of run_ramsey_tilted in closed form.
double tilted_signal(const NVFamily& f, const Eigen::Vector3d& omega_lab, double tau_s,
                     const spin::PhysicalConstants& c);

struct SignalMatrix {
  std::vector<FamilyId> families;
  std::vector<double> taus;   // s
  Eigen::MatrixXd signal;     // families x taus
  Eigen::MatrixXd stderr_;    // zero when noiseless
};

SignalMatrix forward_model(const RotationSpec& rot, const std::vector<double>& taus,
                           const std::vector<FamilyId>& families,
                           const spin::PhysicalConstants& c, const seq::NoiseModel& noise = {});

enum class FitStatus { Converged, NullRotation, NotConverged };
std::string status_name(FitStatus s);

struct EstimatorOptions {
  std::size_t direction_grid = 96;  // Fibonacci-sphere start directions
  std::size_t magnitude_grid = 12;  // start magnitudes in (0, pi / tau_max)
  std::size_t refine_starts = 12;   // best grid points refined by Gauss-Newton
  std::size_t max_iterations = 200;
  double step_tolerance = 1e-13;    // relative
  double null_tolerance = 1e-12;    // all |1 - signal| below this => null rotation
  unsigned threads = 1;
};

struct FitReport {
  RotationSpec rotation;
  double residual_norm = 0.0;
  std::size_t iterations = 0;
  double jacobian_condition = 0.0;
  FitStatus status = FitStatus::NotConverged;
  bool aliasing_warning = false;
  Eigen::MatrixXd jacobian;  // d signal / d omega, rows in families-major order
};

/// Least-squares inversion of a signal matrix. Throws IdentifiabilityError
/// for fewer than three distinct families.
FitReport estimate_rotation(const SignalMatrix& measured, const spin::PhysicalConstants& c,
                            const EstimatorOptions& options = {});

/// Jacobian d signal / d omega_lab by central differences.
Eigen::MatrixXd signal_jacobian(const Eigen::Vector3d& omega_lab,
                                const std::vector<FamilyId>& families,
                                const std::vector<double>& taus,
                                const spin::PhysicalConstants& c);

/// Sandwich covariance (J^T J)^-1 J^T diag(variances) J (J^T J)^-1.
Eigen::Matrix3d linearized_covariance(const Eigen::MatrixXd& jacobian,
                                      const Eigen::VectorXd& variances);

}  // namespace nvgyro::three
