#pragma once

// Exact quantum mechanics of the 14N nuclear spin and the joint NV electron +
// 14N system.
//
// Conventions (used by every module):
//   * Nuclear basis is ordered m_I = (+1, 0, -1).
//   * Joint basis is electron-major: index = 3 * e + n with e, n indexing
//     (+1, 0, -1) for m_S and m_I respectively.
//   * Hamiltonians are expressed in ordinary frequency (Hz); propagation
//     evaluates exp(-i 2 pi H t).
//   * An rf pulse with axis phase phi and flip angle beta is
//     exp(-i beta G) with G = Sx cos(phi) + Sy sin(phi) (spin-1 operators).
//     beta = pi/2 moves |0> fully into the +-1 manifold; beta = pi is the
//     "2 pi" pulse of the 0 <-> bright-state two-level system.
//   * Operators compose right to left: compose(A, B) applies B first.

#include <Eigen/Dense>
#include <complex>
#include <string>
#include <vector>

namespace nvgyro::spin {

using cplx = std::complex<double>;

enum class BasisKind { Nuclear, Joint };

class LevelBasis {
 public:
  static const LevelBasis& nuclear();
  static const LevelBasis& joint();

  BasisKind kind() const { return kind_; }
  std::size_t dim() const { return labels_.size(); }
  const std::vector<std::string>& labels() const { return labels_; }

  /// m_I of each level.
  const std::vector<int>& nuclear_m() const { return m_nuclear_; }
  /// m_S of each level (all zero for the nuclear basis).
  const std::vector<int>& electron_m() const { return m_electron_; }

  /// Index of the level with the given quantum numbers; m_s ignored for the
  /// nuclear basis.
  std::size_t index_of(int m_s, int m_i) const;

  bool operator==(const LevelBasis& other) const { return kind_ == other.kind_; }

 private:
  explicit LevelBasis(BasisKind kind);

  BasisKind kind_;
  std::vector<std::string> labels_;
  std::vector<int> m_electron_;
  std::vector<int> m_nuclear_;
};

class SpinState {
 public:
  /// Requires a unit-norm amplitude vector (within 1e-10) of the basis size.
  SpinState(const LevelBasis& basis, Eigen::VectorXcd amplitudes);

  static SpinState basis_state(const LevelBasis& basis, std::size_t index);
  /// Rescales to unit norm. The vector must be nonzero.
  static SpinState normalized(const LevelBasis& basis, Eigen::VectorXcd amplitudes);

  const LevelBasis& basis() const { return *basis_; }
  const Eigen::VectorXcd& amplitudes() const { return amplitudes_; }
  cplx amplitude(std::size_t i) const { return amplitudes_(static_cast<Eigen::Index>(i)); }
  Eigen::VectorXd populations() const;
  double norm() const { return amplitudes_.norm(); }

 private:
  const LevelBasis* basis_;
  Eigen::VectorXcd amplitudes_;
};

class OperatorMatrix {
 public:
  OperatorMatrix(const LevelBasis& basis, Eigen::MatrixXcd entries);

  static OperatorMatrix identity(const LevelBasis& basis);

  const LevelBasis& basis() const { return *basis_; }
  const Eigen::MatrixXcd& entries() const { return entries_; }

  OperatorMatrix adjoint() const;
  bool is_hermitian(double tol = 1e-12) const;
  /// max |U^dagger U - I|.
  double unitarity_error() const;

  OperatorMatrix operator+(const OperatorMatrix& rhs) const;
  OperatorMatrix operator-(const OperatorMatrix& rhs) const;
  OperatorMatrix operator*(double scale) const;

 private:
  const LevelBasis* basis_;
  Eigen::MatrixXcd entries_;
};

/// A * B (B acts first).
OperatorMatrix compose(const OperatorMatrix& a, const OperatorMatrix& b);
SpinState apply(const OperatorMatrix& op, const SpinState& state);
/// <state| op |state>, real part.
double expectation(const OperatorMatrix& op, const SpinState& state);

struct PhysicalConstants {
  double quadrupole_hz = 4.95e6;           // Q
  double gamma_n_hz_per_gauss = 307.7;     // 14N, 3.077 MHz/T
  double gamma_e_hz_per_gauss = 2.8025e6;  // NV electron
  double zero_field_splitting_hz = 2.87e9; // Delta
  double hyperfine_hz = 2.2e6;             // A, longitudinal
  double bias_gauss = 20.0;                // b

  void validate() const;
};

// Spin-1 operators on the nuclear basis.
OperatorMatrix nuclear_sz();
OperatorMatrix nuclear_sx();
OperatorMatrix nuclear_sy();

// Electron and nuclear spin-1 operators embedded in the joint basis.
OperatorMatrix joint_electron_sz();
OperatorMatrix joint_electron_sx();
OperatorMatrix joint_nuclear_sz();

/// Embeds a 3x3 nuclear-space matrix as identity (electron) x op (nuclear).
OperatorMatrix embed_nuclear(const OperatorMatrix& nuclear_op);
/// Embeds a 3x3 electron-space matrix (in (+1,0,-1) order) as op x identity.
OperatorMatrix embed_electron(const Eigen::Matrix3cd& electron_op);

/// diag(Q m^2 + gamma_N b m) over m_I = (+1, 0, -1), in Hz.
OperatorMatrix build_nuclear_hamiltonian(const PhysicalConstants& c);

/// Diagonal Delta mS^2 + gamma_e b mS + A mS mI + Q mI^2 + gamma_N b mI, in Hz.
OperatorMatrix build_joint_hamiltonian(const PhysicalConstants& c);

/// Nuclear Hamiltonian in the frame rotating with an rf carrier at
/// `rf_frequency_hz` (removes rf_frequency * Sz^2), plus an extra static
/// frequency shift `detuning_hz * Sz`.
OperatorMatrix rotating_frame_hamiltonian(const PhysicalConstants& c, double rf_frequency_hz,
                                          double detuning_hz = 0.0);

/// exp(-i 2 pi H t) by Hermitian eigendecomposition.
OperatorMatrix evolution_operator(const OperatorMatrix& hamiltonian, double t);

/// exp(-i 2 pi H t)|state>. Throws std::logic_error on a basis mismatch and
/// PreconditionError if H is not Hermitian.
SpinState propagate(const SpinState& state, const OperatorMatrix& hamiltonian, double t);

enum class Transition { Both, PlusOnly, MinusOnly };

/// Hard rf pulse in the quadrupolar rotating frame.
///
/// `axis_phase` is the in-plane direction of the (linearly polarized) rf
/// field; it enters the 0<->+1 and 0<->-1 couplings with opposite phase, so
/// for Transition::Both the generator is Sx cos(phi) + Sy sin(phi).
/// `carrier_phase` is the temporal phase of the rf oscillation and enters
/// both couplings with the same phase. Single-transition pulses keep the
/// spin-1 matrix element of the driven pair only.
OperatorMatrix rf_pulse_unitary(double axis_phase, double flip_angle,
                                Transition transition = Transition::Both,
                                double carrier_phase = 0.0);

/// Generator G such that rf_pulse_unitary = exp(-i flip G).
OperatorMatrix rf_pulse_generator(double axis_phase, Transition transition,
                                  double carrier_phase = 0.0);

}  // namespace nvgyro::spin
