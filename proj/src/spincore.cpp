#include "nvgyro/spincore.hpp"

#include <cmath>
#include <stdexcept>

#include "nvgyro/errors.hpp"

namespace nvgyro::spin {

namespace {

constexpr int kSpinOne[3] = {+1, 0, -1};

std::string signed_label(int m) {
  if (m > 0) return "+" + std::to_string(m);
  return std::to_string(m);
}

void require_same_basis(const LevelBasis& a, const LevelBasis& b, const char* what) {
  if (!(a == b)) throw std::logic_error(std::string(what) + ": basis mismatch");
}

Eigen::Matrix3cd spin1_sz() {
  Eigen::Matrix3cd m = Eigen::Matrix3cd::Zero();
  m(0, 0) = 1.0;
  m(2, 2) = -1.0;
  return m;
}

// S+ in (+1, 0, -1) order.
Eigen::Matrix3cd spin1_raise() {
  Eigen::Matrix3cd m = Eigen::Matrix3cd::Zero();
  m(0, 1) = std::sqrt(2.0);
  m(1, 2) = std::sqrt(2.0);
  return m;
}

Eigen::Matrix3cd spin1_sx() {
  const Eigen::Matrix3cd p = spin1_raise();
  return 0.5 * (p + p.adjoint());
}

Eigen::Matrix3cd spin1_sy() {
  const Eigen::Matrix3cd p = spin1_raise();
  return (p - p.adjoint()) / cplx(0.0, 2.0);
}

}  // namespace

// ---------------------------------------------------------------------------
// LevelBasis
// ---------------------------------------------------------------------------

LevelBasis::LevelBasis(BasisKind kind) : kind_(kind) {
  if (kind == BasisKind::Nuclear) {
    for (int mi : kSpinOne) {
      labels_.push_back("mI=" + signed_label(mi));
      m_electron_.push_back(0);
      m_nuclear_.push_back(mi);
    }
  } else {
    for (int ms : kSpinOne) {
      for (int mi : kSpinOne) {
        labels_.push_back("mS=" + signed_label(ms) + ",mI=" + signed_label(mi));
        m_electron_.push_back(ms);
        m_nuclear_.push_back(mi);
      }
    }
  }
}

const LevelBasis& LevelBasis::nuclear() {
  static const LevelBasis basis(BasisKind::Nuclear);
  return basis;
}

const LevelBasis& LevelBasis::joint() {
  static const LevelBasis basis(BasisKind::Joint);
  return basis;
}

std::size_t LevelBasis::index_of(int m_s, int m_i) const {
  if (m_i < -1 || m_i > 1 || m_s < -1 || m_s > 1) {
    throw std::out_of_range("LevelBasis::index_of: quantum number outside spin-1");
  }
  const auto ni = static_cast<std::size_t>(1 - m_i);
  if (kind_ == BasisKind::Nuclear) return ni;
  return 3 * static_cast<std::size_t>(1 - m_s) + ni;
}

// ---------------------------------------------------------------------------
// SpinState
// ---------------------------------------------------------------------------

SpinState::SpinState(const LevelBasis& basis, Eigen::VectorXcd amplitudes)
    : basis_(&basis), amplitudes_(std::move(amplitudes)) {
  if (static_cast<std::size_t>(amplitudes_.size()) != basis.dim()) {
    throw PreconditionError("SpinState: amplitude vector does not match basis dimension");
  }
  if (std::abs(amplitudes_.norm() - 1.0) > 1e-10) {
    throw PreconditionError("SpinState: amplitudes are not unit norm");
  }
}

SpinState SpinState::basis_state(const LevelBasis& basis, std::size_t index) {
  if (index >= basis.dim()) throw std::out_of_range("SpinState::basis_state");
  Eigen::VectorXcd v = Eigen::VectorXcd::Zero(static_cast<Eigen::Index>(basis.dim()));
  v(static_cast<Eigen::Index>(index)) = 1.0;
  return SpinState(basis, std::move(v));
}

SpinState SpinState::normalized(const LevelBasis& basis, Eigen::VectorXcd amplitudes) {
  const double n = amplitudes.norm();
  if (!(n > 0.0) || !std::isfinite(n)) {
    throw PreconditionError("SpinState::normalized: zero or non-finite vector");
  }
  return SpinState(basis, amplitudes / n);
}

Eigen::VectorXd SpinState::populations() const { return amplitudes_.cwiseAbs2(); }

// ---------------------------------------------------------------------------
// OperatorMatrix
// ---------------------------------------------------------------------------

OperatorMatrix::OperatorMatrix(const LevelBasis& basis, Eigen::MatrixXcd entries)
    : basis_(&basis), entries_(std::move(entries)) {
  const auto d = static_cast<Eigen::Index>(basis.dim());
  if (entries_.rows() != d || entries_.cols() != d) {
    throw PreconditionError("OperatorMatrix: matrix does not match basis dimension");
  }
}

OperatorMatrix OperatorMatrix::identity(const LevelBasis& basis) {
  const auto d = static_cast<Eigen::Index>(basis.dim());
  return OperatorMatrix(basis, Eigen::MatrixXcd::Identity(d, d));
}

OperatorMatrix OperatorMatrix::adjoint() const {
  return OperatorMatrix(*basis_, entries_.adjoint());
}

bool OperatorMatrix::is_hermitian(double tol) const {
  return (entries_ - entries_.adjoint()).cwiseAbs().maxCoeff() <= tol;
}

double OperatorMatrix::unitarity_error() const {
  const auto d = entries_.rows();
  return (entries_.adjoint() * entries_ - Eigen::MatrixXcd::Identity(d, d))
      .cwiseAbs()
      .maxCoeff();
}

OperatorMatrix OperatorMatrix::operator+(const OperatorMatrix& rhs) const {
  require_same_basis(*basis_, rhs.basis(), "OperatorMatrix::operator+");
  return OperatorMatrix(*basis_, entries_ + rhs.entries_);
}

OperatorMatrix OperatorMatrix::operator-(const OperatorMatrix& rhs) const {
  require_same_basis(*basis_, rhs.basis(), "OperatorMatrix::operator-");
  return OperatorMatrix(*basis_, entries_ - rhs.entries_);
}

OperatorMatrix OperatorMatrix::operator*(double scale) const {
  return OperatorMatrix(*basis_, entries_ * scale);
}

OperatorMatrix compose(const OperatorMatrix& a, const OperatorMatrix& b) {
  require_same_basis(a.basis(), b.basis(), "compose");
  return OperatorMatrix(a.basis(), a.entries() * b.entries());
}

SpinState apply(const OperatorMatrix& op, const SpinState& state) {
  require_same_basis(op.basis(), state.basis(), "apply");
  return SpinState(state.basis(), op.entries() * state.amplitudes());
}

double expectation(const OperatorMatrix& op, const SpinState& state) {
  require_same_basis(op.basis(), state.basis(), "expectation");
  return state.amplitudes().dot(op.entries() * state.amplitudes()).real();
}

// ---------------------------------------------------------------------------
// Constants and operators
// ---------------------------------------------------------------------------

void PhysicalConstants::validate() const {
  const double values[] = {quadrupole_hz,           gamma_n_hz_per_gauss, gamma_e_hz_per_gauss,
                           zero_field_splitting_hz, hyperfine_hz,         bias_gauss};
  for (double v : values) {
    if (!std::isfinite(v)) throw PreconditionError("PhysicalConstants: non-finite value");
  }
}

OperatorMatrix nuclear_sz() { return OperatorMatrix(LevelBasis::nuclear(), spin1_sz()); }
OperatorMatrix nuclear_sx() { return OperatorMatrix(LevelBasis::nuclear(), spin1_sx()); }
OperatorMatrix nuclear_sy() { return OperatorMatrix(LevelBasis::nuclear(), spin1_sy()); }

OperatorMatrix embed_nuclear(const OperatorMatrix& nuclear_op) {
  require_same_basis(nuclear_op.basis(), LevelBasis::nuclear(), "embed_nuclear");
  Eigen::MatrixXcd m = Eigen::MatrixXcd::Zero(9, 9);
  for (int e = 0; e < 3; ++e) m.block(3 * e, 3 * e, 3, 3) = nuclear_op.entries();
  return OperatorMatrix(LevelBasis::joint(), std::move(m));
}

OperatorMatrix embed_electron(const Eigen::Matrix3cd& electron_op) {
  Eigen::MatrixXcd m = Eigen::MatrixXcd::Zero(9, 9);
  for (int e = 0; e < 3; ++e) {
    for (int f = 0; f < 3; ++f) {
      m.block(3 * e, 3 * f, 3, 3) = electron_op(e, f) * Eigen::Matrix3cd::Identity();
    }
  }
  return OperatorMatrix(LevelBasis::joint(), std::move(m));
}

OperatorMatrix joint_electron_sz() { return embed_electron(spin1_sz()); }
OperatorMatrix joint_electron_sx() { return embed_electron(spin1_sx()); }
OperatorMatrix joint_nuclear_sz() { return embed_nuclear(nuclear_sz()); }

OperatorMatrix build_nuclear_hamiltonian(const PhysicalConstants& c) {
  c.validate();
  const LevelBasis& basis = LevelBasis::nuclear();
  Eigen::MatrixXcd h = Eigen::MatrixXcd::Zero(3, 3);
  for (std::size_t i = 0; i < 3; ++i) {
    const double m = basis.nuclear_m()[i];
    h(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)) =
        c.quadrupole_hz * m * m + c.gamma_n_hz_per_gauss * c.bias_gauss * m;
  }
  return OperatorMatrix(basis, std::move(h));
}

OperatorMatrix build_joint_hamiltonian(const PhysicalConstants& c) {
  c.validate();
  const LevelBasis& basis = LevelBasis::joint();
  Eigen::MatrixXcd h = Eigen::MatrixXcd::Zero(9, 9);
  for (std::size_t i = 0; i < basis.dim(); ++i) {
    const double ms = basis.electron_m()[i];
    const double mi = basis.nuclear_m()[i];
    h(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)) =
        c.zero_field_splitting_hz * ms * ms + c.gamma_e_hz_per_gauss * c.bias_gauss * ms +
        c.hyperfine_hz * ms * mi + c.quadrupole_hz * mi * mi +
        c.gamma_n_hz_per_gauss * c.bias_gauss * mi;
  }
  return OperatorMatrix(basis, std::move(h));
}

OperatorMatrix rotating_frame_hamiltonian(const PhysicalConstants& c, double rf_frequency_hz,
                                          double detuning_hz) {
  c.validate();
  // Built entrywise so that an on-resonance carrier cancels Q exactly.
  const LevelBasis& basis = LevelBasis::nuclear();
  const double quad = c.quadrupole_hz - rf_frequency_hz;
  const double lin = c.gamma_n_hz_per_gauss * c.bias_gauss + detuning_hz;
  Eigen::MatrixXcd h = Eigen::MatrixXcd::Zero(3, 3);
  for (std::size_t i = 0; i < 3; ++i) {
    const double m = basis.nuclear_m()[i];
    h(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i)) = quad * m * m + lin * m;
  }
  return OperatorMatrix(basis, std::move(h));
}

OperatorMatrix evolution_operator(const OperatorMatrix& hamiltonian, double t) {
  if (!hamiltonian.is_hermitian(1e-9 * std::max(1.0, hamiltonian.entries().cwiseAbs().maxCoeff()))) {
    throw PreconditionError("evolution_operator: Hamiltonian is not Hermitian");
  }
  const Eigen::MatrixXcd& h = hamiltonian.entries();
  // Diagonal Hamiltonians are the common case; skip the eigensolver for them.
  const Eigen::MatrixXcd off = h - Eigen::MatrixXcd(h.diagonal().asDiagonal());
  const double two_pi_t = 2.0 * M_PI * t;
  if (off.cwiseAbs().maxCoeff() == 0.0) {
    Eigen::VectorXcd phases(h.rows());
    for (Eigen::Index i = 0; i < h.rows(); ++i) {
      phases(i) = std::polar(1.0, -two_pi_t * h(i, i).real());
    }
    return OperatorMatrix(hamiltonian.basis(), Eigen::MatrixXcd(phases.asDiagonal()));
  }
  const Eigen::MatrixXcd sym = 0.5 * (h + h.adjoint());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> solver(sym);
  if (solver.info() != Eigen::Success) {
    throw std::runtime_error("evolution_operator: eigendecomposition failed");
  }
  Eigen::VectorXcd phases(h.rows());
  for (Eigen::Index i = 0; i < h.rows(); ++i) {
    phases(i) = std::polar(1.0, -two_pi_t * solver.eigenvalues()(i));
  }
  const Eigen::MatrixXcd& v = solver.eigenvectors();
  return OperatorMatrix(hamiltonian.basis(), v * phases.asDiagonal() * v.adjoint());
}

SpinState propagate(const SpinState& state, const OperatorMatrix& hamiltonian, double t) {
  require_same_basis(state.basis(), hamiltonian.basis(), "propagate");
  if (t == 0.0) return state;
  return apply(evolution_operator(hamiltonian, t), state);
}

OperatorMatrix rf_pulse_generator(double axis_phase, Transition transition,
                                  double carrier_phase) {
  const double k = 1.0 / std::sqrt(2.0);
  Eigen::MatrixXcd g = Eigen::MatrixXcd::Zero(3, 3);
  // Row/column order (+1, 0, -1).
  if (transition != Transition::MinusOnly) {
    g(0, 1) = k * std::polar(1.0, -(carrier_phase + axis_phase));
  }
  if (transition != Transition::PlusOnly) {
    g(2, 1) = k * std::polar(1.0, -(carrier_phase - axis_phase));
  }
  g(1, 0) = std::conj(g(0, 1));
  g(1, 2) = std::conj(g(2, 1));
  return OperatorMatrix(LevelBasis::nuclear(), std::move(g));
}

OperatorMatrix rf_pulse_unitary(double axis_phase, double flip_angle, Transition transition,
                                double carrier_phase) {
  // exp(-i flip G) = exp(-i 2 pi H t) with H = G and t = flip / (2 pi).
  return evolution_operator(rf_pulse_generator(axis_phase, transition, carrier_phase),
                            flip_angle / (2.0 * M_PI));
}

}  // namespace nvgyro::spin
