#pragma once

// Dense state/operator algebra: canonical states, Pauli observables,
// measurement statistics, fidelity and purity.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "qstlab/errors.hpp"
#include "qstlab/seeding.hpp"

namespace qstlab {

using Complex = std::complex<double>;
using CVector = Eigen::VectorXcd;
using CMatrix = Eigen::MatrixXcd;

inline constexpr int kMaxQubits = 12;
inline constexpr double kNormTolerance = 1e-12;
inline constexpr double kDensityTolerance = 1e-10;

inline std::size_t dimension_for(int n_qubits) { return std::size_t{1} << n_qubits; }

inline void check_qubit_count(int n) {
  if (n < 1 || n > kMaxQubits) {
    throw DimensionError("qubit count " + std::to_string(n) + " outside [1, " +
                         std::to_string(kMaxQubits) + "]");
  }
}

// Returns log2(dim) or throws if dim is not a power of two within the cap.
inline int qubits_for_dimension(std::size_t dim) {
  if (dim < 2 || (dim & (dim - 1)) != 0) {
    throw DimensionError("dimension " + std::to_string(dim) + " is not a power of two >= 2");
  }
  int n = 0;
  while ((std::size_t{1} << n) < dim) ++n;
  check_qubit_count(n);
  return n;
}

class PureState {
 public:
  PureState(int n_qubits, CVector amplitudes) : n_qubits_(n_qubits), amps_(std::move(amplitudes)) {
    check_qubit_count(n_qubits_);
    if (static_cast<std::size_t>(amps_.size()) != dimension_for(n_qubits_)) {
      throw DimensionError("amplitude vector has length " + std::to_string(amps_.size()) +
                           ", expected " + std::to_string(dimension_for(n_qubits_)));
    }
    const double norm2 = amps_.squaredNorm();
    if (std::abs(norm2 - 1.0) > kNormTolerance) {
      throw ArgumentError("pure state is not normalized (sum |c|^2 = " + std::to_string(norm2) + ")");
    }
  }

  // Rescales arbitrary non-zero amplitudes to unit norm.
  static PureState normalized(int n_qubits, CVector amplitudes) {
    const double norm = amplitudes.norm();
    if (!(norm > 0.0) || !std::isfinite(norm)) {
      throw ArgumentError("cannot normalize a zero or non-finite amplitude vector");
    }
    amplitudes /= norm;
    return PureState(n_qubits, std::move(amplitudes));
  }

  int n_qubits() const { return n_qubits_; }
  std::size_t dim() const { return static_cast<std::size_t>(amps_.size()); }
  const CVector& amplitudes() const { return amps_; }

 private:
  int n_qubits_;
  CVector amps_;
};

// A density matrix container. Shape is checked on construction; physicality
// is checked by validate_density() and by the operations that require it.
class DensityMatrix {
 public:
  explicit DensityMatrix(CMatrix entries) : entries_(std::move(entries)) {
    if (entries_.rows() != entries_.cols()) {
      throw DimensionError("density matrix must be square");
    }
    n_qubits_ = qubits_for_dimension(static_cast<std::size_t>(entries_.rows()));
  }

  static DensityMatrix from_pure(const PureState& psi) {
    return DensityMatrix(psi.amplitudes() * psi.amplitudes().adjoint());
  }

  static DensityMatrix maximally_mixed(int n_qubits) {
    check_qubit_count(n_qubits);
    const auto d = static_cast<Eigen::Index>(dimension_for(n_qubits));
    return DensityMatrix(CMatrix::Identity(d, d) / static_cast<double>(d));
  }

  int n_qubits() const { return n_qubits_; }
  std::size_t dim() const { return static_cast<std::size_t>(entries_.rows()); }
  const CMatrix& entries() const { return entries_; }

 private:
  CMatrix entries_;
  int n_qubits_ = 0;
};

using State = std::variant<PureState, DensityMatrix>;

inline int n_qubits_of(const State& s) {
  return std::visit([](const auto& v) { return v.n_qubits(); }, s);
}

inline DensityMatrix to_density(const State& s) {
  if (const auto* psi = std::get_if<PureState>(&s)) return DensityMatrix::from_pure(*psi);
  return std::get<DensityMatrix>(s);
}

// ---------------------------------------------------------------------------
// Pauli strings

enum class Pauli : std::uint8_t { I = 0, X = 1, Y = 2, Z = 3 };

inline char pauli_letter(Pauli p) { return "IXYZ"[static_cast<int>(p)]; }

class PauliString {
 public:
  PauliString() = default;
  explicit PauliString(std::vector<Pauli> letters) : letters_(std::move(letters)) {}

  static PauliString parse(std::string_view text) {
    if (text.empty()) throw ParseError("empty Pauli string");
    std::vector<Pauli> out;
    out.reserve(text.size());
    for (std::size_t i = 0; i < text.size(); ++i) {
      switch (text[i]) {
        case 'I': out.push_back(Pauli::I); break;
        case 'X': out.push_back(Pauli::X); break;
        case 'Y': out.push_back(Pauli::Y); break;
        case 'Z': out.push_back(Pauli::Z); break;
        default:
          throw ParseError("invalid Pauli letter '" + std::string(1, text[i]) + "' at position " +
                           std::to_string(i) + " in \"" + std::string(text) + "\"");
      }
    }
    return PauliString(std::move(out));
  }

  static PauliString identity(int n) { return PauliString(std::vector<Pauli>(n, Pauli::I)); }

  int size() const { return static_cast<int>(letters_.size()); }
  Pauli operator[](int k) const { return letters_[static_cast<std::size_t>(k)]; }
  const std::vector<Pauli>& letters() const { return letters_; }

  bool is_identity() const {
    return std::all_of(letters_.begin(), letters_.end(), [](Pauli p) { return p == Pauli::I; });
  }

  std::string str() const {
    std::string s;
    s.reserve(letters_.size());
    for (Pauli p : letters_) s.push_back(pauli_letter(p));
    return s;
  }

  friend auto operator<=>(const PauliString&, const PauliString&) = default;
  friend bool operator==(const PauliString&, const PauliString&) = default;

 private:
  std::vector<Pauli> letters_;
};

namespace detail {

using Mat2 = std::array<Complex, 4>;  // row-major 2x2

inline Mat2 pauli_matrix(Pauli p) {
  const Complex i{0.0, 1.0};
  switch (p) {
    case Pauli::I: return {1.0, 0.0, 0.0, 1.0};
    case Pauli::X: return {0.0, 1.0, 1.0, 0.0};
    case Pauli::Y: return {0.0, -i, i, 0.0};
    case Pauli::Z: return {1.0, 0.0, 0.0, -1.0};
  }
  return {};
}

// Columns are the +1 and -1 eigenvectors of the letter (I uses the Z basis).
inline Mat2 eigenbasis(Pauli p) {
  const double r = 1.0 / std::sqrt(2.0);
  const Complex i{0.0, 1.0};
  switch (p) {
    case Pauli::X: return {r, r, r, -r};
    case Pauli::Y: return {r, r, r * i, -r * i};
    case Pauli::I:
    case Pauli::Z: return {1.0, 0.0, 0.0, 1.0};
  }
  return {};
}

inline Mat2 adjoint(const Mat2& m) {
  return {std::conj(m[0]), std::conj(m[2]), std::conj(m[1]), std::conj(m[3])};
}

inline bool is_identity(const Mat2& m) {
  return m[0] == Complex(1.0) && m[1] == Complex(0.0) && m[2] == Complex(0.0) && m[3] == Complex(1.0);
}

// Applies the single-qubit matrix m to qubit k (k = 0 is the most-significant
// bit) of every column of `cols`, in place.
inline void apply_local(CMatrix& cols, int n_qubits, int k, const Mat2& m) {
  const std::size_t bit = std::size_t{1} << (n_qubits - 1 - k);
  const auto dim = static_cast<std::size_t>(cols.rows());
  for (std::size_t i = 0; i < dim; ++i) {
    if (i & bit) continue;
    const auto r0 = static_cast<Eigen::Index>(i);
    const auto r1 = static_cast<Eigen::Index>(i | bit);
    for (Eigen::Index c = 0; c < cols.cols(); ++c) {
      const Complex a = cols(r0, c);
      const Complex b = cols(r1, c);
      cols(r0, c) = m[0] * a + m[1] * b;
      cols(r1, c) = m[2] * a + m[3] * b;
    }
  }
}

inline void apply_string(CMatrix& cols, const std::vector<Mat2>& factors) {
  const int n = static_cast<int>(factors.size());
  for (int k = 0; k < n; ++k) {
    if (!is_identity(factors[static_cast<std::size_t>(k)])) {
      apply_local(cols, n, k, factors[static_cast<std::size_t>(k)]);
    }
  }
}

inline void check_string_fits(const PauliString& s, int n_qubits) {
  if (s.size() != n_qubits) {
    throw DimensionError("Pauli string \"" + s.str() + "\" has length " + std::to_string(s.size()) +
                         " but the state has " + std::to_string(n_qubits) + " qubits");
  }
}

}  // namespace detail

/// Dense Kronecker product of the single-qubit Pauli matrices, leftmost
/// letter on the most-significant index bit.
inline CMatrix pauli_operator(const PauliString& s) {
  if (s.size() == 0) throw ParseError("empty Pauli string");
  CMatrix out = CMatrix::Ones(1, 1);
  for (Pauli p : s.letters()) {
    const auto m = detail::pauli_matrix(p);
    CMatrix next(out.rows() * 2, out.cols() * 2);
    for (Eigen::Index r = 0; r < out.rows(); ++r) {
      for (Eigen::Index c = 0; c < out.cols(); ++c) {
        for (int a = 0; a < 2; ++a) {
          for (int b = 0; b < 2; ++b) next(2 * r + a, 2 * c + b) = out(r, c) * m[a * 2 + b];
        }
      }
    }
    out = std::move(next);
  }
  return out;
}

/// Eigenvalue (+1/-1) attached to outcome index `a` of string `s`. Bit k of
/// the outcome (MSB first) is 0 for the +1 eigenvector of letter k; I letters
/// never flip the sign.
inline int outcome_sign(const PauliString& s, std::size_t a) {
  const int n = s.size();
  int sign = 1;
  for (int k = 0; k < n; ++k) {
    if (s[k] == Pauli::I) continue;
    if ((a >> (n - 1 - k)) & 1U) sign = -sign;
  }
  return sign;
}

/// <psi|A|psi> or Tr(rho A). The Hermitian result's imaginary residue must be
/// below 1e-10.
inline double expectation(const State& state, const PauliString& s) {
  const int n = n_qubits_of(state);
  detail::check_string_fits(s, n);
  std::vector<detail::Mat2> factors;
  for (Pauli p : s.letters()) factors.push_back(detail::pauli_matrix(p));

  Complex value;
  if (const auto* psi = std::get_if<PureState>(&state)) {
    CMatrix applied = psi->amplitudes();
    detail::apply_string(applied, factors);
    value = psi->amplitudes().dot(applied.col(0));
  } else {
    CMatrix applied = std::get<DensityMatrix>(state).entries();
    detail::apply_string(applied, factors);  // A rho
    value = applied.trace();
  }
  if (std::abs(value.imag()) > 1e-10) {
    throw NumericError("expectation of \"" + s.str() + "\" has imaginary residue " +
                       std::to_string(value.imag()));
  }
  return value.real();
}

/// Probability of each joint eigenvector of `s`; I letters are resolved in the
/// Z basis so the result always has 2^N entries.
inline std::vector<double> outcome_probabilities(const State& state, const PauliString& s) {
  const int n = n_qubits_of(state);
  detail::check_string_fits(s, n);
  std::vector<detail::Mat2> rotations;
  for (Pauli p : s.letters()) rotations.push_back(detail::adjoint(detail::eigenbasis(p)));

  const std::size_t dim = dimension_for(n);
  std::vector<double> probs(dim);
  if (const auto* psi = std::get_if<PureState>(&state)) {
    CMatrix amps = psi->amplitudes();
    detail::apply_string(amps, rotations);
    for (std::size_t a = 0; a < dim; ++a) probs[a] = std::norm(amps(static_cast<Eigen::Index>(a), 0));
  } else {
    // V^dagger rho V = (V^dagger (V^dagger rho)^dagger)^dagger for Hermitian rho.
    CMatrix w = std::get<DensityMatrix>(state).entries();
    detail::apply_string(w, rotations);
    CMatrix w2 = w.adjoint();
    detail::apply_string(w2, rotations);
    for (std::size_t a = 0; a < dim; ++a) {
      probs[a] = w2(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(a)).real();
    }
  }
  return probs;
}

// ---------------------------------------------------------------------------
// Validation, purity, fidelity

struct ValidationReport {
  bool pass = false;
  double hermiticity_residual = 0.0;  // max |rho - rho^dagger|
  double trace_residual = 0.0;        // |Tr rho - 1|
  double min_eigenvalue = 0.0;        // of the Hermitian part
};

inline ValidationReport validate_density(const CMatrix& rho) {
  ValidationReport r;
  if (rho.rows() != rho.cols() || rho.rows() == 0) {
    r.hermiticity_residual = r.trace_residual = std::numeric_limits<double>::infinity();
    r.min_eigenvalue = -std::numeric_limits<double>::infinity();
    return r;
  }
  r.hermiticity_residual = (rho - rho.adjoint()).cwiseAbs().maxCoeff();
  r.trace_residual = std::abs(rho.trace() - Complex(1.0));
  const CMatrix herm = 0.5 * (rho + rho.adjoint());
  Eigen::SelfAdjointEigenSolver<CMatrix> eig(herm, Eigen::EigenvaluesOnly);
  r.min_eigenvalue = eig.eigenvalues().minCoeff();
  r.pass = r.hermiticity_residual <= kDensityTolerance && r.trace_residual <= kDensityTolerance &&
           r.min_eigenvalue >= -kDensityTolerance;
  return r;
}

inline ValidationReport validate_density(const DensityMatrix& rho) {
  return validate_density(rho.entries());
}

inline void require_physical(const DensityMatrix& rho, std::string_view what) {
  const auto r = validate_density(rho);
  if (!r.pass) {
    throw ValidationError(std::string(what) + " is not a valid density matrix (hermiticity " +
                          std::to_string(r.hermiticity_residual) + ", trace " +
                          std::to_string(r.trace_residual) + ", min eigenvalue " +
                          std::to_string(r.min_eigenvalue) + ")");
  }
}

inline double purity(const DensityMatrix& rho) {
  require_physical(rho, "purity input");
  const Complex tr = (rho.entries() * rho.entries()).trace();
  return tr.real();
}

namespace detail {

// Eigenvalues within round-off of zero are treated as exact zeros before the
// square root; anything below -kDensityTolerance is rejected.
inline constexpr double kEigenNoiseFloor = 1e-14;

inline CMatrix psd_sqrt(const CMatrix& herm) {
  Eigen::SelfAdjointEigenSolver<CMatrix> eig(herm);
  Eigen::VectorXd lambda = eig.eigenvalues();
  for (Eigen::Index i = 0; i < lambda.size(); ++i) {
    if (lambda(i) < -kDensityTolerance) {
      throw ValidationError("negative eigenvalue " + std::to_string(lambda(i)) +
                            " in matrix square root");
    }
    lambda(i) = lambda(i) <= kEigenNoiseFloor ? 0.0 : std::sqrt(lambda(i));
  }
  return eig.eigenvectors() * lambda.asDiagonal() * eig.eigenvectors().adjoint();
}

}  // namespace detail

/// |<a|b>|^2 for two pure states, otherwise the Uhlmann fidelity
/// (Tr sqrt(sqrt(rho1) rho2 sqrt(rho1)))^2, evaluated as the squared trace
/// norm of sqrt(rho1) sqrt(rho2).
inline double fidelity(const State& a, const State& b) {
  if (n_qubits_of(a) != n_qubits_of(b)) {
    throw DimensionError("fidelity operands have " + std::to_string(n_qubits_of(a)) + " and " +
                         std::to_string(n_qubits_of(b)) + " qubits");
  }
  const auto* pa = std::get_if<PureState>(&a);
  const auto* pb = std::get_if<PureState>(&b);
  if (pa && pb) {
    return std::min(1.0, std::norm(pa->amplitudes().dot(pb->amplitudes())));
  }
  const DensityMatrix rho1 = to_density(a);
  const DensityMatrix rho2 = to_density(b);
  require_physical(rho1, "first fidelity operand");
  require_physical(rho2, "second fidelity operand");

  const CMatrix s1 = detail::psd_sqrt(0.5 * (rho1.entries() + rho1.entries().adjoint()));
  const CMatrix s2 = detail::psd_sqrt(0.5 * (rho2.entries() + rho2.entries().adjoint()));
  const CMatrix product = s1 * s2;
  Eigen::JacobiSVD<CMatrix> svd(product);
  const double tr = svd.singularValues().sum();
  return std::clamp(tr * tr, 0.0, 1.0);
}

// ---------------------------------------------------------------------------
// State constructors

enum class PureKind { ghz, w, random };
enum class MixedKind { werner, random_mixture };

inline PureState make_pure_state(PureKind kind, int n, std::optional<std::uint64_t> seed = {}) {
  check_qubit_count(n);
  const auto d = static_cast<Eigen::Index>(dimension_for(n));
  CVector amps = CVector::Zero(d);
  switch (kind) {
    case PureKind::ghz: {
      const double r = 1.0 / std::sqrt(2.0);
      amps(0) = r;
      amps(d - 1) = r;
      return PureState(n, std::move(amps));
    }
    case PureKind::w: {
      const double r = 1.0 / std::sqrt(static_cast<double>(n));
      for (int k = 0; k < n; ++k) amps(Eigen::Index{1} << k) = r;
      return PureState::normalized(n, std::move(amps));
    }
    case PureKind::random: {
      if (!seed) throw ArgumentError("random pure state requires a seed");
      std::mt19937_64 rng(*seed);
      std::normal_distribution<double> normal(0.0, 1.0);
      for (Eigen::Index i = 0; i < d; ++i) {
        const double re = normal(rng);
        const double im = normal(rng);
        amps(i) = Complex(re, im);
      }
      return PureState::normalized(n, std::move(amps));
    }
  }
  throw ArgumentError("unknown pure state kind");
}

struct MixedParams {
  double p = 0.5;                 // werner mixing weight
  int rank = 1;                   // random_mixture component count
  std::optional<std::uint64_t> seed;
};

inline DensityMatrix make_werner(int n, double p) {
  check_qubit_count(n);
  if (!(p >= 0.0 && p <= 1.0)) throw ArgumentError("werner weight p must lie in [0, 1]");
  const DensityMatrix ghz = DensityMatrix::from_pure(make_pure_state(PureKind::ghz, n));
  const DensityMatrix mixed = DensityMatrix::maximally_mixed(n);
  return DensityMatrix(p * ghz.entries() + (1.0 - p) * mixed.entries());
}

/// sum_i p_i |psi_i><psi_i| with Gaussian-random psi_i and uniform weights
/// renormalized to one.
inline DensityMatrix make_random_mixture(int n, int rank, std::uint64_t seed) {
  check_qubit_count(n);
  if (rank < 1 || static_cast<std::size_t>(rank) > dimension_for(n)) {
    throw ArgumentError("mixture rank " + std::to_string(rank) + " outside [1, 2^n]");
  }
  std::mt19937_64 rng(derive_seed(seed, "mixture-weights"));
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  std::vector<double> w(static_cast<std::size_t>(rank));
  double total = 0.0;
  for (auto& x : w) {
    // uniform() may return exactly 0; keep every component present.
    do { x = uniform(rng); } while (x <= 0.0);
    total += x;
  }
  const auto d = static_cast<Eigen::Index>(dimension_for(n));
  CMatrix rho = CMatrix::Zero(d, d);
  for (int i = 0; i < rank; ++i) {
    const auto psi = make_pure_state(PureKind::random, n, derive_seed(seed, "mixture-component", i));
    rho += (w[static_cast<std::size_t>(i)] / total) * (psi.amplitudes() * psi.amplitudes().adjoint());
  }
  return DensityMatrix(std::move(rho));
}

inline DensityMatrix make_mixed_state(MixedKind kind, int n, const MixedParams& params) {
  switch (kind) {
    case MixedKind::werner: return make_werner(n, params.p);
    case MixedKind::random_mixture:
      if (!params.seed) throw ArgumentError("random mixture requires a seed");
      return make_random_mixture(n, params.rank, *params.seed);
  }
  throw ArgumentError("unknown mixed state kind");
}

}  // namespace qstlab
