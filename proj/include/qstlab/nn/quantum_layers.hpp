#pragma once

#include <bit>
#include <vector>

#include "qstlab/measurement.hpp"
#include "qstlab/nn/ops.hpp"
#include "qstlab/quantum_core.hpp"

namespace qstlab::nn {

inline constexpr double kDegenerateTrace = 1e-30;

namespace detail {

// (d, d, 2) real tensor <-> complex d x d matrix; channel 0 real, channel 1 imaginary.
inline CMatrix to_complex(const std::vector<double>& v, std::size_t d) {
  CMatrix m(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
  for (std::size_t r = 0; r < d; ++r)
    for (std::size_t c = 0; c < d; ++c) {
      const std::size_t j = (r * d + c) * 2;
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = Complex(v[j], v[j + 1]);
    }
  return m;
}

inline std::vector<double> from_complex(const CMatrix& m) {
  const auto d = static_cast<std::size_t>(m.rows());
  std::vector<double> v(d * d * 2);
  for (std::size_t r = 0; r < d; ++r)
    for (std::size_t c = 0; c < d; ++c) {
      const Complex z = m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
      v[(r * d + c) * 2] = z.real();
      v[(r * d + c) * 2 + 1] = z.imag();
    }
  return v;
}

inline void accumulate_complex(std::vector<double>& g, const CMatrix& m) {
  const auto d = static_cast<std::size_t>(m.rows());
  for (std::size_t r = 0; r < d; ++r)
    for (std::size_t c = 0; c < d; ++c) {
      const Complex z = m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
      g[(r * d + c) * 2] += z.real();
      g[(r * d + c) * 2 + 1] += z.imag();
    }
}

inline std::size_t square_side(const Tensor& t, const char* op) {
  const auto& s = t.shape();
  if (s.size() != 3 || s[0] != s[1] || s[2] != 2 || !std::has_single_bit(s[0])) {
    throw ShapeError(std::string(op) + ": expected (2^N, 2^N, 2) input, got " + shape_str(s));
  }
  return s[0];
}

}  // namespace detail

/// rho = T T^dagger / Tr(T T^dagger) for the complex matrix T held in `raw`.
inline Tensor density_matrix_layer(const Tensor& raw) {
  const std::size_t d = detail::square_side(raw, "density_matrix_layer");
  const CMatrix t = detail::to_complex({raw.values().begin(), raw.values().end()}, d);
  const CMatrix s = t * t.adjoint();
  const double tr = s.trace().real();
  if (!(tr >= kDegenerateTrace)) {
    throw DegenerateParameterError("density_matrix_layer: Tr(T T^dagger) = " + std::to_string(tr) +
                                   " is below 1e-30");
  }
  return Tensor::make_result(raw.shape(), detail::from_complex(s / tr), {raw}, "density_matrix",
                             [t, s, tr, d](detail::Node& self) {
                               auto* g = detail::grad_of(self, 0);
                               if (!g) return;
                               const CMatrix gm = detail::to_complex(self.grad, d);
                               const double c = (gm.conjugate().cwiseProduct(s)).sum().real();
                               const CMatrix gt = (gm + gm.adjoint()) * t / tr - (2.0 * c / (tr * tr)) * t;
                               detail::accumulate_complex(*g, gt);
                             });
}

/// Precompiled measurement map from a density tensor to predicted statistics.
class StatisticsPlan {
 public:
  StatisticsPlan(Method method, const BasisSet& bases) : method_(method), n_(bases.n_qubits()) {
    if (bases.empty()) throw ArgumentError("statistics layer: empty basis set");
    const std::size_t d = dimension_for(n_);
    for (const auto& s : bases.strings()) {
      if (method == Method::M1) {
        M1Term term;
        int ny = 0;
        for (int k = 0; k < n_; ++k) {
          const std::size_t bit = std::size_t{1} << (n_ - 1 - k);
          const Pauli p = s[k];
          if (p == Pauli::X || p == Pauli::Y) term.xmask |= bit;
          if (p == Pauli::Z || p == Pauli::Y) term.zmask |= bit;
          if (p == Pauli::Y) ++ny;
        }
        static const Complex kIPow[4] = {{1, 0}, {0, 1}, {-1, 0}, {0, -1}};
        term.base = kIPow[ny % 4];
        m1_.push_back(term);
      } else {
        CMatrix v = CMatrix::Identity(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
        std::vector<qstlab::detail::Mat2> factors;
        for (Pauli p : s.letters()) factors.push_back(qstlab::detail::eigenbasis(p));
        qstlab::detail::apply_string(v, factors);
        m2_.push_back(std::move(v));
      }
    }
  }

  Method method() const { return method_; }
  int n_qubits() const { return n_; }
  std::size_t output_size() const {
    return method_ == Method::M1 ? m1_.size() : m2_.size() * dimension_for(n_);
  }

  Tensor apply(const Tensor& rho) const {
    const std::size_t d = detail::square_side(rho, "statistics_layer");
    if (d != dimension_for(n_)) {
      throw ShapeError("statistics_layer: density of shape " + shape_str(rho.shape()) + " does not match " +
                       std::to_string(n_) + "-qubit bases");
    }
    const std::vector<double> raw(rho.values().begin(), rho.values().end());
    std::vector<double> out;
    out.reserve(output_size());
    if (method_ == Method::M1) {
      for (const auto& term : m1_) {
        double acc = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
          const std::size_t j = (i * d + (i ^ term.xmask)) * 2;
          const Complex ph = term.phase(i);
          acc += raw[j] * ph.real() - raw[j + 1] * ph.imag();
        }
        out.push_back(acc);
      }
    } else {
      const CMatrix r = detail::to_complex(raw, d);
      for (const auto& v : m2_) {
        const CMatrix q = v.adjoint() * r * v;
        for (std::size_t a = 0; a < d; ++a) out.push_back(q(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(a)).real());
      }
    }
    const std::size_t width = out.size();
    return Tensor::make_result({width}, std::move(out), {rho}, "statistics", [this, d](detail::Node& self) {
      auto* g = detail::grad_of(self, 0);
      if (!g) return;
      if (method_ == Method::M1) {
        for (std::size_t s = 0; s < m1_.size(); ++s) {
          const double gs = self.grad[s];
          for (std::size_t i = 0; i < d; ++i) {
            const std::size_t j = (i * d + (i ^ m1_[s].xmask)) * 2;
            const Complex ph = m1_[s].phase(i);
            (*g)[j] += gs * ph.real();
            (*g)[j + 1] -= gs * ph.imag();
          }
        }
      } else {
        for (std::size_t b = 0; b < m2_.size(); ++b) {
          Eigen::VectorXd w(static_cast<Eigen::Index>(d));
          for (std::size_t a = 0; a < d; ++a) w(static_cast<Eigen::Index>(a)) = self.grad[b * d + a];
          const CMatrix gm = m2_[b] * w.asDiagonal() * m2_[b].adjoint();
          detail::accumulate_complex(*g, gm);
        }
      }
    });
  }

 private:
  struct M1Term {
    std::size_t xmask = 0, zmask = 0;
    Complex base{1, 0};
    Complex phase(std::size_t i) const { return (std::popcount(i & zmask) & 1) ? -base : base; }
  };

  Method method_;
  int n_;
  std::vector<M1Term> m1_;
  std::vector<CMatrix> m2_;
};

// The plan must outlive any graph built from it.
inline Tensor statistics_layer(const Tensor& rho, const StatisticsPlan& plan) { return plan.apply(rho); }

/// Detached copy of a density tensor as a DensityMatrix.
inline DensityMatrix to_density_matrix(const Tensor& rho) {
  const std::size_t d = detail::square_side(rho, "to_density_matrix");
  return DensityMatrix(detail::to_complex({rho.values().begin(), rho.values().end()}, d));
}

}  // namespace qstlab::nn
