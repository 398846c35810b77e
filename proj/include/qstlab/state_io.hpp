#pragma once

#include <nlohmann/json.hpp>

#include "qstlab/quantum_core.hpp"

namespace qstlab {

// { "n_qubits": int, "kind": "pure"|"mixed", "re": [...], "im": [...] }, matrices row-major.
inline nlohmann::json state_to_json(const State& state) {
  nlohmann::json j;
  j["n_qubits"] = n_qubits_of(state);
  std::vector<double> re;
  std::vector<double> im;
  if (const auto* psi = std::get_if<PureState>(&state)) {
    j["kind"] = "pure";
    for (Eigen::Index i = 0; i < psi->amplitudes().size(); ++i) {
      re.push_back(psi->amplitudes()(i).real());
      im.push_back(psi->amplitudes()(i).imag());
    }
  } else {
    j["kind"] = "mixed";
    const CMatrix& m = std::get<DensityMatrix>(state).entries();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) {
        re.push_back(m(r, c).real());
        im.push_back(m(r, c).imag());
      }
    }
  }
  j["re"] = re;
  j["im"] = im;
  return j;
}

inline State state_from_json(const nlohmann::json& j) {
  try {
    const int n = j.at("n_qubits").get<int>();
    check_qubit_count(n);
    const auto kind = j.at("kind").get<std::string>();
    const auto re = j.at("re").get<std::vector<double>>();
    const auto im = j.at("im").get<std::vector<double>>();
    const std::size_t d = dimension_for(n);
    if (kind == "pure") {
      if (re.size() != d || im.size() != d) throw ParseError("pure state needs 2^n re/im entries");
      CVector v(static_cast<Eigen::Index>(d));
      for (std::size_t i = 0; i < d; ++i) v(static_cast<Eigen::Index>(i)) = Complex(re[i], im[i]);
      return PureState(n, std::move(v));
    }
    if (kind == "mixed") {
      if (re.size() != d * d || im.size() != d * d) {
        throw ParseError("mixed state needs 4^n re/im entries");
      }
      const auto di = static_cast<Eigen::Index>(d);
      CMatrix m(di, di);
      for (std::size_t k = 0; k < d * d; ++k) {
        m(static_cast<Eigen::Index>(k / d), static_cast<Eigen::Index>(k % d)) = Complex(re[k], im[k]);
      }
      return DensityMatrix(std::move(m));
    }
    throw ParseError("state kind must be \"pure\" or \"mixed\", got \"" + kind + "\"");
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed state document: ") + e.what());
  }
}

}  // namespace qstlab
