#pragma once

// Pauli measurement-basis enumeration and selection, M1/M2 data acquisition
// (exact or finite-shot) and informational-completeness checks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "qstlab/errors.hpp"
#include "qstlab/quantum_core.hpp"
#include "qstlab/seeding.hpp"

namespace qstlab {

enum class Method { M1, M2 };
enum class Alphabet { full_pauli, xyz_only };
enum class SelectionStrategy { ranked_magnitude, random_subset, greedy_coverage };

inline const char* to_string(Method m) { return m == Method::M1 ? "M1" : "M2"; }

inline Method method_from_string(std::string_view s) {
  if (s == "M1") return Method::M1;
  if (s == "M2") return Method::M2;
  throw ParseError("method must be \"M1\" or \"M2\", got \"" + std::string(s) + "\"");
}

inline const char* to_string(SelectionStrategy s) {
  switch (s) {
    case SelectionStrategy::ranked_magnitude: return "ranked_magnitude";
    case SelectionStrategy::random_subset: return "random_subset";
    case SelectionStrategy::greedy_coverage: return "greedy_coverage";
  }
  return "?";
}

inline SelectionStrategy strategy_from_string(std::string_view s) {
  if (s == "ranked_magnitude") return SelectionStrategy::ranked_magnitude;
  if (s == "random_subset") return SelectionStrategy::random_subset;
  if (s == "greedy_coverage") return SelectionStrategy::greedy_coverage;
  throw ParseError("unknown selection strategy \"" + std::string(s) + "\"");
}

inline const char* to_string(Alphabet a) { return a == Alphabet::full_pauli ? "full_pauli" : "xyz_only"; }

inline Alphabet alphabet_from_string(std::string_view s) {
  if (s == "full_pauli") return Alphabet::full_pauli;
  if (s == "xyz_only") return Alphabet::xyz_only;
  throw ParseError("unknown alphabet \"" + std::string(s) + "\"");
}

struct SelectionMeta {
  std::string strategy = "explicit";
  std::optional<std::uint64_t> seed;
  std::optional<double> epsilon;
  std::string note;

  friend bool operator==(const SelectionMeta&, const SelectionMeta&) = default;
};

class BasisSet {
 public:
  BasisSet() = default;
  BasisSet(int n_qubits, std::vector<PauliString> strings, SelectionMeta meta = {})
      : n_qubits_(n_qubits), strings_(std::move(strings)), meta_(std::move(meta)) {
    std::set<PauliString> seen;
    for (const auto& s : strings_) {
      if (s.size() != n_qubits_) {
        throw DimensionError("basis \"" + s.str() + "\" does not have " + std::to_string(n_qubits_) +
                             " letters");
      }
      if (!seen.insert(s).second) throw ArgumentError("duplicate basis \"" + s.str() + "\"");
    }
  }

  static BasisSet parse(int n_qubits, const std::vector<std::string>& strings, SelectionMeta meta = {}) {
    std::vector<PauliString> parsed;
    for (const auto& s : strings) parsed.push_back(PauliString::parse(s));
    return BasisSet(n_qubits, std::move(parsed), std::move(meta));
  }

  int n_qubits() const { return n_qubits_; }
  std::size_t size() const { return strings_.size(); }
  bool empty() const { return strings_.empty(); }
  const std::vector<PauliString>& strings() const { return strings_; }
  const PauliString& operator[](std::size_t i) const { return strings_[i]; }
  const SelectionMeta& meta() const { return meta_; }
  SelectionMeta& meta() { return meta_; }

  std::vector<std::string> labels() const {
    std::vector<std::string> out;
    for (const auto& s : strings_) out.push_back(s.str());
    return out;
  }

  friend bool operator==(const BasisSet&, const BasisSet&) = default;

 private:
  int n_qubits_ = 0;
  std::vector<PauliString> strings_;
  SelectionMeta meta_;
};

inline constexpr double kDefaultNonzeroEpsilon = 1e-9;

/// All 4^n (full_pauli) or 3^n (xyz_only) strings, lexicographic in I<X<Y<Z.
inline BasisSet enumerate_bases(int n, Alphabet alphabet) {
  if (n < 1) throw DimensionError("qubit count must be positive");
  if (n > 8) throw ResourceError("refusing to enumerate bases for n = " + std::to_string(n) + " > 8");
  const std::vector<Pauli> letters = alphabet == Alphabet::full_pauli
                                         ? std::vector<Pauli>{Pauli::I, Pauli::X, Pauli::Y, Pauli::Z}
                                         : std::vector<Pauli>{Pauli::X, Pauli::Y, Pauli::Z};
  const std::size_t base = letters.size();
  std::size_t total = 1;
  for (int k = 0; k < n; ++k) total *= base;

  std::vector<PauliString> out;
  out.reserve(total);
  std::vector<Pauli> word(static_cast<std::size_t>(n));
  for (std::size_t idx = 0; idx < total; ++idx) {
    std::size_t rest = idx;
    for (int k = n - 1; k >= 0; --k) {
      word[static_cast<std::size_t>(k)] = letters[rest % base];
      rest /= base;
    }
    out.emplace_back(word);
  }
  SelectionMeta meta;
  meta.strategy = std::string("enumerate:") + to_string(alphabet);
  return BasisSet(n, std::move(out), meta);
}

/// Keeps strings whose exact expectation magnitude exceeds epsilon. The
/// identity string is always dropped.
inline BasisSet filter_nonzero_expectation(const State& state, const BasisSet& bases,
                                           double epsilon = kDefaultNonzeroEpsilon) {
  if (!(epsilon > 0.0)) throw ArgumentError("epsilon must be positive");
  std::vector<PauliString> kept;
  for (const auto& s : bases.strings()) {
    if (s.is_identity()) continue;
    if (std::abs(expectation(state, s)) > epsilon) kept.push_back(s);
  }
  SelectionMeta meta = bases.meta();
  meta.epsilon = epsilon;
  meta.note = meta.note.empty() ? "nonzero-expectation filter" : meta.note + "; nonzero-expectation filter";
  return BasisSet(bases.n_qubits(), std::move(kept), meta);
}

namespace detail {

inline std::vector<PauliString> canonical_order(const BasisSet& candidates) {
  std::vector<PauliString> sorted = candidates.strings();
  std::sort(sorted.begin(), sorted.end());
  return sorted;
}

// Random tie-break keys over the canonically sorted pool.
inline std::vector<std::uint64_t> tie_keys(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(derive_seed(seed, "basis-tiebreak"));
  std::vector<std::uint64_t> keys(n);
  for (auto& k : keys) k = rng();
  return keys;
}

// Non-identity strings reachable from s by replacing letters with I: the
// observables whose expectation one M2 distribution in basis s determines.
inline std::vector<PauliString> marginal_strings(const PauliString& s) {
  std::vector<int> active;
  for (int k = 0; k < s.size(); ++k) {
    if (s[k] != Pauli::I) active.push_back(k);
  }
  std::vector<PauliString> out;
  const std::size_t subsets = std::size_t{1} << active.size();
  for (std::size_t mask = 1; mask < subsets; ++mask) {
    std::vector<Pauli> letters(static_cast<std::size_t>(s.size()), Pauli::I);
    for (std::size_t b = 0; b < active.size(); ++b) {
      if (mask & (std::size_t{1} << b)) {
        letters[static_cast<std::size_t>(active[b])] = s[active[b]];
      }
    }
    out.emplace_back(std::move(letters));
  }
  return out;
}

}  // namespace detail

/// Picks k strings from `candidates`.
///  - ranked_magnitude: |<s>| descending, seeded random order among ties.
///  - random_subset: seeded uniform draw without replacement, returned in
///    canonical order; independent of the candidates' input order.
///  - greedy_coverage: repeatedly takes the string whose M2 marginals reveal
///    the most not-yet-covered non-zero expectations (seeded ties).
inline BasisSet select_bases(const BasisSet& candidates, std::size_t k, SelectionStrategy strategy,
                             const State* state, std::uint64_t seed,
                             double epsilon = kDefaultNonzeroEpsilon) {
  if (k > candidates.size()) {
    throw ArgumentError("cannot select " + std::to_string(k) + " bases from " +
                        std::to_string(candidates.size()) + " candidates");
  }
  SelectionMeta meta = candidates.meta();
  meta.strategy = to_string(strategy);
  meta.seed = seed;
  const int n = candidates.n_qubits();
  if (k == 0) return BasisSet(n, {}, meta);

  const auto pool = detail::canonical_order(candidates);
  const auto keys = detail::tie_keys(pool.size(), seed);
  std::vector<PauliString> chosen;

  switch (strategy) {
    case SelectionStrategy::random_subset: {
      std::vector<std::size_t> idx(pool.size());
      std::iota(idx.begin(), idx.end(), 0);
      std::mt19937_64 rng(derive_seed(seed, "basis-subset"));
      for (std::size_t i = 0; i < k; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, idx.size() - 1);
        std::swap(idx[i], idx[pick(rng)]);
      }
      idx.resize(k);
      std::sort(idx.begin(), idx.end());
      for (auto i : idx) chosen.push_back(pool[i]);
      break;
    }
    case SelectionStrategy::ranked_magnitude: {
      if (!state) throw ArgumentError("ranked_magnitude selection requires a state");
      std::vector<std::pair<long long, std::size_t>> ranked;
      for (std::size_t i = 0; i < pool.size(); ++i) {
        // Quantized so round-off does not break exact ties.
        const double mag = std::abs(expectation(*state, pool[i]));
        ranked.emplace_back(std::llround(mag * 1e10), i);
      }
      std::sort(ranked.begin(), ranked.end(), [&](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return keys[a.second] < keys[b.second];
      });
      for (std::size_t i = 0; i < k; ++i) chosen.push_back(pool[ranked[i].second]);
      break;
    }
    case SelectionStrategy::greedy_coverage: {
      if (!state) throw ArgumentError("greedy_coverage selection requires a state");
      std::map<PauliString, bool> informative;
      std::vector<std::vector<PauliString>> reveals(pool.size());
      for (std::size_t i = 0; i < pool.size(); ++i) {
        reveals[i] = detail::marginal_strings(pool[i]);
        for (const auto& m : reveals[i]) {
          if (!informative.contains(m)) informative[m] = std::abs(expectation(*state, m)) > epsilon;
        }
      }
      std::set<PauliString> covered;
      std::vector<bool> used(pool.size(), false);
      for (std::size_t step = 0; step < k; ++step) {
        std::size_t best = pool.size();
        std::size_t best_gain = 0;
        for (std::size_t i = 0; i < pool.size(); ++i) {
          if (used[i]) continue;
          std::size_t gain = 0;
          for (const auto& m : reveals[i]) {
            if (informative[m] && !covered.contains(m)) ++gain;
          }
          if (best == pool.size() || gain > best_gain ||
              (gain == best_gain && keys[i] < keys[best])) {
            best = i;
            best_gain = gain;
          }
        }
        used[best] = true;
        for (const auto& m : reveals[best]) covered.insert(m);
        chosen.push_back(pool[best]);
      }
      break;
    }
  }
  return BasisSet(n, std::move(chosen), meta);
}

// ---------------------------------------------------------------------------
// Data acquisition

class MeasurementDataset {
 public:
  Method method = Method::M1;
  BasisSet bases;
  std::vector<double> values;                       // M1 exact expectations
  std::vector<std::vector<double>> distributions;   // M2 exact probabilities
  std::optional<std::int64_t> shots;
  std::vector<std::vector<std::int64_t>> counts;    // sampled outcome counts per basis

  int n_qubits() const { return bases.n_qubits(); }
  bool sampled() const { return shots.has_value(); }

  // Shot-noise estimate of each M1 expectation (sampled mode only).
  std::vector<double> empirical_values() const {
    std::vector<double> out;
    for (std::size_t b = 0; b < counts.size(); ++b) {
      double acc = 0.0;
      for (std::size_t a = 0; a < counts[b].size(); ++a) {
        acc += outcome_sign(bases[b], a) * static_cast<double>(counts[b][a]);
      }
      out.push_back(acc / static_cast<double>(*shots));
    }
    return out;
  }

  std::vector<std::vector<double>> empirical_distributions() const {
    std::vector<std::vector<double>> out;
    for (const auto& row : counts) {
      std::vector<double> p;
      for (auto c : row) p.push_back(static_cast<double>(c) / static_cast<double>(*shots));
      out.push_back(std::move(p));
    }
    return out;
  }

  /// Flattened statistics a network is trained against: empirical when
  /// sampled, exact otherwise. M2 is basis-major.
  std::vector<double> training_targets() const {
    if (method == Method::M1) return sampled() ? empirical_values() : values;
    const auto rows = sampled() ? empirical_distributions() : distributions;
    std::vector<double> flat;
    for (const auto& r : rows) flat.insert(flat.end(), r.begin(), r.end());
    return flat;
  }

  friend bool operator==(const MeasurementDataset&, const MeasurementDataset&) = default;
};

namespace detail {

// Multinomial draw by sequential conditional binomials.
inline std::vector<std::int64_t> multinomial(const std::vector<double>& probs, std::int64_t shots,
                                             std::mt19937_64& rng) {
  std::vector<std::int64_t> out(probs.size(), 0);
  std::int64_t remaining = shots;
  double mass = 1.0;
  for (std::size_t i = 0; i < probs.size() && remaining > 0; ++i) {
    if (i + 1 == probs.size()) {
      out[i] = remaining;
      break;
    }
    const double p = std::clamp(probs[i] / std::max(mass, 1e-300), 0.0, 1.0);
    std::binomial_distribution<std::int64_t> draw(remaining, p);
    out[i] = draw(rng);
    remaining -= out[i];
    mass -= std::max(probs[i], 0.0);
  }
  return out;
}

}  // namespace detail

/// Exact statistics, plus per-basis multinomial counts when `shots` is given.
/// Each basis i draws from its own stream derive_seed(seed, "acquire", i).
inline MeasurementDataset acquire(Method method, const State& state, const BasisSet& bases,
                                  std::optional<std::int64_t> shots = {},
                                  std::optional<std::uint64_t> seed = {}) {
  if (bases.empty()) throw ArgumentError("empty basis set");
  if (bases.n_qubits() != n_qubits_of(state)) {
    throw DimensionError("basis set is for " + std::to_string(bases.n_qubits()) +
                         " qubits, state has " + std::to_string(n_qubits_of(state)));
  }
  if (shots && *shots <= 0) throw ArgumentError("shots must be positive");
  if (shots && !seed) throw ArgumentError("finite-shot acquisition requires a seed");

  MeasurementDataset ds;
  ds.method = method;
  ds.bases = bases;
  ds.shots = shots;
  for (std::size_t b = 0; b < bases.size(); ++b) {
    std::vector<double> probs;
    if (method == Method::M1) {
      ds.values.push_back(expectation(state, bases[b]));
      if (shots) probs = outcome_probabilities(state, bases[b]);
    } else {
      probs = outcome_probabilities(state, bases[b]);
      ds.distributions.push_back(probs);
    }
    if (shots) {
      std::mt19937_64 rng(derive_seed(*seed, "acquire", b));
      ds.counts.push_back(detail::multinomial(probs, *shots, rng));
    }
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Informational completeness

struct CompletenessReport {
  bool complete = false;
  std::size_t rank = 0;
  std::size_t dimension = 0;  // 4^n
};

/// Rank of the Hilbert-Schmidt Gram matrix of {I} together with the set.
inline CompletenessReport is_informationally_complete(const BasisSet& bases) {
  const int n = bases.n_qubits();
  if (n < 1) throw DimensionError("basis set has no qubit count");
  if (n > 5) throw ResourceError("informational-completeness check limited to n <= 5");
  std::set<PauliString> ops(bases.strings().begin(), bases.strings().end());
  ops.insert(PauliString::identity(n));

  const auto d = static_cast<Eigen::Index>(dimension_for(n));
  CMatrix stacked(d * d, static_cast<Eigen::Index>(ops.size()));
  Eigen::Index col = 0;
  for (const auto& s : ops) {
    const CMatrix op = pauli_operator(s);
    stacked.col(col++) = Eigen::Map<const CVector>(op.data(), d * d);
  }
  const CMatrix gram = stacked.adjoint() * stacked;
  Eigen::SelfAdjointEigenSolver<CMatrix> eig(gram, Eigen::EigenvaluesOnly);
  CompletenessReport r;
  r.dimension = static_cast<std::size_t>(d * d);
  for (Eigen::Index i = 0; i < eig.eigenvalues().size(); ++i) {
    if (eig.eigenvalues()(i) > 1e-8) ++r.rank;
  }
  r.complete = r.rank == r.dimension;
  return r;
}

}  // namespace qstlab
