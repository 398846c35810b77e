#pragma once

// Experiment harness behind the qstlab CLI: strict JSON configs, seeded
// state/measurement/reconstruction pipelines and the four commands.
//
// Seed scheme: one master seed. Sub-seeds are derive_seed(master, tag, index)
// with tags "state", "selection", "acquire", "crossbar" (resolved into the
// config) and "network"/"train" indexed by repeat (derived at run time).

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "qstlab/crossbar.hpp"
#include "qstlab/dataset_io.hpp"
#include "qstlab/errors.hpp"
#include "qstlab/file_util.hpp"
#include "qstlab/measurement.hpp"
#include "qstlab/nn/network.hpp"
#include "qstlab/nn/trace_io.hpp"
#include "qstlab/nn/train.hpp"
#include "qstlab/quantum_core.hpp"
#include "qstlab/seeding.hpp"
#include "qstlab/state_io.hpp"

namespace qstlab::harness {

using nlohmann::json;

inline constexpr int kSchemaVersion = 1;

enum ExitCode : int { kConverged = 0, kError = 1, kNotConverged = 2 };

struct StateConfig {
  std::string kind = "ghz";  // ghz | w | random_pure | werner | random_mixture
  int n = 3;
  double p = 0.5;
  int rank = 2;
  std::optional<std::uint64_t> seed;
};

struct MeasurementConfig {
  Method method = Method::M2;
  std::optional<Alphabet> alphabet;
  std::optional<std::string> pool;  // all | nonzero
  std::optional<SelectionStrategy> selection;
  std::optional<std::size_t> num_bases;  // null: the whole pool
  std::optional<std::vector<std::string>> bases;
  double epsilon = kDefaultNonzeroEpsilon;
  std::optional<std::int64_t> shots;
  std::optional<std::uint64_t> selection_seed;
  std::optional<std::uint64_t> acquire_seed;
};

struct CrossbarSection {
  CrossbarConfig device;
  std::optional<std::string> run_dir;
};

struct SweepSection {
  std::vector<std::size_t> grid{1, 2, 4, 8, 16};
  double target_fidelity = 0.99;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  int repeats = 1;
  std::string output_dir = "qstlab-out";
  StateConfig state;
  MeasurementConfig measurement;
  nn::Architecture architecture = nn::Architecture::FCN;
  nn::NetworkOptions network;
  nn::TrainConfig train;
  CrossbarSection crossbar;
  SweepSection sweep;
  std::vector<std::string> bench_architectures{"FCN", "CNN", "CGAN", "RNN"};
};

// ---------------------------------------------------------------------------
// Strict reader

namespace detail {

class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail(path_.empty() ? "config" : path_, "expected an object");
  }

  [[noreturn]] static void fail(const std::string& field, const std::string& what) {
    throw ValidationError("config field " + field + ": " + what);
  }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const json* find(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  bool present(const std::string& key) {
    const json* v = find(key);
    return v && !v->is_null();
  }

  std::int64_t integer(const std::string& key, std::int64_t fallback) {
    const json* v = find(key);
    if (!v || v->is_null()) return fallback;
    if (!v->is_number_integer()) fail(field(key), "expected an integer");
    return v->get<std::int64_t>();
  }

  std::optional<std::uint64_t> seed(const std::string& key) {
    const json* v = find(key);
    if (!v || v->is_null()) return std::nullopt;
    if (!v->is_number_integer() || (!v->is_number_unsigned() && v->get<std::int64_t>() < 0)) {
      fail(field(key), "expected a non-negative integer");
    }
    return v->get<std::uint64_t>();
  }

  double number(const std::string& key, double fallback) {
    const json* v = find(key);
    if (!v || v->is_null()) return fallback;
    if (!v->is_number()) fail(field(key), "expected a number");
    return v->get<double>();
  }

  std::string string(const std::string& key, const std::string& fallback) {
    const json* v = find(key);
    if (!v || v->is_null()) return fallback;
    if (!v->is_string()) fail(field(key), "expected a string");
    return v->get<std::string>();
  }

  std::optional<std::string> optional_string(const std::string& key) {
    if (!present(key)) return std::nullopt;
    return string(key, "");
  }

  std::optional<std::vector<std::string>> strings(const std::string& key) {
    const json* v = find(key);
    if (!v || v->is_null()) return std::nullopt;
    if (!v->is_array()) fail(field(key), "expected an array of strings");
    std::vector<std::string> out;
    for (const auto& e : *v) {
      if (!e.is_string()) fail(field(key), "expected an array of strings");
      out.push_back(e.get<std::string>());
    }
    return out;
  }

  std::optional<std::vector<std::int64_t>> integers(const std::string& key) {
    const json* v = find(key);
    if (!v || v->is_null()) return std::nullopt;
    if (!v->is_array()) fail(field(key), "expected an array of integers");
    std::vector<std::int64_t> out;
    for (const auto& e : *v) {
      if (!e.is_number_integer()) fail(field(key), "expected an array of integers");
      out.push_back(e.get<std::int64_t>());
    }
    return out;
  }

  // Nested object; an absent or null key reads as {}.
  Reader object(const std::string& key) {
    const json* v = find(key);
    static const json empty = json::object();
    return Reader(v && !v->is_null() ? *v : empty, field(key));
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.contains(it.key())) fail(field(it.key()), "unknown field");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <class F>
auto parse_enum(const std::string& field, const std::string& text, F&& f) {
  try {
    return f(text);
  } catch (const Error& e) {
    Reader::fail(field, e.what());
  }
}

inline int checked_int(const std::string& field, std::int64_t v, std::int64_t lo, std::int64_t hi) {
  if (v < lo || v > hi) {
    Reader::fail(field, "must lie in [" + std::to_string(lo) + ", " + std::to_string(hi) + "], got " +
                            std::to_string(v));
  }
  return static_cast<int>(v);
}

inline std::size_t checked_size(const std::string& field, std::int64_t v, std::int64_t lo) {
  if (v < lo) Reader::fail(field, "must be at least " + std::to_string(lo) + ", got " + std::to_string(v));
  return static_cast<std::size_t>(v);
}

inline std::size_t alphabet_size(int n, Alphabet a) {
  std::size_t total = 1;
  for (int k = 0; k < n; ++k) total *= a == Alphabet::full_pauli ? 4 : 3;
  return a == Alphabet::full_pauli ? total - 1 : total;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Parse, resolve, serialize

/// Parses and validates a config document, then fills every method-dependent
/// default and every sub-seed so that the result serializes to a fixed point.
inline ExperimentConfig parse_config(const json& doc) {
  detail::Reader root(doc, "");
  ExperimentConfig c;
  const json* version = root.find("schema_version");
  if (!version) detail::Reader::fail("schema_version", "missing (expected 1)");
  if (!version->is_number_integer() || version->get<std::int64_t>() != kSchemaVersion) {
    detail::Reader::fail("schema_version", "unsupported value " + version->dump() + " (expected 1)");
  }
  c.seed = root.seed("seed").value_or(0);
  c.repeats = detail::checked_int("repeats", root.integer("repeats", 1), 1, 100000);
  c.output_dir = root.string("output_dir", c.output_dir);
  if (c.output_dir.empty()) detail::Reader::fail("output_dir", "must not be empty");

  {
    auto s = root.object("state");
    c.state.kind = s.string("kind", c.state.kind);
    static const std::set<std::string> kinds{"ghz", "w", "random_pure", "werner", "random_mixture"};
    if (!kinds.contains(c.state.kind)) {
      detail::Reader::fail("state.kind", "unknown kind \"" + c.state.kind +
                                             "\" (expected ghz, w, random_pure, werner or random_mixture)");
    }
    c.state.n = detail::checked_int("state.n", s.integer("n", c.state.n), 1, nn::kMaxNetworkQubits);
    c.state.p = s.number("p", c.state.p);
    if (!(c.state.p >= 0.0 && c.state.p <= 1.0)) detail::Reader::fail("state.p", "must lie in [0, 1]");
    c.state.rank = detail::checked_int("state.rank", s.integer("rank", c.state.rank), 1,
                                       std::int64_t{1} << c.state.n);
    c.state.seed = s.seed("seed").value_or(derive_seed(c.seed, "state"));
    s.finish();
  }

  {
    auto m = root.object("measurement");
    auto& mc = c.measurement;
    mc.method = detail::parse_enum("measurement.method", m.string("method", "M2"),
                                   [](const std::string& t) { return method_from_string(t); });
    const bool m2 = mc.method == Method::M2;
    mc.alphabet = detail::parse_enum("measurement.alphabet", m.string("alphabet", m2 ? "xyz_only" : "full_pauli"),
                                     [](const std::string& t) { return alphabet_from_string(t); });
    mc.pool = m.string("pool", m2 ? "all" : "nonzero");
    if (*mc.pool != "all" && *mc.pool != "nonzero") {
      detail::Reader::fail("measurement.pool", "expected \"all\" or \"nonzero\", got \"" + *mc.pool + "\"");
    }
    mc.selection = detail::parse_enum(
        "measurement.selection", m.string("selection", m2 ? "greedy_coverage" : "ranked_magnitude"),
        [](const std::string& t) { return strategy_from_string(t); });
    if (m.present("num_bases")) {
      const auto k = m.integer("num_bases", 0);
      if (k <= 0) detail::Reader::fail("measurement.num_bases", "empty basis set");
      mc.num_bases = static_cast<std::size_t>(k);
      if (*mc.num_bases > detail::alphabet_size(c.state.n, *mc.alphabet)) {
        detail::Reader::fail("measurement.num_bases",
                             std::to_string(k) + " exceeds the " +
                                 std::to_string(detail::alphabet_size(c.state.n, *mc.alphabet)) + " strings of " +
                                 to_string(*mc.alphabet) + " at n = " + std::to_string(c.state.n));
      }
    }
    mc.bases = m.strings("bases");
    if (mc.bases) {
      if (mc.bases->empty()) detail::Reader::fail("measurement.bases", "empty basis set");
      try {
        BasisSet::parse(c.state.n, *mc.bases);
      } catch (const Error& e) {
        detail::Reader::fail("measurement.bases", e.what());
      }
      if (mc.num_bases && *mc.num_bases != mc.bases->size()) {
        detail::Reader::fail("measurement.num_bases", "does not match the length of measurement.bases");
      }
      mc.num_bases = mc.bases->size();
    }
    mc.epsilon = m.number("epsilon", mc.epsilon);
    if (!(mc.epsilon >= 0.0)) detail::Reader::fail("measurement.epsilon", "must be non-negative");
    if (m.present("shots")) {
      mc.shots = m.integer("shots", 0);
      if (*mc.shots <= 0) detail::Reader::fail("measurement.shots", "must be positive");
    }
    mc.selection_seed = m.seed("selection_seed").value_or(derive_seed(c.seed, "selection"));
    mc.acquire_seed = m.seed("acquire_seed").value_or(derive_seed(c.seed, "acquire"));
    m.finish();
  }

  c.architecture = detail::parse_enum("architecture", root.string("architecture", "FCN"),
                                      [](const std::string& t) { return nn::architecture_from_string(t); });

  {
    auto n = root.object("network");
    auto& o = c.network;
    o.bias = detail::parse_enum("network.bias", n.string("bias", "table"),
                                [](const std::string& t) { return nn::bias_mode_from_string(t); });
    o.leaky_slope = n.number("leaky_slope", o.leaky_slope);
    if (!(o.leaky_slope >= 0.0 && o.leaky_slope < 1.0)) detail::Reader::fail("network.leaky_slope", "must lie in [0, 1)");
    o.kernel = detail::checked_size("network.kernel", n.integer("kernel", 4), 2);
    if (o.kernel % 2 != 0) detail::Reader::fail("network.kernel", "must be even");
    if (auto ch = n.integers("conv_channels")) {
      if (ch->size() != 3) detail::Reader::fail("network.conv_channels", "expected three channel counts");
      for (std::size_t i = 0; i < 3; ++i) o.conv_channels[i] = detail::checked_size("network.conv_channels", (*ch)[i], 1);
    }
    o.rnn_units = detail::checked_size("network.rnn_units", n.integer("rnn_units", 50), 1);
    n.finish();
  }

  {
    auto t = root.object("train");
    auto& tc = c.train;
    tc.max_iterations = detail::checked_int("train.max_iterations", t.integer("max_iterations", 5000), 1, 100000000);
    tc.adam.learning_rate = t.number("learning_rate", tc.adam.learning_rate);
    tc.adam.beta1 = t.number("beta1", tc.adam.beta1);
    tc.adam.beta2 = t.number("beta2", tc.adam.beta2);
    tc.adam.epsilon = t.number("epsilon", tc.adam.epsilon);
    tc.loss_threshold = t.number("loss_threshold", tc.loss_threshold);
    tc.patience = detail::checked_int("train.patience", t.integer("patience", tc.patience), 1, 100000000);
    tc.min_improvement = t.number("min_improvement", tc.min_improvement);
    tc.fidelity_eval_every =
        detail::checked_int("train.fidelity_eval_every", t.integer("fidelity_eval_every", 10), 1, 100000000);
    // The harness always knows the truth, so convergence defaults to fidelity 0.99.
    const json* target = t.find("target_fidelity");
    if (!target) tc.target_fidelity = 0.99;
    else if (!target->is_null()) tc.target_fidelity = t.number("target_fidelity", 0.99);
    tc.lambda_mse = t.number("lambda_mse", tc.lambda_mse);
    tc.max_reinitializations =
        detail::checked_int("train.max_reinitializations", t.integer("max_reinitializations", 10), 0, 1000);
    t.finish();
    try {
      tc.validate();
    } catch (const Error& e) {
      detail::Reader::fail("train", e.what());
    }
  }

  {
    auto x = root.object("crossbar");
    auto& d = c.crossbar.device;
    d.rows = detail::checked_size("crossbar.rows", x.integer("rows", 128), 1);
    d.cols = detail::checked_size("crossbar.cols", x.integer("cols", 128), 1);
    d.g_min = x.number("g_min", d.g_min);
    d.g_max = x.number("g_max", d.g_max);
    d.levels = x.integer("levels", d.levels);
    d.read_noise_sigma = x.number("read_noise_sigma", d.read_noise_sigma);
    d.v_read = x.number("v_read", d.v_read);
    d.seed = x.seed("seed").value_or(derive_seed(c.seed, "crossbar"));
    c.crossbar.run_dir = x.optional_string("run_dir");
    x.finish();
    try {
      d.validate();
    } catch (const Error& e) {
      detail::Reader::fail("crossbar", e.what());
    }
  }

  {
    auto s = root.object("sweep");
    if (auto grid = s.integers("grid")) {
      c.sweep.grid.clear();
      for (auto k : *grid) {
        if (k <= 0) detail::Reader::fail("sweep.grid", "empty basis set (|M| = " + std::to_string(k) + ")");
        c.sweep.grid.push_back(static_cast<std::size_t>(k));
      }
    }
    if (c.sweep.grid.empty()) detail::Reader::fail("sweep.grid", "must not be empty");
    for (std::size_t i = 1; i < c.sweep.grid.size(); ++i) {
      if (c.sweep.grid[i] <= c.sweep.grid[i - 1]) detail::Reader::fail("sweep.grid", "must be strictly ascending");
    }
    c.sweep.target_fidelity = s.number("target_fidelity", c.sweep.target_fidelity);
    if (!(c.sweep.target_fidelity > 0.0 && c.sweep.target_fidelity <= 1.0)) {
      detail::Reader::fail("sweep.target_fidelity", "must lie in (0, 1]");
    }
    s.finish();
  }

  {
    auto b = root.object("bench");
    if (auto archs = b.strings("architectures")) c.bench_architectures = *archs;
    if (c.bench_architectures.empty()) detail::Reader::fail("bench.architectures", "must not be empty");
    for (const auto& a : c.bench_architectures) {
      detail::parse_enum("bench.architectures", a, [](const std::string& t) { return nn::architecture_from_string(t); });
    }
    b.finish();
  }

  root.finish();
  return c;
}

template <class T>
json optional_json(const std::optional<T>& v) {
  return v ? json(*v) : json(nullptr);
}

inline json to_json(const ExperimentConfig& c) {
  const auto& m = c.measurement;
  const auto& d = c.crossbar.device;
  return {{"schema_version", kSchemaVersion},
          {"seed", c.seed},
          {"repeats", c.repeats},
          {"output_dir", c.output_dir},
          {"state", {{"kind", c.state.kind}, {"n", c.state.n}, {"p", c.state.p}, {"rank", c.state.rank},
                     {"seed", optional_json(c.state.seed)}}},
          {"measurement",
           {{"method", to_string(m.method)},
            {"alphabet", to_string(*m.alphabet)},
            {"pool", *m.pool},
            {"selection", to_string(*m.selection)},
            {"num_bases", optional_json(m.num_bases)},
            {"bases", optional_json(m.bases)},
            {"epsilon", m.epsilon},
            {"shots", optional_json(m.shots)},
            {"selection_seed", optional_json(m.selection_seed)},
            {"acquire_seed", optional_json(m.acquire_seed)}}},
          {"architecture", nn::to_string(c.architecture)},
          {"network",
           {{"bias", nn::to_string(c.network.bias)},
            {"leaky_slope", c.network.leaky_slope},
            {"kernel", c.network.kernel},
            {"conv_channels", c.network.conv_channels},
            {"rnn_units", c.network.rnn_units}}},
          {"train",
           [&] {
             json t = nn::to_json(c.train);
             t.erase("seed");  // per repeat: derive_seed(seed, "train", repeat)
             return t;
           }()},
          {"crossbar",
           {{"rows", d.rows}, {"cols", d.cols}, {"g_min", d.g_min}, {"g_max", d.g_max}, {"levels", d.levels},
            {"read_noise_sigma", d.read_noise_sigma}, {"v_read", d.v_read}, {"seed", d.seed},
            {"run_dir", optional_json(c.crossbar.run_dir)}}},
          {"sweep", {{"grid", c.sweep.grid}, {"target_fidelity", c.sweep.target_fidelity}}},
          {"bench", {{"architectures", c.bench_architectures}}}};
}

struct Overrides {
  std::optional<std::string> out = {};
  std::optional<std::uint64_t> seed = {};
  std::optional<int> repeats = {};
};

/// Applies command-line overrides to the raw document before resolution, so
/// sub-seeds follow an overridden master seed unless pinned in the file.
inline ExperimentConfig load_config(const std::filesystem::path& path, const Overrides& o = {}) {
  json doc;
  try {
    doc = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw ParseError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  if (doc.is_object()) {
    if (o.out) doc["output_dir"] = *o.out;
    if (o.seed) doc["seed"] = *o.seed;
    if (o.repeats) doc["repeats"] = *o.repeats;
  }
  return parse_config(doc);
}

// ---------------------------------------------------------------------------
// Pipeline

inline State make_state(const StateConfig& s) {
  if (s.kind == "ghz") return make_pure_state(PureKind::ghz, s.n);
  if (s.kind == "w") return make_pure_state(PureKind::w, s.n);
  if (s.kind == "random_pure") return make_pure_state(PureKind::random, s.n, s.seed);
  if (s.kind == "werner") return make_werner(s.n, s.p);
  return make_random_mixture(s.n, s.rank, *s.seed);
}

/// Candidate strings the selection draws from (identity never included).
inline BasisSet candidate_pool(const ExperimentConfig& c, const State& truth) {
  const BasisSet all = enumerate_bases(c.state.n, *c.measurement.alphabet);
  std::vector<PauliString> kept;
  for (const auto& s : all.strings()) {
    if (!s.is_identity()) kept.push_back(s);
  }
  BasisSet pool(c.state.n, std::move(kept), all.meta());
  if (*c.measurement.pool == "nonzero") pool = filter_nonzero_expectation(truth, pool, c.measurement.epsilon);
  return pool;
}

inline BasisSet choose_bases(const ExperimentConfig& c, const State& truth, std::optional<std::size_t> k) {
  const auto& m = c.measurement;
  if (m.bases) {
    const std::size_t count = k.value_or(m.bases->size());
    if (count > m.bases->size()) {
      throw ArgumentError("|M| = " + std::to_string(count) + " exceeds the " + std::to_string(m.bases->size()) +
                          " listed bases");
    }
    return BasisSet::parse(c.state.n, {m.bases->begin(), m.bases->begin() + static_cast<std::ptrdiff_t>(count)});
  }
  const BasisSet pool = candidate_pool(c, truth);
  const std::size_t count = k.value_or(pool.size());
  if (count == 0) throw ArgumentError("empty basis set");
  return select_bases(pool, count, *m.selection, &truth, *m.selection_seed, m.epsilon);
}

inline MeasurementDataset make_dataset(const ExperimentConfig& c, const State& truth, const BasisSet& bases) {
  const auto& m = c.measurement;
  return acquire(m.method, truth, bases, m.shots, m.shots ? m.acquire_seed : std::nullopt);
}

inline nn::TrainConfig train_config_for(const ExperimentConfig& c, int repeat) {
  nn::TrainConfig t = c.train;
  t.seed = derive_seed(c.seed, "train", static_cast<std::uint64_t>(repeat));
  return t;
}

inline std::uint64_t network_seed(const ExperimentConfig& c, int repeat) {
  return derive_seed(c.seed, "network", static_cast<std::uint64_t>(repeat));
}

struct RunResult {
  nn::TrainTrace trace;
  nn::Network network;
  double wall_ms = 0.0;
};

/// One seeded reconstruction of `dataset` with the configured architecture.
inline RunResult run_reconstruction(const ExperimentConfig& c, nn::Architecture arch, const MeasurementDataset& ds,
                                    const State& truth, int repeat) {
  const auto start = std::chrono::steady_clock::now();
  nn::Network net = nn::build_network(arch, c.state.n, ds.method, ds.bases, network_seed(c, repeat), c.network);
  const nn::TrainConfig tc = train_config_for(c, repeat);
  nn::TrainTrace trace;
  if (arch == nn::Architecture::CGAN) {
    nn::Network disc = nn::build_discriminator(c.state.n, ds.method, ds.bases, network_seed(c, repeat), c.network);
    trace = nn::train_cgan(net, disc, ds, &truth, tc);
  } else {
    trace = nn::train_reconstruction(net, ds, &truth, tc);
  }
  const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return {std::move(trace), std::move(net), ms};
}

inline json network_file(const nn::Network& net, std::uint64_t seed) {
  const auto& s = net.spec();
  return {{"architecture", nn::to_string(s.architecture)},
          {"n_qubits", s.n_qubits},
          {"method", to_string(s.method)},
          {"num_bases", s.num_bases},
          {"seed", seed},
          {"options",
           {{"bias", nn::to_string(s.options.bias)},
            {"leaky_slope", s.options.leaky_slope},
            {"kernel", s.options.kernel},
            {"conv_channels", s.options.conv_channels},
            {"rnn_units", s.options.rnn_units}}},
          {"parameters", net.parameters_to_json()}};
}

inline nn::Network network_from_file(const json& j) {
  try {
    nn::NetworkOptions o;
    const auto& oj = j.at("options");
    o.bias = nn::bias_mode_from_string(oj.at("bias").get<std::string>());
    o.leaky_slope = oj.at("leaky_slope").get<double>();
    o.kernel = oj.at("kernel").get<std::size_t>();
    o.conv_channels = oj.at("conv_channels").get<std::array<std::size_t, 3>>();
    o.rnn_units = oj.at("rnn_units").get<std::size_t>();
    nn::Network net(nn::make_network_spec(nn::architecture_from_string(j.at("architecture").get<std::string>()),
                                          j.at("n_qubits").get<int>(),
                                          method_from_string(j.at("method").get<std::string>()),
                                          j.at("num_bases").get<std::size_t>(), o),
                    j.at("seed").get<std::uint64_t>());
    net.parameters_from_json(j.at("parameters"));
    return net;
  } catch (const json::exception& e) {
    throw ParseError(std::string("malformed network file: ") + e.what());
  }
}

inline std::string dump(const json& j) { return j.dump(2) + "\n"; }

inline std::string fmt(double v) { return nn::format_double(v); }

// First logged iteration whose fidelity reaches `target`.
inline std::optional<int> iterations_to(const nn::TrainTrace& t, double target) {
  for (const auto& r : t.records) {
    if (r.fidelity >= target) return r.iteration;
  }
  return std::nullopt;
}

inline std::pair<double, double> mean_std(const std::vector<double>& v) {
  if (v.empty()) return {std::nan(""), std::nan("")};
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return {mean, v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0};
}

// ---------------------------------------------------------------------------
// Commands

inline void write_resolved(const std::filesystem::path& dir, const ExperimentConfig& c,
                           const std::string& name = "config.resolved.json") {
  write_file_atomic(dir / name, dump(to_json(c)));
}

inline void write_run_artifacts(const std::filesystem::path& dir, const ExperimentConfig& c, const RunResult& r,
                                const MeasurementDataset& ds, const State& truth, int repeat) {
  write_file_atomic(dir / "trace.csv", nn::trace_to_csv(r.trace));
  write_file_atomic(dir / "spec.json", dump(nn::trace_sidecar(r.network.spec(), train_config_for(c, repeat), ds, r.trace)));
  json rho = nullptr;
  if (r.trace.final_state) {
    rho = state_to_json(*r.trace.final_state);
  } else {
    try {
      const auto targets = ds.training_targets();
      rho = state_to_json(nn::to_density_matrix(r.network.density(nn::Tensor::from_values({targets.size()}, targets))));
    } catch (const Error&) {
      rho = nullptr;  // parameters no longer yield a state
    }
  }
  write_file_atomic(dir / "rho.json", dump(rho));
  write_file_atomic(dir / "dataset.json", dump(dataset_to_json(ds)));
  write_file_atomic(dir / "truth.json", dump(state_to_json(truth)));
  write_file_atomic(dir / "network.json", dump(network_file(r.network, network_seed(c, repeat))));
}

inline int cmd_reconstruct(const ExperimentConfig& c, std::ostream& out) {
  const std::filesystem::path root(c.output_dir);
  write_resolved(root, c);
  const State truth = make_state(c.state);
  const MeasurementDataset ds = make_dataset(c, truth, choose_bases(c, truth, c.measurement.num_bases));
  bool all = true;
  for (int r = 0; r < c.repeats; ++r) {
    const auto dir = c.repeats == 1 ? root : root / ("repeat-" + std::to_string(r));
    const RunResult res = run_reconstruction(c, c.architecture, ds, truth, r);
    write_run_artifacts(dir, c, res, ds, truth, r);
    all = all && res.trace.converged;
    char line[160];
    std::snprintf(line, sizeof line, "final_fidelity=%.10g iterations=%d converged=%s", res.trace.final_fidelity,
                  res.trace.iterations, res.trace.converged ? "true" : "false");
    if (c.repeats > 1) out << "repeat=" << r << ' ';
    out << line << '\n';
  }
  return all ? kConverged : kNotConverged;
}

struct SweepCell {
  std::size_t num_bases = 0;
  std::string status = "ok";
  std::string error;
  std::vector<std::string> bases;
  std::vector<double> fidelities;
  std::vector<std::optional<int>> iterations_to_target;
  double fidelity_mean = std::nan(""), fidelity_std = std::nan("");
};

struct SweepResult {
  std::vector<SweepCell> cells;
  std::optional<std::size_t> minimal;
};

inline SweepResult run_sweep(const ExperimentConfig& c) {
  const State truth = make_state(c.state);
  SweepResult result;
  for (std::size_t k : c.sweep.grid) {
    SweepCell cell;
    cell.num_bases = k;
    try {
      const MeasurementDataset ds = make_dataset(c, truth, choose_bases(c, truth, k));
      cell.bases = ds.bases.labels();
      for (int r = 0; r < c.repeats; ++r) {
        const RunResult res = run_reconstruction(c, c.architecture, ds, truth, r);
        if (res.trace.stop_reason == "diverged") throw DivergenceError(res.trace.warnings.back());
        cell.fidelities.push_back(res.trace.final_fidelity);
        cell.iterations_to_target.push_back(iterations_to(res.trace, c.sweep.target_fidelity));
      }
      std::tie(cell.fidelity_mean, cell.fidelity_std) = mean_std(cell.fidelities);
      if (!result.minimal && cell.fidelity_mean >= c.sweep.target_fidelity) result.minimal = k;
    } catch (const Error& e) {
      cell.status = "failed";
      cell.error = e.what();
    }
    result.cells.push_back(std::move(cell));
  }
  return result;
}

inline json to_json(const SweepResult& s, const ExperimentConfig& c) {
  json cells = json::array();
  for (const auto& cell : s.cells) {
    json its = json::array();
    for (const auto& i : cell.iterations_to_target) its.push_back(optional_json(i));
    cells.push_back({{"num_bases", cell.num_bases},
                     {"status", cell.status},
                     {"error", cell.error},
                     {"bases", cell.bases},
                     {"fidelities", cell.fidelities},
                     {"fidelity_mean", nn::json_number_or_null(cell.fidelity_mean)},
                     {"fidelity_std", nn::json_number_or_null(cell.fidelity_std)},
                     {"iterations_to_target", its}});
  }
  return {{"target_fidelity", c.sweep.target_fidelity},
          {"repeats", c.repeats},
          {"cells", cells},
          {"minimal_num_bases", s.minimal ? json(*s.minimal) : json("not found")}};
}

inline std::string sweep_csv(const SweepResult& s) {
  std::string out = "num_bases,status,fidelity_mean,fidelity_std,reached_target,iterations_to_target_mean\n";
  for (const auto& cell : s.cells) {
    std::vector<double> its;
    for (const auto& i : cell.iterations_to_target) {
      if (i) its.push_back(*i);
    }
    out += std::to_string(cell.num_bases) + ',' + cell.status + ',' + fmt(cell.fidelity_mean) + ',' +
           fmt(cell.fidelity_std) + ',' + std::to_string(its.size()) + ',' + (its.empty() ? "" : fmt(mean_std(its).first)) +
           '\n';
  }
  return out;
}

inline int cmd_sweep_bases(const ExperimentConfig& c, std::ostream& out) {
  const std::filesystem::path root(c.output_dir);
  write_resolved(root, c);
  const SweepResult s = run_sweep(c);
  write_file_atomic(root / "sweep.json", dump(to_json(s, c)));
  write_file_atomic(root / "sweep.csv", sweep_csv(s));
  out << "minimal_num_bases=" << (s.minimal ? std::to_string(*s.minimal) : "not found") << '\n';
  return s.minimal ? kConverged : kNotConverged;
}

inline int cmd_bench_architectures(const ExperimentConfig& c, std::ostream& out) {
  std::vector<nn::Architecture> archs;
  for (const auto& a : c.bench_architectures) archs.push_back(nn::architecture_from_string(a));
  const std::filesystem::path root(c.output_dir);
  write_resolved(root, c);
  const State truth = make_state(c.state);
  const MeasurementDataset ds = make_dataset(c, truth, choose_bases(c, truth, c.measurement.num_bases));
  std::string csv = "architecture,row,repeat,final_fidelity,final_infidelity,iterations,converged,wall_ms\n";
  for (auto arch : archs) {
    std::vector<double> fids, infs, its, ms;
    for (int r = 0; r < c.repeats; ++r) {
      const RunResult res = run_reconstruction(c, arch, ds, truth, r);
      const double f = res.trace.final_fidelity;
      fids.push_back(f);
      infs.push_back(1.0 - f);
      its.push_back(res.trace.iterations);
      ms.push_back(res.wall_ms);
      csv += std::string(nn::to_string(arch)) + ",repeat," + std::to_string(r) + ',' + fmt(f) + ',' + fmt(1.0 - f) +
             ',' + std::to_string(res.trace.iterations) + ',' + (res.trace.converged ? "true" : "false") + ',' +
             fmt(res.wall_ms) + '\n';
    }
    const double fm = mean_std(fids).first;
    csv += std::string(nn::to_string(arch)) + ",mean,," + fmt(fm) + ',' + fmt(mean_std(infs).first) + ',' +
           fmt(mean_std(its).first) + ",," + fmt(mean_std(ms).first) + '\n';
    out << "architecture=" << nn::to_string(arch) << " mean_infidelity=" << fmt(mean_std(infs).first) << '\n';
  }
  write_file_atomic(root / "bench.csv", csv);
  return kConverged;
}

inline int cmd_crossbar_eval(const ExperimentConfig& c, std::ostream& out) {
  const std::filesystem::path root(c.output_dir);
  const std::filesystem::path run = c.crossbar.run_dir ? std::filesystem::path(*c.crossbar.run_dir) : root;
  if (!std::filesystem::exists(run / "network.json")) {
    throw ResourceError("no trained network at " + (run / "network.json").string() + "; run reconstruct first");
  }
  write_resolved(root, c, "crossbar.config.resolved.json");
  const nn::Network net = network_from_file(json::parse(read_file(run / "network.json")));
  const MeasurementDataset ds = dataset_from_json(json::parse(read_file(run / "dataset.json")));
  const State truth = state_from_json(json::parse(read_file(run / "truth.json")));
  const DegradationReport report = run_network_on_crossbar(net, ds, c.crossbar.device, truth, c.repeats);
  write_file_atomic(root / "crossbar_report.json", dump(to_json(report)));
  out << "fidelity_float=" << fmt(report.fidelity_float) << " fidelity_mean=" << fmt(report.fidelity_mean)
      << " delta=" << fmt(report.delta) << '\n';
  return kConverged;
}

/// Dispatches a command; errors become exit code 1 with a message on `err`.
inline int run_command(const std::string& command, const std::filesystem::path& config_path, const Overrides& o,
                       std::ostream& out, std::ostream& err) {
  try {
    const ExperimentConfig c = load_config(config_path, o);
    if (command == "reconstruct") return cmd_reconstruct(c, out);
    if (command == "sweep-bases") return cmd_sweep_bases(c, out);
    if (command == "bench-arch") return cmd_bench_architectures(c, out);
    if (command == "crossbar-eval") return cmd_crossbar_eval(c, out);
    err << "error: unknown command \"" << command << "\"\n";
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
  }
  return kError;
}

}  // namespace qstlab::harness
