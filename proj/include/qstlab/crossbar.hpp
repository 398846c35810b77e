#pragma once

// Memristor crossbar deployment model: differential conductance encoding,
// uniform multi-level quantization, multiplicative Gaussian read noise and
// tiling onto fixed-size arrays. Activations and the physicality layers stay
// in floating point.

#include <Eigen/Dense>
#include <cmath>
#include <map>
#include <nlohmann/json.hpp>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "qstlab/errors.hpp"
#include "qstlab/measurement.hpp"
#include "qstlab/nn/network.hpp"
#include "qstlab/quantum_core.hpp"
#include "qstlab/seeding.hpp"

namespace qstlab {

struct CrossbarConfig {
  std::size_t rows = 128;
  std::size_t cols = 128;
  double g_min = 1e-6;  // S
  double g_max = 1e-4;  // S
  std::int64_t levels = 256;
  double read_noise_sigma = 0.0;
  double v_read = 0.2;  // V
  std::uint64_t seed = 0;

  void validate() const {
    if (rows == 0 || cols == 0) throw ArgumentError("crossbar rows and cols must be positive");
    if (!(g_min > 0.0 && g_min < g_max)) throw ArgumentError("crossbar needs 0 < g_min < g_max");
    if (levels < 2) throw ArgumentError("crossbar levels must be at least 2");
    if (!(read_noise_sigma >= 0.0)) throw ArgumentError("read_noise_sigma must be non-negative");
    if (!(v_read > 0.0)) throw ArgumentError("v_read must be positive");
  }

  double step() const { return (g_max - g_min) / static_cast<double>(levels - 1); }
};

inline nlohmann::json to_json(const CrossbarConfig& c) {
  return {{"rows", c.rows},   {"cols", c.cols}, {"g_min", c.g_min},
          {"g_max", c.g_max}, {"levels", c.levels}, {"read_noise_sigma", c.read_noise_sigma},
          {"v_read", c.v_read}, {"seed", c.seed}};
}

struct Tile {
  std::string layer;
  std::size_t row_offset = 0, col_offset = 0, rows = 0, cols = 0;
};

/// A weight matrix W (out x in, y = W x) stored as g_plus - g_minus.
struct ProgrammedCrossbar {
  CrossbarConfig config;
  Eigen::MatrixXd g_plus, g_minus;
  double weight_scale = 1.0;
  std::vector<Tile> tile_map;

  std::size_t out_dim() const { return static_cast<std::size_t>(g_plus.rows()); }
  std::size_t in_dim() const { return static_cast<std::size_t>(g_plus.cols()); }

  // Weights as read back without noise.
  Eigen::MatrixXd dequantized() const { return (g_plus - g_minus) / weight_scale; }
};

inline double quantize_conductance(double g, const CrossbarConfig& c) {
  const double k = std::round((g - c.g_min) / c.step());
  const auto top = static_cast<double>(c.levels - 1);
  if (k >= top) return c.g_max;
  if (k <= 0.0) return c.g_min;
  return c.g_min + k * c.step();
}

inline ProgrammedCrossbar program_weights(const Eigen::MatrixXd& w, const CrossbarConfig& config,
                                          const std::string& layer = "W") {
  config.validate();
  if (!w.allFinite()) throw NumericError("program_weights: non-finite weight in " + layer);
  ProgrammedCrossbar xbar;
  xbar.config = config;
  xbar.g_plus = Eigen::MatrixXd::Constant(w.rows(), w.cols(), config.g_min);
  xbar.g_minus = xbar.g_plus;
  const double max_abs = w.size() ? w.cwiseAbs().maxCoeff() : 0.0;
  if (max_abs > 0.0) {
    xbar.weight_scale = (config.g_max - config.g_min) / max_abs;
    for (Eigen::Index r = 0; r < w.rows(); ++r)
      for (Eigen::Index c = 0; c < w.cols(); ++c) {
        const double g = quantize_conductance(config.g_min + std::abs(w(r, c)) * xbar.weight_scale, config);
        (w(r, c) >= 0.0 ? xbar.g_plus : xbar.g_minus)(r, c) = g;
      }
  }
  const auto out = static_cast<std::size_t>(w.rows()), in = static_cast<std::size_t>(w.cols());
  for (std::size_t r = 0; r < out; r += config.rows)
    for (std::size_t c = 0; c < in; c += config.cols) {
      xbar.tile_map.push_back({layer, r, c, std::min(config.rows, out - r), std::min(config.cols, in - c)});
    }
  return xbar;
}

/// y = W x through the conductances. Every cell of every tile gets a fresh
/// relative noise draw from `read_seed`; the z stream does not depend on sigma.
inline std::vector<double> analog_mvm(const ProgrammedCrossbar& xbar, std::span<const double> x,
                                      std::uint64_t read_seed = 0) {
  if (x.size() != xbar.in_dim()) {
    throw ShapeError("analog_mvm: input of length " + std::to_string(x.size()) + " for a crossbar with " +
                     std::to_string(xbar.in_dim()) + " columns");
  }
  const double sigma = xbar.config.read_noise_sigma;
  const double v = xbar.config.v_read;
  std::vector<double> current(xbar.out_dim(), 0.0);
  std::mt19937_64 rng(read_seed);
  std::normal_distribution<double> z(0.0, 1.0);
  for (const Tile& t : xbar.tile_map) {
    for (std::size_t r = t.row_offset; r < t.row_offset + t.rows; ++r) {
      double partial = 0.0;
      for (std::size_t c = t.col_offset; c < t.col_offset + t.cols; ++c) {
        double gp = xbar.g_plus(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
        double gm = xbar.g_minus(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
        if (sigma > 0.0) {
          gp *= 1.0 + sigma * z(rng);
          gm *= 1.0 + sigma * z(rng);
        }
        partial += (gp - gm) * v * x[c];
      }
      current[r] += partial;
    }
  }
  for (auto& j : current) j /= xbar.weight_scale * v;
  return current;
}

/// Network backend that programs each weight tensor once and routes every
/// product through analog_mvm.
class CrossbarBackend : public nn::MatVecBackend {
 public:
  CrossbarBackend(CrossbarConfig config, std::uint64_t repeat) : config_(config), repeat_(repeat) {
    config_.validate();
  }

  std::vector<double> multiply(const std::string& name, std::span<const double> weights, std::size_t in,
                               std::size_t out, std::span<const double> x) override {
    auto it = programmed_.find(name);
    if (it == programmed_.end()) {
      Eigen::MatrixXd w(static_cast<Eigen::Index>(out), static_cast<Eigen::Index>(in));
      for (std::size_t i = 0; i < in; ++i)
        for (std::size_t o = 0; o < out; ++o) w(static_cast<Eigen::Index>(o), static_cast<Eigen::Index>(i)) = weights[i * out + o];
      it = programmed_.emplace(name, program_weights(w, config_, name)).first;
      tiles_ += it->second.tile_map.size();
    }
    reads_ += it->second.tile_map.size();
    return analog_mvm(it->second, x, derive_seed(derive_seed(config_.seed, "crossbar-read", repeat_), name, calls_++));
  }

  std::size_t tiles() const { return tiles_; }
  std::size_t mvm_reads() const { return reads_; }
  void reset_counters() { reads_ = calls_ = 0; }

 private:
  CrossbarConfig config_;
  std::uint64_t repeat_;
  std::map<std::string, ProgrammedCrossbar> programmed_;
  std::size_t tiles_ = 0, reads_ = 0, calls_ = 0;
};

inline constexpr int kMaxCrossbarConvQubits = 4;

struct DegradationReport {
  CrossbarConfig config;
  int repeats = 0;
  double fidelity_float = 0.0;
  double fidelity_mean = 0.0;
  double fidelity_std = 0.0;
  double delta = 0.0;
  std::size_t tiles = 0;
  std::size_t mvm_reads = 0;  // tile reads per inference pass
  double max_statistics_error = 0.0;
  std::vector<double> fidelities;
};

inline nlohmann::json to_json(const DegradationReport& r) {
  return {{"config", to_json(r.config)},
          {"repeats", r.repeats},
          {"fidelity_float", r.fidelity_float},
          {"fidelity_mean", r.fidelity_mean},
          {"fidelity_std", r.fidelity_std},
          {"delta", r.delta},
          {"tiles", r.tiles},
          {"mvm_reads", r.mvm_reads},
          {"max_statistics_error", r.max_statistics_error},
          {"fidelities", r.fidelities}};
}

/// Replays inference `repeats` times with every weight product on simulated
/// crossbars and compares the reconstruction against floating point.
inline DegradationReport run_network_on_crossbar(const nn::Network& net, const MeasurementDataset& dataset,
                                                 const CrossbarConfig& config, const State& truth, int repeats) {
  config.validate();
  if (repeats < 1) throw ArgumentError("repeats must be at least 1");
  const auto& spec = net.spec();
  if (spec.role == "discriminator") throw UnsupportedError("crossbar evaluation needs a state-producing network");
  for (const auto& l : spec.layers) {
    if (l.kind == "conv2d_transpose" && spec.n_qubits > kMaxCrossbarConvQubits) {
      throw UnsupportedError("conv2d_transpose layers are lowered to crossbars only up to " +
                             std::to_string(kMaxCrossbarConvQubits) + " qubits");
    }
  }
  const auto targets = dataset.training_targets();
  const nn::Tensor input = nn::Tensor::from_values({targets.size()}, targets);
  const nn::StatisticsPlan plan(dataset.method, dataset.bases);
  const nn::Tensor rho_float = net.density(input);
  const auto stats_float = plan.apply(rho_float);

  DegradationReport report;
  report.config = config;
  report.repeats = repeats;
  report.fidelity_float = fidelity(truth, nn::to_density_matrix(rho_float));
  double sum = 0.0;
  for (int r = 0; r < repeats; ++r) {
    CrossbarBackend backend(config, static_cast<std::uint64_t>(r));
    const nn::Tensor rho = nn::density_matrix_layer(net.forward(input, &backend));
    const auto stats = plan.apply(rho);
    for (std::size_t i = 0; i < stats.size(); ++i) {
      report.max_statistics_error =
          std::max(report.max_statistics_error, std::abs(stats.values()[i] - stats_float.values()[i]));
    }
    const double f = fidelity(truth, nn::to_density_matrix(rho));
    report.fidelities.push_back(f);
    sum += f;
    report.tiles = backend.tiles();
    report.mvm_reads = backend.mvm_reads();
  }
  report.fidelity_mean = sum / repeats;
  if (repeats > 1) {
    double ss = 0.0;
    for (double f : report.fidelities) ss += (f - report.fidelity_mean) * (f - report.fidelity_mean);
    report.fidelity_std = std::sqrt(ss / (repeats - 1));
  }
  report.delta = report.fidelity_float - report.fidelity_mean;
  return report;
}

}  // namespace qstlab
