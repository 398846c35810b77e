#pragma once

#include <chrono>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "qstlab/measurement.hpp"
#include "qstlab/nn/adam.hpp"
#include "qstlab/nn/loss.hpp"
#include "qstlab/nn/network.hpp"
#include "qstlab/quantum_core.hpp"

namespace qstlab::nn {

struct TrainConfig {
  int max_iterations = 5000;
  AdamConfig adam{};
  double loss_threshold = 1e-10;
  int patience = 200;
  double min_improvement = 1e-12;
  int fidelity_eval_every = 10;
  std::uint64_t seed = 0;
  std::optional<double> target_fidelity;  // stop once reached (needs a truth state)
  double lambda_mse = 10.0;               // CGAN reconstruction weight
  int max_reinitializations = 10;

  void validate() const {
    adam.validate();
    if (max_iterations < 1) throw ArgumentError("max_iterations must be at least 1");
    if (patience < 1) throw ArgumentError("patience must be at least 1");
    if (fidelity_eval_every < 1) throw ArgumentError("fidelity_eval_every must be at least 1");
    if (!(loss_threshold >= 0.0) || !(min_improvement >= 0.0) || !(lambda_mse >= 0.0)) {
      throw ArgumentError("loss_threshold, min_improvement and lambda_mse must be non-negative");
    }
    if (target_fidelity && !(*target_fidelity > 0.0 && *target_fidelity <= 1.0)) {
      throw ArgumentError("target_fidelity must lie in (0, 1]");
    }
  }
};

struct TraceRecord {
  int iteration = 0;
  double loss = 0.0;
  double fidelity = std::numeric_limits<double>::quiet_NaN();  // NaN without a truth state
  double elapsed_ms = 0.0;
};

struct TrainTrace {
  std::vector<TraceRecord> records;
  std::optional<DensityMatrix> final_state;
  bool converged = false;
  int iterations = 0;
  std::string stop_reason;
  double final_loss = std::numeric_limits<double>::quiet_NaN();
  double final_fidelity = std::numeric_limits<double>::quiet_NaN();
  int reinitializations = 0;
  std::vector<std::string> warnings;
};

namespace detail {

class RunMonitor {
 public:
  RunMonitor(const TrainConfig& config, const State* truth)
      : config_(config), truth_(truth), start_(std::chrono::steady_clock::now()) {}

  // Records iteration k (1-based) and returns true when training should stop.
  bool observe(TrainTrace& trace, int k, double loss, const Tensor& rho) {
    trace.iterations = k;
    if (!std::isfinite(loss)) {
      diverged(trace, "non-finite loss at iteration " + std::to_string(k));
      return true;
    }
    trace.final_loss = loss;
    const bool last = k == config_.max_iterations;
    const bool below = loss < config_.loss_threshold;
    if (loss < best_ - config_.min_improvement) {
      best_ = loss;
      since_best_ = 0;
    } else {
      ++since_best_;
    }
    const bool plateau = since_best_ >= config_.patience;
    const bool eval = k == 1 || k % config_.fidelity_eval_every == 0 || last || below || plateau;
    double fid = std::numeric_limits<double>::quiet_NaN();
    if (eval && truth_) fid = fidelity(*truth_, to_density_matrix(rho));
    const bool reached = config_.target_fidelity && truth_ && eval && fid >= *config_.target_fidelity;
    if (eval) {
      const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_).count();
      trace.records.push_back({k, loss, fid, ms});
    }
    std::string reason;
    if (reached) reason = "target_fidelity";
    else if (below) reason = "loss_threshold";
    else if (plateau) reason = "plateau";
    else if (last) reason = "max_iterations";
    if (reason.empty()) return false;
    trace.stop_reason = reason;
    trace.final_state = to_density_matrix(rho);
    trace.final_fidelity = fid;
    trace.converged = config_.target_fidelity && truth_ ? fid >= *config_.target_fidelity : below;
    return true;
  }

  // Ends the run without a final state; the trace up to here is kept.
  static void diverged(TrainTrace& trace, std::string what) {
    trace.stop_reason = "diverged";
    trace.converged = false;
    trace.warnings.push_back(std::move(what));
  }

 private:
  const TrainConfig& config_;
  const State* truth_;
  std::chrono::steady_clock::time_point start_;
  double best_ = std::numeric_limits<double>::infinity();
  int since_best_ = 0;
};

inline void check_dataset(const NetworkSpec& spec, const MeasurementDataset& ds, const State* truth) {
  if (ds.method != spec.method) throw ArgumentError("dataset method does not match the network");
  if (ds.bases.n_qubits() != spec.n_qubits || ds.bases.size() != spec.num_bases) {
    throw DimensionError("dataset bases do not match the network");
  }
  if (truth && n_qubits_of(*truth) != spec.n_qubits) throw DimensionError("truth state has the wrong qubit count");
}

// Forward pass to rho, redrawing the output layer if T T^dagger collapses.
inline Tensor density_with_recovery(Network& net, const Tensor& input, TrainTrace& trace, int max_attempts) {
  for (;;) {
    try {
      return net.density(input);
    } catch (const DegenerateParameterError&) {
      if (trace.reinitializations >= max_attempts) throw;
      net.reinitialize_after_degenerate(static_cast<std::uint64_t>(++trace.reinitializations));
      trace.warnings.push_back("re-initialized parameters after degenerate Tr(T T^dagger)");
    }
  }
}

}  // namespace detail

/// Single-state variational fit: the measured statistics are both the network
/// input and the regression target.
inline TrainTrace train_reconstruction(Network& net, const MeasurementDataset& dataset, const State* truth,
                                       const TrainConfig& config) {
  config.validate();
  detail::check_dataset(net.spec(), dataset, truth);
  const std::vector<double> targets = dataset.training_targets();
  const Tensor input = Tensor::from_values({targets.size()}, targets);
  const StatisticsPlan plan(dataset.method, dataset.bases);
  Adam opt(net.parameters(), config.adam);
  detail::RunMonitor monitor(config, truth);
  TrainTrace trace;
  for (int k = 1;; ++k) {
    const Tensor rho = detail::density_with_recovery(net, input, trace, config.max_reinitializations);
    Tensor loss = mse_loss(statistics_layer(rho, plan), targets);
    if (monitor.observe(trace, k, loss.item(), rho)) break;
    opt.zero_grad();
    loss.backward();
    try {
      opt.step();
    } catch (const DivergenceError& e) {
      detail::RunMonitor::diverged(trace, e.what());
      break;
    }
  }
  return trace;
}

/// Conditional GAN: the generator maps the measured statistics to a state;
/// the discriminator judges (condition, statistics) pairs. The generator loss
/// is the non-saturating adversarial term plus lambda_mse * MSE. The logged
/// loss is the generator's statistics MSE.
inline TrainTrace train_cgan(Network& generator, Network& discriminator, const MeasurementDataset& dataset,
                             const State* truth, const TrainConfig& config) {
  config.validate();
  detail::check_dataset(generator.spec(), dataset, truth);
  if (discriminator.spec().role != "discriminator" || discriminator.spec().input_dim != generator.spec().input_dim) {
    throw ArgumentError("discriminator was not built for this generator");
  }
  const std::vector<double> targets = dataset.training_targets();
  const Tensor condition = Tensor::from_values({targets.size()}, targets);
  const Tensor real = condition;
  const StatisticsPlan plan(dataset.method, dataset.bases);
  Adam g_opt(generator.parameters(), config.adam);
  Adam d_opt(discriminator.parameters(), config.adam);
  detail::RunMonitor monitor(config, truth);
  TrainTrace trace;
  int saturated_steps = 0;
  bool warned = false;
  for (int k = 1;; ++k) {
    const Tensor rho = detail::density_with_recovery(generator, condition, trace, config.max_reinitializations);
    const Tensor fake = statistics_layer(rho, plan);
    Tensor mse = mse_loss(fake, targets);
    if (monitor.observe(trace, k, mse.item(), rho)) break;

    d_opt.zero_grad();
    Tensor d_loss = add(bce_with_logits(discriminator.forward({condition, real}), 1.0),
                        bce_with_logits(discriminator.forward({condition, fake.detach()}), 0.0));
    d_loss.backward();
    try {
      d_opt.step();
    } catch (const DivergenceError& e) {
      detail::RunMonitor::diverged(trace, e.what());
      break;
    }
    saturated_steps = d_loss.item() < 1e-6 ? saturated_steps + 1 : 0;
    if (saturated_steps >= 100 && !warned) {
      trace.warnings.push_back("discriminator saturated (loss < 1e-6 for 100 steps) at iteration " +
                               std::to_string(k));
      warned = true;
    }

    g_opt.zero_grad();
    Tensor g_loss = bce_with_logits(discriminator.forward({condition, fake}), 1.0);
    if (config.lambda_mse > 0.0) g_loss = add(g_loss, scale(mse, config.lambda_mse));
    g_loss.backward();
    try {
      g_opt.step();
    } catch (const DivergenceError& e) {
      detail::RunMonitor::diverged(trace, e.what());
      break;
    }
  }
  return trace;
}

/// Discriminator probability for a (condition, statistics) pair.
inline double discriminator_probability(const Network& discriminator, const std::vector<double>& condition,
                                        const std::vector<double>& statistics) {
  const Tensor logit = discriminator.forward(
      {Tensor::from_values({condition.size()}, condition), Tensor::from_values({statistics.size()}, statistics)});
  return 1.0 / (1.0 + std::exp(-logit.item()));
}

}  // namespace qstlab::nn
