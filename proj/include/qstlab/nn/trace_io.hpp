#pragma once

// Training trace files: trace.csv (iteration,loss,fidelity,elapsed_ms) and a
// JSON sidecar holding everything needed to rerun the fit.

#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <string>

#include <nlohmann/json.hpp>

#include "qstlab/dataset_io.hpp"
#include "qstlab/nn/network.hpp"
#include "qstlab/nn/train.hpp"
#include "qstlab/seeding.hpp"

namespace qstlab::nn {

inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// CSV text of the logged records. With include_elapsed = false the last
/// column is dropped, which is the form compared across reruns.
inline std::string trace_to_csv(const TrainTrace& trace, bool include_elapsed = true) {
  std::string out = include_elapsed ? "iteration,loss,fidelity,elapsed_ms\n" : "iteration,loss,fidelity\n";
  for (const auto& r : trace.records) {
    out += std::to_string(r.iteration) + ',' + format_double(r.loss) + ',' + format_double(r.fidelity);
    if (include_elapsed) out += ',' + format_double(r.elapsed_ms);
    out += '\n';
  }
  return out;
}

inline nlohmann::json json_number_or_null(double v) {
  return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
}

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"max_iterations", c.max_iterations},
          {"learning_rate", c.adam.learning_rate},
          {"beta1", c.adam.beta1},
          {"beta2", c.adam.beta2},
          {"epsilon", c.adam.epsilon},
          {"loss_threshold", c.loss_threshold},
          {"patience", c.patience},
          {"min_improvement", c.min_improvement},
          {"fidelity_eval_every", c.fidelity_eval_every},
          {"seed", c.seed},
          {"target_fidelity", c.target_fidelity ? nlohmann::json(*c.target_fidelity) : nlohmann::json(nullptr)},
          {"lambda_mse", c.lambda_mse},
          {"max_reinitializations", c.max_reinitializations}};
}

/// 64-bit FNV-1a of the dataset's canonical JSON text, as 16 hex digits.
inline std::string dataset_hash(const MeasurementDataset& ds) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, fnv1a64(dataset_to_json(ds).dump()));
  return buf;
}

inline nlohmann::json design_decisions(const NetworkSpec& spec) {
  return {{"density_parameterization", "rho = T T^dagger / Tr(T T^dagger)"},
          {"leaky_relu_slope", spec.options.leaky_slope},
          {"bias_mode", to_string(spec.options.bias)},
          {"instance_norm_epsilon", kInstanceNormEpsilon},
          {"conv_kernel", spec.options.kernel},
          {"conv_padding", "pad_before = (kernel - stride) / 2, output = input * stride"},
          {"rnn_input_layout", "length-|input| sequence of scalars"},
          {"weight_init", "glorot_uniform per parameter, seed derive_seed(seed, \"init/\" + name)"},
          {"discriminator_head", "Dense(64 -> 1) logit, zero-initialized, sigmoid in the loss"},
          {"cgan_generator_loss", "-log D(G(c)) + lambda_mse * MSE"},
          {"early_stop", "loss < loss_threshold, or no improvement > min_improvement for patience iterations"},
          {"degenerate_trace_recovery",
           "redraw last weight layer, biases and betas U(-0.1, 0.1), at most max_reinitializations times"}};
}

inline nlohmann::json trace_sidecar(const NetworkSpec& spec, const TrainConfig& config, const MeasurementDataset& ds,
                                    const TrainTrace& trace) {
  return {{"network_spec", network_spec_to_json(spec)},
          {"train_config", to_json(config)},
          {"dataset_hash", dataset_hash(ds)},
          {"design_decisions", design_decisions(spec)},
          {"result",
           {{"iterations", trace.iterations},
            {"converged", trace.converged},
            {"stop_reason", trace.stop_reason},
            {"final_loss", json_number_or_null(trace.final_loss)},
            {"final_fidelity", json_number_or_null(trace.final_fidelity)},
            {"reinitializations", trace.reinitializations},
            {"warnings", trace.warnings}}}};
}

}  // namespace qstlab::nn
