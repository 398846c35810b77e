#pragma once

#include <array>
#include <cstdint>
#include <nlohmann/json.hpp>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "qstlab/measurement.hpp"
#include "qstlab/nn/ops.hpp"
#include "qstlab/nn/quantum_layers.hpp"
#include "qstlab/seeding.hpp"

namespace qstlab::nn {

enum class Architecture { FCN, CNN, CGAN, RNN };

inline const char* to_string(Architecture a) {
  switch (a) {
    case Architecture::FCN: return "FCN";
    case Architecture::CNN: return "CNN";
    case Architecture::CGAN: return "CGAN";
    case Architecture::RNN: return "RNN";
  }
  return "?";
}

inline Architecture architecture_from_string(std::string_view s) {
  if (s == "FCN") return Architecture::FCN;
  if (s == "CNN") return Architecture::CNN;
  if (s == "CGAN") return Architecture::CGAN;
  if (s == "RNN") return Architecture::RNN;
  if (s == "RBM" || s == "Transformer" || s == "SVAE") {
    throw UnsupportedError("architecture " + std::string(s) +
                           " is out of scope; supported architectures are FCN, CNN, CGAN and RNN");
  }
  throw ParseError("unknown architecture \"" + std::string(s) + "\"");
}

// Which Dense layers carry a bias. `table` matches the published parameter
// counts: the input Dense is bias-free and every later Dense has a bias.
enum class BiasMode { table, none, all };

inline const char* to_string(BiasMode b) {
  return b == BiasMode::table ? "table" : b == BiasMode::none ? "none" : "all";
}

inline BiasMode bias_mode_from_string(std::string_view s) {
  if (s == "table") return BiasMode::table;
  if (s == "none") return BiasMode::none;
  if (s == "all") return BiasMode::all;
  throw ParseError("bias mode must be table, none or all, got \"" + std::string(s) + "\"");
}

struct NetworkOptions {
  BiasMode bias = BiasMode::table;
  double leaky_slope = kLeakySlope;
  std::size_t kernel = 4;
  std::array<std::size_t, 3> conv_channels{64, 64, 32};
  std::size_t rnn_units = 50;
};

struct LayerSpec {
  std::string kind;
  std::string name;
  Shape output_shape;
  std::size_t in = 0, out = 0;
  bool bias = false;
  std::size_t kernel = 0, stride = 0;
  bool return_sequences = false;
  std::size_t parameter_count = 0;
};

struct NetworkSpec {
  Architecture architecture = Architecture::FCN;
  std::string role = "reconstructor";  // or generator / discriminator
  int n_qubits = 0;
  Method method = Method::M1;
  std::size_t num_bases = 0;
  std::size_t input_dim = 0;
  std::vector<LayerSpec> layers;
  std::size_t parameter_count = 0;
  NetworkOptions options;
};

inline constexpr int kMaxNetworkQubits = 6;

inline std::size_t statistics_width(int n, Method method, std::size_t num_bases) {
  return method == Method::M1 ? num_bases : num_bases * dimension_for(n);
}

namespace detail {

class SpecBuilder {
 public:
  explicit SpecBuilder(NetworkSpec& spec) : spec_(spec) {}

  void dense(std::size_t out, bool bias) {
    LayerSpec l = layer("dense", {out});
    l.in = shape_size(current());
    l.out = out;
    l.bias = bias;
    l.parameter_count = l.in * out + (bias ? out : 0);
    push(std::move(l));
  }
  void leaky_relu() { push(layer("leaky_relu", current())); }
  void reshape(Shape s) {
    if (shape_size(s) != shape_size(current())) shape_mismatch("reshape", current(), s);
    push(layer("reshape", std::move(s)));
  }
  void conv_transpose(std::size_t out_c, std::size_t k, std::size_t stride) {
    const Shape in = current();
    LayerSpec l = layer("conv2d_transpose", {in[0] * stride, in[1] * stride, out_c});
    l.in = in[2];
    l.out = out_c;
    l.kernel = k;
    l.stride = stride;
    l.parameter_count = in[2] * k * k * out_c;
    push(std::move(l));
  }
  void instance_norm() {
    LayerSpec l = layer("instance_norm", current());
    l.in = l.out = current().back();
    l.parameter_count = 2 * l.out;
    push(std::move(l));
  }
  void simple_rnn(std::size_t units, bool sequences) {
    const Shape in = current();
    LayerSpec l = layer("simple_rnn", sequences ? Shape{in[0], units} : Shape{units});
    l.in = in[1];
    l.out = units;
    l.bias = true;
    l.return_sequences = sequences;
    l.parameter_count = l.in * units + units * units + units;
    push(std::move(l));
  }
  void concatenate(std::size_t total) { push(layer("concatenate", {total})); }
  void physical_tail(int n, Method method, std::size_t num_bases) {
    const std::size_t d = dimension_for(n);
    push(layer("density_matrix", {d, d, 2}));
    push(layer("statistics", {statistics_width(n, method, num_bases)}));
  }

 private:
  static LayerSpec layer(std::string kind, Shape shape) {
    LayerSpec l;
    l.kind = std::move(kind);
    l.output_shape = std::move(shape);
    return l;
  }
  Shape current() const { return spec_.layers.empty() ? Shape{spec_.input_dim} : spec_.layers.back().output_shape; }
  void push(LayerSpec l) {
    std::size_t same_kind = 0;
    for (const auto& prev : spec_.layers) same_kind += prev.kind == l.kind;
    l.name = l.kind + "_" + std::to_string(same_kind);
    spec_.parameter_count += l.parameter_count;
    spec_.layers.push_back(std::move(l));
  }
  NetworkSpec& spec_;
};

inline void check_network_args(int n, std::size_t num_bases) {
  if (n < 1 || n > kMaxNetworkQubits) {
    throw ArgumentError("networks support 1 to " + std::to_string(kMaxNetworkQubits) + " qubits, got " +
                        std::to_string(n));
  }
  if (num_bases == 0) throw ArgumentError("empty basis set");
}

}  // namespace detail

/// Layer plan and parameter count without allocating any parameters. For CGAN
/// this describes the generator.
inline NetworkSpec make_network_spec(Architecture arch, int n, Method method, std::size_t num_bases,
                                     const NetworkOptions& options = {}) {
  detail::check_network_args(n, num_bases);
  NetworkSpec spec;
  spec.architecture = arch;
  spec.role = arch == Architecture::CGAN ? "generator" : "reconstructor";
  spec.n_qubits = n;
  spec.method = method;
  spec.num_bases = num_bases;
  spec.input_dim = statistics_width(n, method, num_bases);
  spec.options = options;
  detail::SpecBuilder b(spec);
  const std::size_t d = dimension_for(n), q = d * d;
  const bool first_bias = options.bias == BiasMode::all;
  const bool later_bias = options.bias != BiasMode::none;
  switch (arch) {
    case Architecture::FCN:
      b.dense(q / 2, first_bias);
      b.leaky_relu();
      for (std::size_t w : {q / 2, q, q, 2 * q}) {
        b.dense(w, later_bias);
        b.leaky_relu();
      }
      b.reshape({d, d, 2});
      break;
    case Architecture::CNN:
    case Architecture::CGAN: {
      const auto& ch = options.conv_channels;
      b.dense(q / 2, first_bias);
      b.leaky_relu();
      b.reshape({d / 2, d / 2, 2});
      b.conv_transpose(ch[0], options.kernel, 2);
      b.instance_norm();
      b.leaky_relu();
      b.conv_transpose(ch[1], options.kernel, 1);
      b.instance_norm();
      b.leaky_relu();
      b.conv_transpose(ch[2], options.kernel, 1);
      b.conv_transpose(2, options.kernel, 1);
      break;
    }
    case Architecture::RNN:
      b.reshape({spec.input_dim, 1});
      b.simple_rnn(options.rnn_units, true);
      b.simple_rnn(options.rnn_units, false);
      b.dense(2 * q, later_bias);
      b.reshape({d, d, 2});
      break;
  }
  b.physical_tail(n, method, num_bases);
  return spec;
}

/// Discriminator: concatenated (condition, candidate) statistics through
/// Dense 128/128/64/64 and a one-unit logit head.
inline NetworkSpec make_discriminator_spec(int n, Method method, std::size_t num_bases,
                                           const NetworkOptions& options = {}) {
  detail::check_network_args(n, num_bases);
  NetworkSpec spec;
  spec.architecture = Architecture::CGAN;
  spec.role = "discriminator";
  spec.n_qubits = n;
  spec.method = method;
  spec.num_bases = num_bases;
  spec.input_dim = statistics_width(n, method, num_bases);
  spec.options = options;
  detail::SpecBuilder b(spec);
  const bool bias = options.bias != BiasMode::none;
  b.concatenate(2 * spec.input_dim);
  b.dense(128, bias);
  b.leaky_relu();
  b.dense(128, bias);
  b.leaky_relu();
  b.dense(64, bias);
  b.dense(64, bias);
  b.dense(1, bias);
  spec.layers.back().name = "head";
  return spec;
}

/// Hook that performs every weight-matrix product of a forward pass, e.g. on
/// simulated analog hardware. Computes y = x W for row-major W (in x out).
class MatVecBackend {
 public:
  virtual ~MatVecBackend() = default;
  virtual std::vector<double> multiply(const std::string& weight_name, std::span<const double> weights,
                                       std::size_t in, std::size_t out, std::span<const double> x) = 0;
};

class Network {
 public:
  static constexpr double kReinitOffset = 0.1;

  Network(NetworkSpec spec, std::uint64_t seed) : spec_(std::move(spec)), seed_(seed) {
    for (const auto& l : spec_.layers) {
      std::vector<Tensor> ps;
      auto add = [&](const std::string& suffix, Shape shape) {
        ps.push_back(Tensor::zeros(std::move(shape), true, l.name + "/" + suffix));
      };
      if (l.kind == "dense") {
        add("kernel", {l.in, l.out});
        if (l.bias) add("bias", {1, l.out});
      } else if (l.kind == "conv2d_transpose") {
        add("kernel", {l.in, l.kernel, l.kernel, l.out});
      } else if (l.kind == "instance_norm") {
        add("gamma", {l.out});
        add("beta", {l.out});
      } else if (l.kind == "simple_rnn") {
        add("kernel", {l.in, l.out});
        add("recurrent_kernel", {l.out, l.out});
        add("bias", {1, l.out});
      }
      layer_params_.push_back(std::move(ps));
    }
    for (std::size_t i = 0; i < spec_.layers.size(); ++i) initialize_layer(i, "init", 0);
  }

  const NetworkSpec& spec() const { return spec_; }
  std::uint64_t seed() const { return seed_; }

  std::vector<Tensor> parameters() const {
    std::vector<Tensor> out;
    for (const auto& ps : layer_params_) out.insert(out.end(), ps.begin(), ps.end());
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : parameters()) n += p.size();
    return n;
  }

  /// Runs the trainable stack and returns the pre-physicality output (the
  /// (d, d, 2) raw tensor, or the logit for a discriminator).
  Tensor forward(const std::vector<Tensor>& inputs, MatVecBackend* backend = nullptr) const {
    if (inputs.empty()) throw ShapeError("forward: no inputs");
    Tensor x = inputs[0];
    std::size_t first = 0;
    if (!spec_.layers.empty() && spec_.layers[0].kind == "concatenate") {
      std::vector<Tensor> flat;
      for (const auto& t : inputs) flat.push_back(reshape(t, {t.size()}));
      x = concatenate(flat);
      first = 1;
    }
    if (x.size() != spec_.input_dim && first == 0) {
      detail::shape_mismatch("forward", x.shape(), Shape{spec_.input_dim});
    }
    for (std::size_t i = first; i < spec_.layers.size(); ++i) {
      const LayerSpec& l = spec_.layers[i];
      const auto& ps = layer_params_[i];
      if (l.kind == "density_matrix") break;
      if (l.kind == "dense") {
        x = dense(x, l, ps, backend);
      } else if (l.kind == "leaky_relu") {
        x = leaky_relu(x, spec_.options.leaky_slope);
      } else if (l.kind == "reshape") {
        x = reshape(x, l.output_shape);
      } else if (l.kind == "conv2d_transpose") {
        x = backend ? conv_on_backend(x, l, ps[0], *backend) : conv2d_transpose(x, ps[0], l.stride);
      } else if (l.kind == "instance_norm") {
        x = instance_norm(x, ps[0], ps[1]);
      } else if (l.kind == "simple_rnn") {
        x = rnn(x, l, ps, backend);
      } else {
        throw ShapeError("forward: unexpected layer kind " + l.kind);
      }
    }
    return x;
  }

  Tensor forward(const Tensor& input, MatVecBackend* backend = nullptr) const {
    return forward(std::vector<Tensor>{input}, backend);
  }

  /// forward followed by the density-matrix layer.
  Tensor density(const Tensor& input, MatVecBackend* backend = nullptr) const {
    return density_matrix_layer(forward(input, backend));
  }

  /// Recovery after Tr(T T^dagger) collapsed to ~0: redraws the last weight
  /// layer and gives every bias/beta a small random offset, since a zero
  /// input with zero offsets maps to a zero output whatever the weights.
  void reinitialize_after_degenerate(std::uint64_t attempt) {
    for (std::size_t i = spec_.layers.size(); i-- > 0;) {
      if (!layer_params_[i].empty()) {
        initialize_layer(i, "reinit", attempt);
        break;
      }
    }
    for (auto& p : parameters()) {
      if (!p.name().ends_with("/bias") && !p.name().ends_with("/beta")) continue;
      std::mt19937_64 rng(derive_seed(seed_, "reinit-offset/" + p.name(), attempt));
      std::uniform_real_distribution<double> u(-kReinitOffset, kReinitOffset);
      for (auto& v : p.mutable_values()) v = u(rng);
    }
  }

  nlohmann::json parameters_to_json() const {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& p : parameters()) {
      out.push_back({{"name", p.name()}, {"shape", p.shape()},
                     {"values", std::vector<double>(p.values().begin(), p.values().end())}});
    }
    return out;
  }

  void parameters_from_json(const nlohmann::json& j) {
    auto params = parameters();
    if (!j.is_array() || j.size() != params.size()) {
      throw ParseError("parameter file does not match the network (" + std::to_string(params.size()) +
                       " tensors expected)");
    }
    for (std::size_t k = 0; k < params.size(); ++k) {
      const auto& e = j[k];
      if (e.at("name").get<std::string>() != params[k].name() || e.at("shape").get<Shape>() != params[k].shape()) {
        throw ParseError("parameter " + std::to_string(k) + " does not match " + params[k].name());
      }
      const auto values = e.at("values").get<std::vector<double>>();
      if (values.size() != params[k].size()) throw ParseError("parameter " + params[k].name() + " has wrong length");
      std::copy(values.begin(), values.end(), params[k].mutable_values().begin());
    }
  }

 private:
  void initialize_layer(std::size_t i, const std::string& stream, std::uint64_t index) {
    const LayerSpec& l = spec_.layers[i];
    for (auto& p : layer_params_[i]) {
      auto v = p.mutable_values();
      const std::string& name = p.name();
      const std::string suffix = name.substr(name.find('/') + 1);
      if (suffix == "bias" || suffix == "beta") {
        std::fill(v.begin(), v.end(), 0.0);
        continue;
      }
      if (suffix == "gamma") {
        std::fill(v.begin(), v.end(), 1.0);
        continue;
      }
      if (spec_.role == "discriminator" && l.name == "head") {
        std::fill(v.begin(), v.end(), 0.0);  // D starts at exactly 0.5
        continue;
      }
      double fan_in = 0.0, fan_out = 0.0;
      if (l.kind == "conv2d_transpose") {
        const double area = static_cast<double>(l.kernel * l.kernel);
        fan_in = area * static_cast<double>(l.out);
        fan_out = area * static_cast<double>(l.in);
      } else {
        fan_in = static_cast<double>(p.dim(0));
        fan_out = static_cast<double>(p.dim(1));
      }
      const double limit = std::sqrt(6.0 / (fan_in + fan_out));
      std::mt19937_64 rng(derive_seed(seed_, stream + "/" + name, index));
      std::uniform_real_distribution<double> u(-limit, limit);
      for (auto& w : v) w = u(rng);
    }
  }

  static Tensor dense(const Tensor& x, const LayerSpec& l, const std::vector<Tensor>& ps, MatVecBackend* backend) {
    const Tensor row = reshape(x, {1, l.in});
    Tensor y;
    if (backend) {
      y = Tensor::from_values({1, l.out}, backend->multiply(ps[0].name(), ps[0].values(), l.in, l.out, row.values()));
    } else {
      y = matmul(row, ps[0]);
    }
    return l.bias ? add(y, ps[1]) : y;
  }

  static Tensor conv_on_backend(const Tensor& x, const LayerSpec& l, const Tensor& kernel, MatVecBackend& backend) {
    const ConvGeometry g = conv_transpose_geometry(x.shape(), kernel.shape(), l.stride);
    const std::size_t width = g.kernel * g.kernel * g.out_c;
    std::vector<double> cols;
    cols.reserve(g.in_h * g.in_w * width);
    auto v = x.values();
    for (std::size_t p = 0; p < g.in_h * g.in_w; ++p) {
      auto y = backend.multiply(kernel.name(), kernel.values(), g.in_c, width, v.subspan(p * g.in_c, g.in_c));
      cols.insert(cols.end(), y.begin(), y.end());
    }
    std::vector<double> out(g.out_h() * g.out_w() * g.out_c, 0.0);
    detail::col2im(g, cols.data(), out.data());
    return Tensor::from_values({g.out_h(), g.out_w(), g.out_c}, std::move(out));
  }

  static Tensor rnn(const Tensor& x, const LayerSpec& l, const std::vector<Tensor>& ps, MatVecBackend* backend) {
    const std::size_t steps = x.dim(0);
    Tensor h;
    std::vector<Tensor> seq;
    for (std::size_t t = 0; t < steps; ++t) {
      const Tensor xt = slice_row(x, t);
      if (backend) {
        auto a = backend->multiply(ps[0].name(), ps[0].values(), l.in, l.out, xt.values());
        if (h.defined()) {
          auto r = backend->multiply(ps[1].name(), ps[1].values(), l.out, l.out, h.values());
          for (std::size_t k = 0; k < a.size(); ++k) a[k] += r[k];
        }
        for (std::size_t k = 0; k < a.size(); ++k) a[k] = std::tanh(a[k] + ps[2].values()[k]);
        h = Tensor::from_values({1, l.out}, std::move(a));
      } else {
        h = simple_rnn_cell(xt, h, ps[0], ps[1], ps[2]);
      }
      if (l.return_sequences) seq.push_back(h);
    }
    return l.return_sequences ? concatenate(seq) : reshape(h, {l.out});
  }

  NetworkSpec spec_;
  std::uint64_t seed_;
  std::vector<std::vector<Tensor>> layer_params_;
};

inline Network build_network(Architecture arch, int n, Method method, const BasisSet& bases, std::uint64_t seed,
                             const NetworkOptions& options = {}) {
  if (bases.n_qubits() != n) throw DimensionError("basis set does not match the qubit count");
  return Network(make_network_spec(arch, n, method, bases.size(), options), seed);
}

inline Network build_discriminator(int n, Method method, const BasisSet& bases, std::uint64_t seed,
                                   const NetworkOptions& options = {}) {
  if (bases.n_qubits() != n) throw DimensionError("basis set does not match the qubit count");
  return Network(make_discriminator_spec(n, method, bases.size(), options), derive_seed(seed, "discriminator"));
}

inline nlohmann::json network_spec_to_json(const NetworkSpec& spec) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : spec.layers) {
    nlohmann::json j{{"kind", l.kind}, {"name", l.name}, {"output_shape", l.output_shape},
                     {"parameters", l.parameter_count}};
    if (l.kind == "dense") {
      j["units"] = l.out;
      j["bias"] = l.bias;
    } else if (l.kind == "conv2d_transpose") {
      j["filters"] = l.out;
      j["kernel"] = l.kernel;
      j["stride"] = l.stride;
      j["padding"] = "same";
    } else if (l.kind == "simple_rnn") {
      j["units"] = l.out;
      j["return_sequences"] = l.return_sequences;
    }
    layers.push_back(std::move(j));
  }
  return {{"architecture", to_string(spec.architecture)},
          {"role", spec.role},
          {"n_qubits", spec.n_qubits},
          {"method", to_string(spec.method)},
          {"num_bases", spec.num_bases},
          {"input_dim", spec.input_dim},
          {"parameter_count", spec.parameter_count},
          {"bias_mode", to_string(spec.options.bias)},
          {"leaky_slope", spec.options.leaky_slope},
          {"layers", std::move(layers)}};
}

}  // namespace qstlab::nn
