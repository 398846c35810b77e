#include <gtest/gtest.h>

#include <functional>
#include <random>

#include "gradcheck.hpp"
#include "oracles.hpp"
#include "qstlab/measurement.hpp"
#include "qstlab/nn/adam.hpp"
#include "qstlab/nn/loss.hpp"
#include "qstlab/nn/network.hpp"
#include "qstlab/nn/quantum_layers.hpp"
#include "qstlab/nn/train.hpp"

using namespace qstlab;
using namespace qstlab::nn;
using namespace gradcheck;

namespace {

oracle::Mat random_density(int n, std::uint64_t seed) {
  return to_density(make_mixed_state(MixedKind::random_mixture, n, {.p = 0.5, .rank = std::min(3, 1 << n), .seed = seed})).entries();
}

Tensor density_tensor(const oracle::Mat& rho) {
  const auto d = static_cast<std::size_t>(rho.rows());
  return Tensor::from_values({d, d, 2}, nn::detail::from_complex(rho));
}

}  // namespace

// ---------------------------------------------------------------------------
// Tensor operations

TEST(tensor_ops, leaky_relu_examples) {
  const Tensor y = leaky_relu(Tensor::from_values({2}, {-1.0, 3.0}));
  EXPECT_DOUBLE_EQ(y.values()[0], -0.2);
  EXPECT_DOUBLE_EQ(y.values()[1], 3.0);
}

TEST(tensor_ops, instance_norm_constant_channel) {
  const Tensor x = Tensor::from_values({2, 2, 1}, {5.0, 5.0, 5.0, 5.0});
  const Tensor y = instance_norm(x, Tensor::from_values({1}, {1.7}), Tensor::from_values({1}, {0.0}));
  for (double v : y.values()) EXPECT_EQ(v, 0.0);
  const Tensor shifted = instance_norm(x, Tensor::from_values({1}, {1.7}), Tensor::from_values({1}, {0.25}));
  for (double v : shifted.values()) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(tensor_ops, matmul_gradient_4x3_by_3x2) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    EXPECT_LT(gradient_error([](const auto& in) { return matmul(in[0], in[1]); }, {{4, 3}, {3, 2}}, seed), 1e-5);
  }
}

TEST(tensor_ops, matmul_matches_naive_product) {
  std::mt19937_64 rng(4);
  const auto a = normals(12, rng), b = normals(6, rng);
  const Tensor y = matmul(Tensor::from_values({4, 3}, a), Tensor::from_values({3, 2}, b));
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 2; ++j) {
      double acc = 0.0;
      for (int k = 0; k < 3; ++k) acc += a[i * 3 + k] * b[k * 2 + j];
      EXPECT_NEAR(y.values()[i * 2 + j], acc, 1e-14);
    }
}

TEST(tensor_ops, elementwise_and_structural_gradients) {
  const std::vector<std::pair<const char*, Builder>> cases = {
      {"add", [](const auto& in) { return add(in[0], in[1]); }},
      {"scale", [](const auto& in) { return scale(in[0], -1.5); }},
      {"reshape", [](const auto& in) { return reshape(in[0], {3, 2}); }},
      {"concatenate", [](const auto& in) { return concatenate({in[0], in[1]}); }},
      {"slice_row", [](const auto& in) { return slice_row(in[0], 1); }},
      {"leaky_relu", [](const auto& in) { return leaky_relu(in[0]); }},
      {"tanh", [](const auto& in) { return nn::tanh(in[0]); }},
      {"sigmoid", [](const auto& in) { return sigmoid(in[0]); }},
  };
  for (const auto& [name, f] : cases) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      EXPECT_LT(gradient_error(f, {{2, 3}, {2, 3}}, seed), 1e-4) << name;
    }
  }
}

TEST(tensor_ops, conv2d_transpose_matches_direct_sum) {
  std::mt19937_64 rng(9);
  for (std::size_t stride : {1, 2}) {
    const std::size_t h = 3, w = 2, cin = 2, k = 4, cout = 3, pad = (k - stride) / 2;
    const auto x = normals(h * w * cin, rng), ker = normals(cin * k * k * cout, rng);
    const Tensor y = conv2d_transpose(Tensor::from_values({h, w, cin}, x),
                                      Tensor::from_values({cin, k, k, cout}, ker), stride);
    ASSERT_EQ(y.shape(), (Shape{h * stride, w * stride, cout}));
    for (std::size_t oy = 0; oy < h * stride; ++oy)
      for (std::size_t ox = 0; ox < w * stride; ++ox)
        for (std::size_t o = 0; o < cout; ++o) {
          double acc = 0.0;
          for (std::size_t iy = 0; iy < h; ++iy)
            for (std::size_t ix = 0; ix < w; ++ix)
              for (std::size_t kh = 0; kh < k; ++kh)
                for (std::size_t kw = 0; kw < k; ++kw) {
                  if (iy * stride + kh != oy + pad || ix * stride + kw != ox + pad) continue;
                  for (std::size_t c = 0; c < cin; ++c)
                    acc += x[(iy * w + ix) * cin + c] * ker[((c * k + kh) * k + kw) * cout + o];
                }
          EXPECT_NEAR(y.values()[(oy * w * stride + ox) * cout + o], acc, 1e-12);
        }
  }
}

TEST(tensor_ops, layer_gradients) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    EXPECT_LT(gradient_error([](const auto& in) { return conv2d_transpose(in[0], in[1], 2); },
                             {{2, 3, 2}, {2, 4, 4, 3}}, seed),
              1e-4);
    EXPECT_LT(gradient_error([](const auto& in) { return conv2d_transpose(in[0], in[1], 1); },
                             {{3, 3, 2}, {2, 4, 4, 2}}, seed),
              1e-4);
    EXPECT_LT(gradient_error([](const auto& in) { return instance_norm(in[0], in[1], in[2]); },
                             {{3, 2, 3}, {3}, {3}}, seed),
              1e-4);
    EXPECT_LT(gradient_error([](const auto& in) { return simple_rnn_cell(in[0], in[1], in[2], in[3], in[4]); },
                             {{1, 3}, {1, 4}, {3, 4}, {4, 4}, {1, 4}}, seed),
              1e-4);
  }
}

TEST(tensor_ops, shape_errors_name_the_operation) {
  try {
    matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3}));
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("matmul"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("(2, 3)"), std::string::npos);
  }
  EXPECT_THROW(add(Tensor::zeros({2}), Tensor::zeros({3})), ShapeError);
  EXPECT_THROW(conv2d_transpose(Tensor::zeros({2, 2}), Tensor::zeros({2, 4, 4, 1}), 2), ShapeError);
  EXPECT_THROW(reshape(Tensor::zeros({4}), {3}), ShapeError);
}

TEST(tensor_ops, gradients_accumulate_across_uses) {
  Tensor x = Tensor::from_values({1}, {3.0}, true);
  Tensor y = add(x, x);
  matmul(reshape(y, {1, 1}), Tensor::from_values({1, 1}, {1.0})).backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 2.0);
}

// ---------------------------------------------------------------------------
// Physicality and statistics layers

TEST(density_matrix_layer, identity_gives_maximally_mixed) {
  for (int n = 1; n <= 3; ++n) {
    const auto d = static_cast<Eigen::Index>(dimension_for(n));
    const Tensor rho = density_matrix_layer(density_tensor(oracle::Mat::Identity(d, d)));
    EXPECT_LT((to_density_matrix(rho).entries() - oracle::Mat::Identity(d, d) / static_cast<double>(d)).norm(),
              1e-15);
  }
}

TEST(density_matrix_layer, single_nonzero_row_and_column) {
  std::mt19937_64 rng(2);
  const auto re = normals(4, rng), im = normals(4, rng);
  oracle::Vec v(4);
  for (int i = 0; i < 4; ++i) v(i) = Complex(re[i], im[i]);

  oracle::Mat t = oracle::Mat::Zero(4, 4);
  t.row(0) = v.transpose();
  oracle::Mat expected = oracle::Mat::Zero(4, 4);
  expected(0, 0) = 1.0;
  EXPECT_LT((to_density_matrix(density_matrix_layer(density_tensor(t))).entries() - expected).norm(), 1e-14);

  t = oracle::Mat::Zero(4, 4);
  t.col(0) = v;
  expected = v * v.adjoint() / v.squaredNorm();
  EXPECT_LT((to_density_matrix(density_matrix_layer(density_tensor(t))).entries() - expected).norm(), 1e-14);
}

TEST(density_matrix_layer, physical_for_1000_draws) {
  std::mt19937_64 rng(11);
  for (int n = 1; n <= 3; ++n) {
    const std::size_t d = dimension_for(n);
    for (int draw = 0; draw < 1000; ++draw) {
      const Tensor rho = density_matrix_layer(Tensor::from_values({d, d, 2}, normals(d * d * 2, rng)));
      const auto report = validate_density(to_density_matrix(rho));
      ASSERT_TRUE(report.pass) << "n=" << n << " draw=" << draw;
      ASSERT_LT(report.hermiticity_residual, 1e-10);
      ASSERT_LT(report.trace_residual, 1e-10);
      ASSERT_GT(report.min_eigenvalue, -1e-10);
    }
  }
}

TEST(density_matrix_layer, degenerate_trace) {
  EXPECT_THROW(density_matrix_layer(Tensor::zeros({2, 2, 2})), DegenerateParameterError);
  EXPECT_THROW(density_matrix_layer(Tensor::zeros({3, 3, 2})), ShapeError);
}

TEST(density_matrix_layer, gradient) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    EXPECT_LT(gradient_error([](const auto& in) { return density_matrix_layer(in[0]); }, {{4, 4, 2}}, seed), 1e-4);
  }
}

TEST(statistics_layer, examples) {
  const BasisSet xxx = BasisSet::parse(3, {"XXX"});
  const StatisticsPlan plan(Method::M1, xxx);
  const Tensor ghz = density_tensor(to_density(make_pure_state(PureKind::ghz, 3)).entries());
  EXPECT_NEAR(statistics_layer(ghz, plan).values()[0], 1.0, 1e-12);

  for (int n = 1; n <= 3; ++n) {
    const auto all = filter_nonzero_expectation(make_pure_state(PureKind::random, n, 3),
                                                enumerate_bases(n, Alphabet::full_pauli), 1e-9);
    const auto d = static_cast<Eigen::Index>(dimension_for(n));
    const Tensor mixed = density_tensor(oracle::Mat::Identity(d, d) / static_cast<double>(d));
    const StatisticsPlan plan_all(Method::M1, all);
    const Tensor out = statistics_layer(mixed, plan_all);
    for (double v : out.values()) EXPECT_NEAR(v, 0.0, 1e-15);
  }
}

TEST(statistics_layer, m2_rows_sum_to_one) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto bases = enumerate_bases(3, Alphabet::xyz_only);
    const Tensor out = statistics_layer(density_tensor(random_density(3, seed)), StatisticsPlan(Method::M2, bases));
    ASSERT_EQ(out.size(), 27u * 8u);
    for (std::size_t b = 0; b < 27; ++b) {
      double row = 0.0;
      for (std::size_t a = 0; a < 8; ++a) row += out.values()[b * 8 + a];
      EXPECT_NEAR(row, 1.0, 1e-10);
    }
  }
}

TEST(statistics_layer, agrees_with_quantum_core_and_brute_force) {
  for (int n = 1; n <= 3; ++n) {
    const oracle::Mat rho = random_density(n, 40 + static_cast<std::uint64_t>(n));
    const DensityMatrix dm(rho);
    const Tensor t = density_tensor(rho);

    const auto full = enumerate_bases(n, Alphabet::full_pauli);
    const Tensor m1 = statistics_layer(t, StatisticsPlan(Method::M1, full));
    for (std::size_t s = 0; s < full.size(); ++s) {
      EXPECT_NEAR(m1.values()[s], expectation(dm, full[s]), 1e-10);
      EXPECT_NEAR(m1.values()[s], oracle::expectation(rho, full[s].str()), 1e-10);
    }

    const auto xyz = enumerate_bases(n, Alphabet::xyz_only);
    const Tensor m2 = statistics_layer(t, StatisticsPlan(Method::M2, xyz));
    const std::size_t d = dimension_for(n);
    for (std::size_t s = 0; s < xyz.size(); ++s) {
      const auto core = outcome_probabilities(dm, xyz[s]);
      const auto brute = oracle::probabilities(rho, xyz[s].str());
      for (std::size_t a = 0; a < d; ++a) {
        EXPECT_NEAR(m2.values()[s * d + a], core[a], 1e-10);
        EXPECT_NEAR(m2.values()[s * d + a], brute[a], 1e-10);
      }
    }
  }
}

TEST(statistics_layer, dimension_mismatch) {
  const StatisticsPlan plan(Method::M1, BasisSet::parse(2, {"XX"}));
  EXPECT_THROW(plan.apply(Tensor::zeros({2, 2, 2})), ShapeError);
}

TEST(statistics_layer, gradients_including_end_to_end) {
  const auto m1_bases = enumerate_bases(2, Alphabet::full_pauli);
  const auto m2_bases = BasisSet::parse(2, {"XY", "ZZ", "YI"});
  const StatisticsPlan p1(Method::M1, m1_bases), p2(Method::M2, m2_bases);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    EXPECT_LT(gradient_error([&](const auto& in) { return statistics_layer(in[0], p1); }, {{4, 4, 2}}, seed), 1e-4);
    EXPECT_LT(gradient_error([&](const auto& in) { return statistics_layer(in[0], p2); }, {{4, 4, 2}}, seed), 1e-4);
    for (const StatisticsPlan* p : {&p1, &p2}) {
      std::mt19937_64 rng(seed + 100);
      std::uniform_real_distribution<double> u(0.0, 1.0);
      std::vector<double> target(p->output_size());
      for (auto& v : target) v = u(rng);
      EXPECT_LT(gradient_error(
                    [&](const auto& in) {
                      return mse_loss(statistics_layer(density_matrix_layer(reshape(matmul(in[0], in[1]), {4, 4, 2})), *p),
                                      target);
                    },
                    {{1, 5}, {5, 32}}, seed),
                1e-4);
    }
  }
}

// ---------------------------------------------------------------------------
// Losses

TEST(mse_loss, examples) {
  EXPECT_EQ(mse_loss(Tensor::from_values({2}, {1, 2}), {1, 2}).item(), 0.0);
  EXPECT_DOUBLE_EQ(mse_loss(Tensor::from_values({2}, {0, 0}), {1, 1}).item(), 1.0);
  EXPECT_THROW(mse_loss(Tensor::zeros({2}), {1, 2, 3}), ShapeError);
}

TEST(mse_loss, gradient) {
  std::mt19937_64 rng(5);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto target = normals(7, rng);
    EXPECT_LT(gradient_error([&](const auto& in) { return mse_loss(in[0], target); }, {{7}}, seed), 1e-6);
  }
}

TEST(bce_with_logits, values_and_gradient) {
  const double z = 0.7;
  const double p = 1.0 / (1.0 + std::exp(-z));
  EXPECT_NEAR(bce_with_logits(Tensor::scalar(z), 1.0).item(), -std::log(p), 1e-14);
  EXPECT_NEAR(bce_with_logits(Tensor::scalar(z), 0.0).item(), -std::log(1.0 - p), 1e-14);
  EXPECT_TRUE(std::isfinite(bce_with_logits(Tensor::scalar(800.0), 0.0).item()));
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    EXPECT_LT(gradient_error([](const auto& in) { return bce_with_logits(in[0], 1.0); }, {{1}}, seed), 1e-6);
    EXPECT_LT(gradient_error([](const auto& in) { return bce_with_logits(in[0], 0.0); }, {{1}}, seed), 1e-6);
  }
}

// ---------------------------------------------------------------------------
// Adam

TEST(adam, zero_gradient_leaves_parameters) {
  Tensor w = Tensor::from_values({3}, {1.0, -2.0, 0.5}, true);
  Adam opt({w}, {});
  for (int i = 0; i < 10; ++i) {
    opt.zero_grad();
    opt.step();
  }
  EXPECT_EQ(as_vec(w.values()), (std::vector<double>{1.0, -2.0, 0.5}));
}

TEST(adam, constant_gradient_displacement_approaches_learning_rate) {
  Tensor w = Tensor::from_values({2}, {0.0, 0.0}, true);
  Adam opt({w}, {.learning_rate = 1e-3});
  double prev0 = 0.0, prev1 = 0.0, step0 = 0.0, step1 = 0.0;
  for (int i = 0; i < 5000; ++i) {
    opt.zero_grad();
    w.mutable_grad()[0] = 3.0;
    w.mutable_grad()[1] = -0.01;
    opt.step();
    step0 = w.values()[0] - prev0;
    step1 = w.values()[1] - prev1;
    prev0 = w.values()[0];
    prev1 = w.values()[1];
  }
  EXPECT_NEAR(step0, -1e-3, 1e-8);
  EXPECT_NEAR(step1, 1e-3, 1e-6);
}

TEST(adam, scalar_quadratic_converges) {
  const double target = 0.5;  // reached after 1669 steps from w = 0
  Tensor w = Tensor::from_values({1}, {0.0}, true);
  Adam opt({w}, {.learning_rate = 1e-3});
  int steps = 0;
  while (std::abs(w.values()[0] - target) >= 1e-4 && steps < 2000) {
    opt.zero_grad();
    mse_loss(w, {target}).backward();
    opt.step();
    ++steps;
  }
  EXPECT_LT(std::abs(w.values()[0] - target), 1e-4);
  EXPECT_LE(steps, 2000);
}

TEST(adam, non_finite_gradient_names_parameter) {
  Tensor w = Tensor::from_values({2}, {1.0, 1.0}, true, "dense_3/kernel");
  Adam opt({w}, {});
  w.mutable_grad()[1] = std::nan("");
  try {
    opt.step();
    FAIL();
  } catch (const DivergenceError& e) {
    EXPECT_NE(std::string(e.what()).find("dense_3/kernel"), std::string::npos);
  }
  EXPECT_EQ(as_vec(w.values()), (std::vector<double>{1.0, 1.0}));
}

TEST(adam, rejects_bad_hyperparameters) {
  EXPECT_THROW(Adam({}, {.beta1 = 1.0}), ArgumentError);
  EXPECT_THROW(Adam({}, {.learning_rate = 0.0}), ArgumentError);
}

// ---------------------------------------------------------------------------
// Network builders

namespace {

std::vector<std::size_t> counts_of_kind(const NetworkSpec& spec, const std::string& kind) {
  std::vector<std::size_t> out;
  for (const auto& l : spec.layers)
    if (l.kind == kind) out.push_back(l.parameter_count);
  return out;
}

}  // namespace

TEST(build_network, fcn_table_counts_at_six_qubits) {
  const auto spec = make_network_spec(Architecture::FCN, 6, Method::M1, 4096);
  EXPECT_EQ(counts_of_kind(spec, "dense"),
            (std::vector<std::size_t>{8388608, 4196352, 8392704, 16781312, 33562624}));
  EXPECT_EQ(spec.parameter_count, 8388608u + 4196352u + 8392704u + 16781312u + 33562624u);
}

TEST(build_network, rnn_table_counts_at_six_qubits) {
  const auto spec = make_network_spec(Architecture::RNN, 6, Method::M1, 4096);
  EXPECT_EQ(counts_of_kind(spec, "simple_rnn"), (std::vector<std::size_t>{2600, 5050}));
  EXPECT_EQ(counts_of_kind(spec, "dense"), (std::vector<std::size_t>{417792}));
}

TEST(build_network, cnn_and_cgan_table_counts_at_six_qubits) {
  for (auto arch : {Architecture::CNN, Architecture::CGAN}) {
    const auto spec = make_network_spec(arch, 6, Method::M1, 4096);
    EXPECT_EQ(counts_of_kind(spec, "dense"), (std::vector<std::size_t>{8388608}));
    EXPECT_EQ(counts_of_kind(spec, "conv2d_transpose"), (std::vector<std::size_t>{2048, 65536, 32768, 1024}));
    EXPECT_EQ(counts_of_kind(spec, "instance_norm"), (std::vector<std::size_t>{128, 128}));
    std::vector<Shape> conv_shapes;
    for (const auto& l : spec.layers)
      if (l.kind == "conv2d_transpose") conv_shapes.push_back(l.output_shape);
    EXPECT_EQ(conv_shapes, (std::vector<Shape>{{64, 64, 64}, {64, 64, 64}, {64, 64, 32}, {64, 64, 2}}));
  }
  const auto d = make_discriminator_spec(6, Method::M1, 4096);
  EXPECT_EQ(d.layers[0].output_shape, (Shape{8192}));
  auto dense = counts_of_kind(d, "dense");
  ASSERT_EQ(dense.size(), 5u);
  EXPECT_EQ((std::vector<std::size_t>(dense.begin(), dense.begin() + 4)),
            (std::vector<std::size_t>{1048704, 16512, 8256, 4160}));
  EXPECT_EQ(dense[4], 65u);
}

TEST(build_network, closed_form_counts_for_three_to_six_qubits) {
  for (int n = 3; n <= 6; ++n) {
    const std::size_t q = std::size_t{1} << (2 * n);
    for (Method method : {Method::M1, Method::M2}) {
      const std::size_t bases = 5;
      const std::size_t in = method == Method::M1 ? bases : bases * (std::size_t{1} << n);
      const std::size_t fcn = in * q / 2 + (q / 2 * q / 2 + q / 2) + (q / 2 * q + q) + (q * q + q) + (q * 2 * q + 2 * q);
      const std::size_t cnn = in * q / 2 + 16 * 2 * 64 + 128 + 16 * 64 * 64 + 128 + 16 * 64 * 32 + 16 * 32 * 2;
      const std::size_t rnn = (50 + 2500 + 50) + (2500 + 2500 + 50) + (50 * 2 * q + 2 * q);
      const std::size_t disc = (2 * in * 128 + 128) + (128 * 128 + 128) + (128 * 64 + 64) + (64 * 64 + 64) + 65;
      EXPECT_EQ(make_network_spec(Architecture::FCN, n, method, bases).parameter_count, fcn);
      EXPECT_EQ(make_network_spec(Architecture::CNN, n, method, bases).parameter_count, cnn);
      EXPECT_EQ(make_network_spec(Architecture::CGAN, n, method, bases).parameter_count, cnn);
      EXPECT_EQ(make_network_spec(Architecture::RNN, n, method, bases).parameter_count, rnn);
      EXPECT_EQ(make_discriminator_spec(n, method, bases).parameter_count, disc);
    }
  }
}

TEST(build_network, allocated_parameters_match_spec) {
  for (int n = 1; n <= 4; ++n) {
    const auto bases = enumerate_bases(n, Alphabet::xyz_only);
    for (auto arch : {Architecture::FCN, Architecture::CNN, Architecture::CGAN, Architecture::RNN}) {
      const Network net = build_network(arch, n, Method::M1, bases, 1);
      EXPECT_EQ(net.parameter_count(), net.spec().parameter_count) << to_string(arch) << " n=" << n;
    }
    const Network d = build_discriminator(n, Method::M2, bases, 1);
    EXPECT_EQ(d.parameter_count(), d.spec().parameter_count);
  }
}

TEST(build_network, fcn_three_qubits_seven_bases) {
  const auto spec = make_network_spec(Architecture::FCN, 3, Method::M1, 7);
  EXPECT_EQ(spec.input_dim, 7u);
  EXPECT_EQ(spec.layers[0].in, 7u);
  std::size_t pre = 0;
  for (const auto& l : spec.layers)
    if (l.kind == "dense") pre = l.out;
  EXPECT_EQ(pre, 128u);
  ASSERT_GE(spec.layers.size(), 2u);
  EXPECT_EQ(spec.layers[spec.layers.size() - 2].kind, "density_matrix");
  EXPECT_EQ(spec.layers.back().kind, "statistics");
}

TEST(build_network, every_architecture_ends_with_physical_tail) {
  for (auto arch : {Architecture::FCN, Architecture::CNN, Architecture::CGAN, Architecture::RNN}) {
    for (int n = 1; n <= 6; ++n) {
      const auto spec = make_network_spec(arch, n, Method::M2, 3);
      const std::size_t d = dimension_for(n);
      const auto& l = spec.layers;
      EXPECT_EQ(l[l.size() - 2].kind, "density_matrix");
      EXPECT_EQ(l.back().kind, "statistics");
      EXPECT_EQ(l[l.size() - 3].output_shape, (Shape{d, d, 2}));
      EXPECT_EQ(shape_size(l[l.size() - 3].output_shape), 2 * d * d);
      EXPECT_EQ(l.back().output_shape, (Shape{3 * d}));
    }
  }
}

TEST(build_network, errors) {
  EXPECT_THROW(architecture_from_string("RBM"), UnsupportedError);
  EXPECT_THROW(architecture_from_string("Transformer"), UnsupportedError);
  EXPECT_THROW(architecture_from_string("SVAE"), UnsupportedError);
  EXPECT_THROW(architecture_from_string("MLP"), ParseError);
  EXPECT_THROW(make_network_spec(Architecture::FCN, 7, Method::M1, 3), ArgumentError);
  EXPECT_THROW(make_network_spec(Architecture::FCN, 2, Method::M1, 0), ArgumentError);
}

TEST(build_network, seeded_initialization) {
  const auto bases = BasisSet::parse(2, {"XX", "ZZ"});
  const Network a = build_network(Architecture::FCN, 2, Method::M2, bases, 7);
  const Network b = build_network(Architecture::FCN, 2, Method::M2, bases, 7);
  const Network c = build_network(Architecture::FCN, 2, Method::M2, bases, 8);
  EXPECT_EQ(a.parameters_to_json(), b.parameters_to_json());
  EXPECT_NE(a.parameters_to_json(), c.parameters_to_json());
  for (const auto& p : a.parameters()) {
    const bool bias = p.name().ends_with("/bias");
    for (double v : p.values()) {
      if (bias) {
        EXPECT_EQ(v, 0.0);
      } else {
        const double limit = std::sqrt(6.0 / static_cast<double>(p.dim(0) + p.dim(1)));
        EXPECT_LE(std::abs(v), limit);
      }
    }
  }
}

TEST(build_network, parameter_json_round_trip) {
  const auto bases = BasisSet::parse(2, {"XX", "ZZ"});
  const Network a = build_network(Architecture::CNN, 2, Method::M1, bases, 3);
  Network b = build_network(Architecture::CNN, 2, Method::M1, bases, 4);
  b.parameters_from_json(a.parameters_to_json());
  EXPECT_EQ(a.parameters_to_json(), b.parameters_to_json());
  Network fcn = build_network(Architecture::FCN, 2, Method::M1, bases, 4);
  EXPECT_THROW(fcn.parameters_from_json(a.parameters_to_json()), ParseError);
}

namespace {

class ExactBackend : public MatVecBackend {
 public:
  std::vector<double> multiply(const std::string&, std::span<const double> w, std::size_t in, std::size_t out,
                               std::span<const double> x) override {
    ++calls;
    std::vector<double> y(out, 0.0);
    for (std::size_t i = 0; i < in; ++i)
      for (std::size_t o = 0; o < out; ++o) y[o] += x[i] * w[i * out + o];
    return y;
  }
  std::size_t calls = 0;
};

}  // namespace

TEST(build_network, exact_backend_reproduces_forward) {
  const auto bases = BasisSet::parse(2, {"XX", "ZZ", "XY"});
  std::mt19937_64 rng(3);
  for (auto arch : {Architecture::FCN, Architecture::CNN, Architecture::RNN}) {
    const Network net = build_network(arch, 2, Method::M2, bases, 5);
    const Tensor in = Tensor::from_values({12}, normals(12, rng));
    ExactBackend backend;
    const auto reference = as_vec(net.forward(in).values());
    const auto hooked = as_vec(net.forward(in, &backend).values());
    EXPECT_GT(backend.calls, 0u);
    EXPECT_LT(oracle::relative_error(reference, hooked), 1e-12) << to_string(arch);
  }
}

TEST(build_network, whole_network_gradient) {
  const auto bases = BasisSet::parse(1, {"X", "Z"});
  std::mt19937_64 rng(8);
  const auto input = normals(4, rng);
  std::vector<double> target(4, 0.5);
  for (auto arch : {Architecture::FCN, Architecture::CNN, Architecture::RNN}) {
    NetworkOptions small;
    small.conv_channels = {4, 4, 3};
    small.rnn_units = 5;
    Network net = build_network(arch, 1, Method::M2, bases, 2, small);
    const StatisticsPlan plan(Method::M2, bases);
    const Tensor x = Tensor::from_values({4}, input);
    auto loss_value = [&] { return mse_loss(statistics_layer(net.density(x), plan), target); };
    for (auto& p : net.parameters()) p.zero_grad();
    loss_value().backward();
    for (auto p : net.parameters()) {
      const auto analytic = as_vec(p.grad());
      auto numeric = oracle::numeric_gradient(
          [&](const std::vector<double>& v) {
            const auto saved = as_vec(p.values());
            std::copy(v.begin(), v.end(), p.mutable_values().begin());
            const double l = loss_value().item();
            std::copy(saved.begin(), saved.end(), p.mutable_values().begin());
            return l;
          },
          as_vec(p.values()));
      EXPECT_LT(oracle::relative_error(analytic, numeric), 1e-4) << to_string(arch) << " " << p.name();
    }
  }
}

// ---------------------------------------------------------------------------
// Training

namespace {

TrainConfig quick_config(int iterations, std::uint64_t seed = 1) {
  TrainConfig c;
  c.max_iterations = iterations;
  c.seed = seed;
  return c;
}

}  // namespace

TEST(train_reconstruction, fcn_ghz3_two_bases) {
  const State ghz = make_pure_state(PureKind::ghz, 3);
  const auto bases = BasisSet::parse(3, {"ZZZ", "XXX"});
  const auto data = acquire(Method::M2, ghz, bases);
  Network net = build_network(Architecture::FCN, 3, Method::M2, bases, 1);
  TrainConfig cfg = quick_config(1000);
  const auto trace = train_reconstruction(net, data, &ghz, cfg);
  ASSERT_TRUE(trace.final_state);
  EXPECT_GE(fidelity(ghz, *trace.final_state), 0.99) << trace.stop_reason;
  EXPECT_LE(trace.iterations, 1000);
  for (std::size_t i = 1; i < trace.records.size(); ++i) {
    EXPECT_GT(trace.records[i].iteration, trace.records[i - 1].iteration);
  }
  for (const auto& r : trace.records) {
    EXPECT_GE(r.fidelity, 0.0);
    EXPECT_LE(r.fidelity, 1.0 + 1e-12);
  }
}

TEST(train_reconstruction, identical_seeds_identical_trace) {
  const State ghz = make_pure_state(PureKind::ghz, 2);
  const auto bases = BasisSet::parse(2, {"ZZ", "XX"});
  const auto data = acquire(Method::M2, ghz, bases);
  for (auto arch : {Architecture::FCN, Architecture::CNN, Architecture::RNN}) {
    Network a = build_network(arch, 2, Method::M2, bases, 9);
    Network b = build_network(arch, 2, Method::M2, bases, 9);
    const auto ta = train_reconstruction(a, data, &ghz, quick_config(60));
    const auto tb = train_reconstruction(b, data, &ghz, quick_config(60));
    ASSERT_EQ(ta.records.size(), tb.records.size());
    for (std::size_t i = 0; i < ta.records.size(); ++i) {
      EXPECT_EQ(ta.records[i].iteration, tb.records[i].iteration);
      EXPECT_EQ(ta.records[i].loss, tb.records[i].loss);
      EXPECT_EQ(ta.records[i].fidelity, tb.records[i].fidelity);
    }
    EXPECT_EQ(ta.final_state->entries(), tb.final_state->entries());
    EXPECT_EQ(a.parameters_to_json(), b.parameters_to_json());
  }
}

TEST(train_reconstruction, negative_control_unidentifiable_state) {
  const State mixed = DensityMatrix::maximally_mixed(3);
  const auto bases = BasisSet::parse(3, {"ZZI", "XXX"});
  const auto data = acquire(Method::M1, mixed, bases);
  const State target = make_pure_state(PureKind::random, 3, 77);
  for (auto arch : {Architecture::FCN, Architecture::CNN, Architecture::RNN}) {
    Network net = build_network(arch, 3, Method::M1, bases, 3);
    const auto trace = train_reconstruction(net, data, &target, quick_config(1500));
    EXPECT_LT(trace.final_loss, 1e-6) << to_string(arch);
    EXPECT_LT(fidelity(target, *trace.final_state), 0.9) << to_string(arch);
  }
}

TEST(train_reconstruction, soft_monotone_loss) {
  const State ghz = make_pure_state(PureKind::ghz, 3);
  const auto bases = BasisSet::parse(3, {"ZZZ", "XXX"});
  const auto data = acquire(Method::M2, ghz, bases);
  int monotone = 0;
  const int runs = 20;
  for (int seed = 0; seed < runs; ++seed) {
    Network net = build_network(Architecture::FCN, 3, Method::M2, bases, static_cast<std::uint64_t>(seed));
    TrainConfig cfg = quick_config(600, static_cast<std::uint64_t>(seed));
    cfg.fidelity_eval_every = 1;
    const auto trace = train_reconstruction(net, data, nullptr, cfg);
    bool ok = true;
    for (std::size_t i = 0; i + 200 < trace.records.size(); ++i) {
      ok = ok && trace.records[i + 200].loss <= trace.records[i].loss;
    }
    monotone += ok;
  }
  EXPECT_GE(monotone, static_cast<int>(std::ceil(0.95 * runs)));
}

TEST(train_reconstruction, recovers_from_degenerate_output) {
  const State ghz = make_pure_state(PureKind::ghz, 2);
  const auto bases = BasisSet::parse(2, {"ZZ", "XX"});
  const auto data = acquire(Method::M2, ghz, bases);
  Network net = build_network(Architecture::FCN, 2, Method::M2, bases, 1);
  for (auto p : net.parameters()) std::fill(p.mutable_values().begin(), p.mutable_values().end(), 0.0);
  const auto trace = train_reconstruction(net, data, &ghz, quick_config(20));
  EXPECT_GE(trace.reinitializations, 1);
  EXPECT_EQ(trace.iterations, 20);
}

TEST(train_reconstruction, method_mismatch) {
  const State ghz = make_pure_state(PureKind::ghz, 2);
  const auto bases = BasisSet::parse(2, {"ZZ"});
  Network net = build_network(Architecture::FCN, 2, Method::M2, bases, 1);
  EXPECT_THROW(train_reconstruction(net, acquire(Method::M1, ghz, bases), nullptr, quick_config(5)), ArgumentError);
}

TEST(train_cgan, balanced_discriminator_at_start) {
  const State ghz = make_pure_state(PureKind::ghz, 3);
  const auto bases = filter_nonzero_expectation(ghz, enumerate_bases(3, Alphabet::full_pauli), 1e-9);
  const auto data = acquire(Method::M1, ghz, bases);
  const Network g = build_network(Architecture::CGAN, 3, Method::M1, bases, 1);
  const Network d = build_discriminator(3, Method::M1, bases, 1);
  const auto cond = data.training_targets();
  const StatisticsPlan plan(Method::M1, bases);
  const auto fake = as_vec(statistics_layer(g.density(Tensor::from_values({cond.size()}, cond)), plan).values());
  EXPECT_NEAR(discriminator_probability(d, cond, cond), 0.5, 1e-12);
  EXPECT_NEAR(discriminator_probability(d, cond, fake), 0.5, 1e-12);
}

TEST(train_cgan, ghz3_m1_nonzero_bases) {
  const State ghz = make_pure_state(PureKind::ghz, 3);
  const auto bases = filter_nonzero_expectation(ghz, enumerate_bases(3, Alphabet::full_pauli), 1e-9);
  ASSERT_EQ(bases.size(), 7u);
  const auto data = acquire(Method::M1, ghz, bases);
  Network g = build_network(Architecture::CGAN, 3, Method::M1, bases, 1);
  Network d = build_discriminator(3, Method::M1, bases, 1);
  TrainConfig cfg = quick_config(2000);
  cfg.target_fidelity = 0.99;
  const auto trace = train_cgan(g, d, data, &ghz, cfg);
  ASSERT_TRUE(trace.final_state);
  EXPECT_GE(fidelity(ghz, *trace.final_state), 0.99) << trace.stop_reason << " after " << trace.iterations;
}

TEST(train_cgan, zero_lambda_stays_finite) {
  const State ghz = make_pure_state(PureKind::ghz, 2);
  const auto bases = filter_nonzero_expectation(ghz, enumerate_bases(2, Alphabet::full_pauli), 1e-9);
  const auto data = acquire(Method::M1, ghz, bases);
  Network g = build_network(Architecture::CGAN, 2, Method::M1, bases, 2);
  Network d = build_discriminator(2, Method::M1, bases, 2);
  TrainConfig cfg = quick_config(500);
  cfg.lambda_mse = 0.0;
  cfg.patience = 1000;
  cfg.loss_threshold = 0.0;
  const auto trace = train_cgan(g, d, data, &ghz, cfg);
  EXPECT_EQ(trace.iterations, 500) << trace.stop_reason;
  EXPECT_NE(trace.stop_reason, "diverged");
  for (const auto& r : trace.records) EXPECT_TRUE(std::isfinite(r.loss));
}
