#pragma once

// Central-difference gradient checks shared by the unit and acceptance tests.

#include <functional>
#include <random>
#include <span>
#include <vector>

#include "oracles.hpp"
#include "qstlab/nn/ops.hpp"

namespace gradcheck {

using qstlab::nn::Shape;
using qstlab::nn::Tensor;

inline std::vector<double> normals(std::size_t n, std::mt19937_64& rng, double sd = 1.0) {
  std::normal_distribution<double> d(0.0, sd);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

inline std::vector<double> as_vec(std::span<const double> s) { return {s.begin(), s.end()}; }

using Builder = std::function<Tensor(const std::vector<Tensor>&)>;

// Largest relative error between backprop and central differences, over every
// input, for the scalar L = sum_i w_i f(x)_i with random fixed weights w.
inline double gradient_error(const Builder& f, const std::vector<Shape>& shapes, std::uint64_t seed,
                      std::vector<std::vector<double>> values = {}) {
  std::mt19937_64 rng(seed);
  if (values.empty()) {
    for (const auto& s : shapes) values.push_back(normals(qstlab::nn::shape_size(s), rng));
  }
  auto leaves = [&](const std::vector<std::vector<double>>& vals, bool grad) {
    std::vector<Tensor> out;
    for (std::size_t k = 0; k < shapes.size(); ++k) out.push_back(Tensor::from_values(shapes[k], vals[k], grad));
    return out;
  };
  const auto probe = leaves(values, false);
  const auto weights = normals(f(probe).size(), rng);
  auto scalar = [&](const Tensor& y) {
    double acc = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) acc += weights[i] * y.values()[i];
    return acc;
  };

  auto params = leaves(values, true);
  Tensor y = f(params);
  Tensor w = Tensor::from_values({y.size(), 1}, weights);
  Tensor loss = qstlab::nn::matmul(qstlab::nn::reshape(y, {1, y.size()}), w);
  loss.backward();

  double worst = 0.0;
  for (std::size_t k = 0; k < shapes.size(); ++k) {
    auto numeric = oracle::numeric_gradient(
        [&](const std::vector<double>& x) {
          auto vals = values;
          vals[k] = x;
          return scalar(f(leaves(vals, false)));
        },
        values[k]);
    worst = std::max(worst, oracle::relative_error(as_vec(params[k].grad()), numeric));
  }
  return worst;
}

}  // namespace gradcheck
