#pragma once

#include <cmath>
#include <vector>

#include "qstlab/nn/ops.hpp"

namespace qstlab::nn {

// (1/n) sum (pred - target)^2
inline Tensor mse_loss(const Tensor& pred, const std::vector<double>& target) {
  if (pred.size() != target.size()) {
    detail::shape_mismatch("mse_loss", pred.shape(), Shape{target.size()});
  }
  const double n = static_cast<double>(target.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i) {
    const double d = pred.values()[i] - target[i];
    acc += d * d;
  }
  return Tensor::make_result({1}, {acc / n}, {pred}, "mse", [target, n](detail::Node& self) {
    if (auto* g = detail::grad_of(self, 0)) {
      const auto& p = self.parents[0]->value;
      for (std::size_t i = 0; i < target.size(); ++i) (*g)[i] += self.grad[0] * 2.0 * (p[i] - target[i]) / n;
    }
  });
}

// Binary cross-entropy of sigmoid(logit) against a 0/1 label, computed stably.
inline Tensor bce_with_logits(const Tensor& logit, double label) {
  if (logit.size() != 1) detail::shape_mismatch("bce_with_logits", logit.shape(), Shape{1});
  const double z = logit.item();
  const double loss = std::max(z, 0.0) - z * label + std::log1p(std::exp(-std::abs(z)));
  return Tensor::make_result({1}, {loss}, {logit}, "bce", [z, label](detail::Node& self) {
    if (auto* g = detail::grad_of(self, 0)) (*g)[0] += self.grad[0] * (1.0 / (1.0 + std::exp(-z)) - label);
  });
}

}  // namespace qstlab::nn
