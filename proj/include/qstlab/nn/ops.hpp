#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "qstlab/nn/tensor.hpp"

namespace qstlab::nn {

inline constexpr double kLeakySlope = 0.2;
inline constexpr double kInstanceNormEpsilon = 1e-3;

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

[[noreturn]] inline void shape_mismatch(const std::string& op, const Shape& a, const Shape& b) {
  throw ShapeError(op + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

inline void require_rank(const std::string& op, const Tensor& t, std::size_t rank) {
  if (t.shape().size() != rank) {
    throw ShapeError(op + ": expected rank-" + std::to_string(rank) + " input, got " + shape_str(t.shape()));
  }
}

inline std::vector<double>* grad_of(Node& n, std::size_t parent) {
  Node& p = *n.parents[parent];
  return p.requires_grad ? &p.grad_buffer() : nullptr;
}

template <class F, class D>
Tensor unary(const Tensor& x, const std::string& op, F f, D dfdx) {
  std::vector<double> out(x.size());
  auto v = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(v[i]);
  return Tensor::make_result(x.shape(), std::move(out), {x}, op, [dfdx](Node& self) {
    auto* g = grad_of(self, 0);
    if (!g) return;
    const auto& in = self.parents[0]->value;
    for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * dfdx(in[i], self.value[i]);
  });
}

}  // namespace detail

// (m, k) x (k, n) -> (m, n)
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_rank("matmul", a, 2);
  detail::require_rank("matmul", b, 2);
  if (a.dim(1) != b.dim(0)) detail::shape_mismatch("matmul", a.shape(), b.shape());
  const auto m = static_cast<Eigen::Index>(a.dim(0)), k = static_cast<Eigen::Index>(a.dim(1)),
             n = static_cast<Eigen::Index>(b.dim(1));
  std::vector<double> out(static_cast<std::size_t>(m * n));
  detail::MapMat(out.data(), m, n).noalias() =
      detail::ConstMapMat(a.values().data(), m, k) * detail::ConstMapMat(b.values().data(), k, n);
  return Tensor::make_result({a.dim(0), b.dim(1)}, std::move(out), {a, b}, "matmul",
                             [m, k, n](detail::Node& self) {
                               detail::ConstMapMat gy(self.grad.data(), m, n);
                               if (auto* ga = detail::grad_of(self, 0)) {
                                 detail::MapMat(ga->data(), m, k).noalias() +=
                                     gy * detail::ConstMapMat(self.parents[1]->value.data(), k, n).transpose();
                               }
                               if (auto* gb = detail::grad_of(self, 1)) {
                                 detail::MapMat(gb->data(), k, n).noalias() +=
                                     detail::ConstMapMat(self.parents[0]->value.data(), m, k).transpose() * gy;
                               }
                             });
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) detail::shape_mismatch("add", a.shape(), b.shape());
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
  return Tensor::make_result(a.shape(), std::move(out), {a, b}, "add", [](detail::Node& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (auto* g = detail::grad_of(self, p)) {
        for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
      }
    }
  });
}

inline Tensor scale(const Tensor& a, double s) {
  return detail::unary(a, "scale", [s](double x) { return s * x; }, [s](double, double) { return s; });
}

inline Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_size(shape) != a.size()) detail::shape_mismatch("reshape", a.shape(), shape);
  std::vector<double> out(a.values().begin(), a.values().end());
  return Tensor::make_result(std::move(shape), std::move(out), {a}, "reshape", [](detail::Node& self) {
    if (auto* g = detail::grad_of(self, 0)) {
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i];
    }
  });
}

// Concatenation along the leading axis; trailing axes must agree.
inline Tensor concatenate(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concatenate: no inputs");
  Shape shape = parts[0].shape();
  std::size_t lead = 0;
  std::vector<double> out;
  for (const auto& p : parts) {
    if (p.shape().size() != shape.size() || !std::equal(p.shape().begin() + 1, p.shape().end(), shape.begin() + 1)) {
      detail::shape_mismatch("concatenate", parts[0].shape(), p.shape());
    }
    lead += p.dim(0);
    out.insert(out.end(), p.values().begin(), p.values().end());
  }
  shape[0] = lead;
  return Tensor::make_result(std::move(shape), std::move(out), parts, "concatenate", [](detail::Node& self) {
    std::size_t offset = 0;
    for (std::size_t p = 0; p < self.parents.size(); ++p) {
      const std::size_t len = self.parents[p]->value.size();
      if (auto* g = detail::grad_of(self, p)) {
        for (std::size_t i = 0; i < len; ++i) (*g)[i] += self.grad[offset + i];
      }
      offset += len;
    }
  });
}

// Row `index` of a rank-2 tensor, returned with shape (1, cols).
inline Tensor slice_row(const Tensor& a, std::size_t index) {
  detail::require_rank("slice_row", a, 2);
  if (index >= a.dim(0)) throw ShapeError("slice_row: row " + std::to_string(index) + " out of " + shape_str(a.shape()));
  const std::size_t cols = a.dim(1);
  std::vector<double> out(a.values().begin() + index * cols, a.values().begin() + (index + 1) * cols);
  return Tensor::make_result({1, cols}, std::move(out), {a}, "slice_row", [index, cols](detail::Node& self) {
    if (auto* g = detail::grad_of(self, 0)) {
      for (std::size_t i = 0; i < cols; ++i) (*g)[index * cols + i] += self.grad[i];
    }
  });
}

inline Tensor leaky_relu(const Tensor& x, double slope = kLeakySlope) {
  return detail::unary(
      x, "leaky_relu", [slope](double v) { return v >= 0.0 ? v : slope * v; },
      [slope](double v, double) { return v >= 0.0 ? 1.0 : slope; });
}

inline Tensor tanh(const Tensor& x) {
  return detail::unary(
      x, "tanh", [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

inline Tensor sigmoid(const Tensor& x) {
  return detail::unary(
      x, "sigmoid", [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
      [](double, double y) { return y * (1.0 - y); });
}

struct ConvGeometry {
  std::size_t in_h, in_w, in_c, kernel, out_c, stride, pad;
  std::size_t out_h() const { return in_h * stride; }
  std::size_t out_w() const { return in_w * stride; }
};

inline ConvGeometry conv_transpose_geometry(const Shape& input, const Shape& kernel, std::size_t stride) {
  if (input.size() != 3 || kernel.size() != 4 || kernel[1] != kernel[2] || kernel[0] != input[2] || stride == 0 ||
      kernel[1] < stride) {
    detail::shape_mismatch("conv2d_transpose", input, kernel);
  }
  return {input[0], input[1], input[2], kernel[1], kernel[3], stride, (kernel[1] - stride) / 2};
}

namespace detail {

// Adds the per-pixel kernel products `cols` (H*W rows of k*k*Cout) into the output image.
inline void col2im(const ConvGeometry& g, const double* cols, double* out) {
  const std::size_t oh = g.out_h(), ow = g.out_w(), k = g.kernel, c = g.out_c;
  for (std::size_t h = 0; h < g.in_h; ++h) {
    for (std::size_t w = 0; w < g.in_w; ++w) {
      const double* row = cols + (h * g.in_w + w) * k * k * c;
      for (std::size_t kh = 0; kh < k; ++kh) {
        const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(h * g.stride + kh) - static_cast<std::ptrdiff_t>(g.pad);
        if (y < 0 || y >= static_cast<std::ptrdiff_t>(oh)) continue;
        for (std::size_t kw = 0; kw < k; ++kw) {
          const std::ptrdiff_t x = static_cast<std::ptrdiff_t>(w * g.stride + kw) - static_cast<std::ptrdiff_t>(g.pad);
          if (x < 0 || x >= static_cast<std::ptrdiff_t>(ow)) continue;
          double* dst = out + (static_cast<std::size_t>(y) * ow + static_cast<std::size_t>(x)) * c;
          const double* src = row + (kh * k + kw) * c;
          for (std::size_t o = 0; o < c; ++o) dst[o] += src[o];
        }
      }
    }
  }
}

// Adjoint of col2im: gathers output-image gradients back into per-pixel columns.
inline void im2col_adjoint(const ConvGeometry& g, const double* gout, double* cols) {
  const std::size_t oh = g.out_h(), ow = g.out_w(), k = g.kernel, c = g.out_c;
  for (std::size_t h = 0; h < g.in_h; ++h) {
    for (std::size_t w = 0; w < g.in_w; ++w) {
      double* row = cols + (h * g.in_w + w) * k * k * c;
      for (std::size_t kh = 0; kh < k; ++kh) {
        const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(h * g.stride + kh) - static_cast<std::ptrdiff_t>(g.pad);
        for (std::size_t kw = 0; kw < k; ++kw) {
          const std::ptrdiff_t x = static_cast<std::ptrdiff_t>(w * g.stride + kw) - static_cast<std::ptrdiff_t>(g.pad);
          double* dst = row + (kh * k + kw) * c;
          if (y < 0 || y >= static_cast<std::ptrdiff_t>(oh) || x < 0 || x >= static_cast<std::ptrdiff_t>(ow)) {
            std::fill(dst, dst + c, 0.0);
            continue;
          }
          const double* src = gout + (static_cast<std::size_t>(y) * ow + static_cast<std::size_t>(x)) * c;
          std::copy(src, src + c, dst);
        }
      }
    }
  }
}

}  // namespace detail

// Transposed convolution with "same" padding: (H, W, Cin) -> (H*s, W*s, Cout).
// The kernel has shape (Cin, k, k, Cout) and no bias.
inline Tensor conv2d_transpose(const Tensor& x, const Tensor& kernel, std::size_t stride) {
  const ConvGeometry g = conv_transpose_geometry(x.shape(), kernel.shape(), stride);
  const auto pixels = static_cast<Eigen::Index>(g.in_h * g.in_w);
  const auto cin = static_cast<Eigen::Index>(g.in_c);
  const auto width = static_cast<Eigen::Index>(g.kernel * g.kernel * g.out_c);
  std::vector<double> cols(static_cast<std::size_t>(pixels * width));
  detail::MapMat(cols.data(), pixels, width).noalias() =
      detail::ConstMapMat(x.values().data(), pixels, cin) * detail::ConstMapMat(kernel.values().data(), cin, width);
  std::vector<double> out(g.out_h() * g.out_w() * g.out_c, 0.0);
  detail::col2im(g, cols.data(), out.data());
  return Tensor::make_result(
      {g.out_h(), g.out_w(), g.out_c}, std::move(out), {x, kernel}, "conv2d_transpose",
      [g, pixels, cin, width](detail::Node& self) {
        std::vector<double> gcols(static_cast<std::size_t>(pixels * width));
        detail::im2col_adjoint(g, self.grad.data(), gcols.data());
        detail::ConstMapMat gc(gcols.data(), pixels, width);
        if (auto* gx = detail::grad_of(self, 0)) {
          detail::MapMat(gx->data(), pixels, cin).noalias() +=
              gc * detail::ConstMapMat(self.parents[1]->value.data(), cin, width).transpose();
        }
        if (auto* gk = detail::grad_of(self, 1)) {
          detail::MapMat(gk->data(), cin, width).noalias() +=
              detail::ConstMapMat(self.parents[0]->value.data(), pixels, cin).transpose() * gc;
        }
      });
}

// Per-channel normalization over the spatial axes of an (H, W, C) tensor,
// followed by the learned affine map gamma * xhat + beta.
inline Tensor instance_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                            double eps = kInstanceNormEpsilon) {
  detail::require_rank("instance_norm", x, 3);
  const std::size_t c = x.dim(2), m = x.dim(0) * x.dim(1);
  if (gamma.size() != c || beta.size() != c) detail::shape_mismatch("instance_norm", x.shape(), gamma.shape());
  auto v = x.values();
  std::vector<double> mean(c, 0.0), inv_std(c, 0.0), xhat(x.size()), out(x.size());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t ch = 0; ch < c; ++ch) mean[ch] += v[i * c + ch];
  for (auto& mu : mean) mu /= static_cast<double>(m);
  std::vector<double> var(c, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double d = v[i * c + ch] - mean[ch];
      var[ch] += d * d;
    }
  for (std::size_t ch = 0; ch < c; ++ch) inv_std[ch] = 1.0 / std::sqrt(var[ch] / static_cast<double>(m) + eps);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t j = i * c + ch;
      xhat[j] = (v[j] - mean[ch]) * inv_std[ch];
      out[j] = gamma.values()[ch] * xhat[j] + beta.values()[ch];
    }
  return Tensor::make_result(
      x.shape(), std::move(out), {x, gamma, beta}, "instance_norm",
      [xhat = std::move(xhat), inv_std = std::move(inv_std), c, m](detail::Node& self) {
        const auto& gy = self.grad;
        const auto& gam = self.parents[1]->value;
        std::vector<double> sum_g(c, 0.0), sum_gx(c, 0.0);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t ch = 0; ch < c; ++ch) {
            sum_g[ch] += gy[i * c + ch];
            sum_gx[ch] += gy[i * c + ch] * xhat[i * c + ch];
          }
        if (auto* gb = detail::grad_of(self, 2))
          for (std::size_t ch = 0; ch < c; ++ch) (*gb)[ch] += sum_g[ch];
        if (auto* gg = detail::grad_of(self, 1))
          for (std::size_t ch = 0; ch < c; ++ch) (*gg)[ch] += sum_gx[ch];
        if (auto* gx = detail::grad_of(self, 0)) {
          const double inv_m = 1.0 / static_cast<double>(m);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t ch = 0; ch < c; ++ch) {
              const std::size_t j = i * c + ch;
              (*gx)[j] += gam[ch] * inv_std[ch] * (gy[j] - inv_m * sum_g[ch] - xhat[j] * inv_m * sum_gx[ch]);
            }
        }
      });
}

// h_t = tanh(x_t Wx + h_{t-1} Wh + b) for row vectors x_t (1, in) and h (1, units).
// An undefined h_prev stands for the zero initial state.
inline Tensor simple_rnn_cell(const Tensor& x, const Tensor& h_prev, const Tensor& wx, const Tensor& wh,
                              const Tensor& b) {
  Tensor pre = add(matmul(x, wx), b);
  if (h_prev.defined()) pre = add(pre, matmul(h_prev, wh));
  return tanh(pre);
}

}  // namespace qstlab::nn
