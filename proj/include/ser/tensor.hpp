// Copyright 2026 The serkit Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Minimal dense-tensor engine with reverse-mode automatic differentiation.
// Everything is single threaded with fixed left-to-right reduction order, so
// forward values are bit-reproducible run to run. The scalar type is a
// template parameter: float for training, double for gradient checking.

#ifndef SERKIT_TENSOR_HPP_
#define SERKIT_TENSOR_HPP_

#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <vector>

#include "ser/common.hpp"

namespace ser::nn {

SERKIT_DEFINE_ERROR(ShapeMismatch);
SERKIT_DEFINE_ERROR(NonFiniteValue);
SERKIT_DEFINE_ERROR(NotScalarLoss);
SERKIT_DEFINE_ERROR(GraphConsumed);

// When enabled, every op verifies its output is finite and throws
// NonFiniteValue otherwise. Off by default; it roughly doubles op cost.
inline std::atomic<bool>& debug_checks_flag() {
  static std::atomic<bool> flag{false};
  return flag;
}
inline void set_debug_checks(bool on) { debug_checks_flag().store(on); }
inline bool debug_checks() { return debug_checks_flag().load(); }

template <typename S>
struct NodeT {
  std::vector<int> shape;
  std::vector<S> value;
  std::vector<S> grad;  // allocated on first use
  bool requires_grad = false;
  bool consumed = false;  // set on a backward root; double backward is an error
  std::vector<std::shared_ptr<NodeT>> parents;
  std::function<void(NodeT&)> backward_fn;

  std::size_t numel() const { return value.size(); }
  void ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), S(0));
  }
};

template <typename S>
class TensorT {
 public:
  TensorT() = default;

  static TensorT leaf(std::vector<int> shape, std::vector<S> data,
                      bool requires_grad = false) {
    check_shape_matches(shape, data.size());
    auto node = std::make_shared<NodeT<S>>();
    node->shape = std::move(shape);
    node->value = std::move(data);
    node->requires_grad = requires_grad;
    return TensorT(std::move(node));
  }

  static TensorT zeros(std::vector<int> shape, bool requires_grad = false) {
    std::size_t n = count(shape);
    return leaf(std::move(shape), std::vector<S>(n, S(0)), requires_grad);
  }

  static TensorT full(std::vector<int> shape, S v) {
    std::size_t n = count(shape);
    return leaf(std::move(shape), std::vector<S>(n, v));
  }

  static TensorT scalar(S v) { return leaf({1}, {v}); }

  // Builds an op node. `backward` receives the output node and must
  // accumulate into its parents' grads; pass nullptr for non-differentiable
  // ops. Exposed so tests can construct custom ops.
  static TensorT make_op(std::vector<int> shape, std::vector<S> value,
                         std::vector<TensorT> inputs,
                         std::function<void(NodeT<S>&)> backward) {
    check_shape_matches(shape, value.size());
    if (debug_checks()) {
      for (S v : value) {
        if (!std::isfinite(static_cast<double>(v))) {
          throw NonFiniteValue("op produced a non-finite value");
        }
      }
    }
    auto node = std::make_shared<NodeT<S>>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    bool needs = false;
    for (const auto& in : inputs) needs = needs || in.requires_grad();
    node->requires_grad = needs;
    if (needs) {
      node->parents.reserve(inputs.size());
      for (const auto& in : inputs) node->parents.push_back(in.node_);
      node->backward_fn = std::move(backward);
    }
    return TensorT(std::move(node));
  }

  bool defined() const { return node_ != nullptr; }
  const std::vector<int>& shape() const { return node_->shape; }
  int dim(int i) const { return node_->shape[i]; }
  int ndim() const { return static_cast<int>(node_->shape.size()); }
  std::size_t numel() const { return node_->numel(); }
  // 2D accessors; scalar/1D tensors are treated as a single row.
  int rows() const { return ndim() == 2 ? dim(0) : 1; }
  int cols() const { return ndim() == 2 ? dim(1) : static_cast<int>(numel()); }

  const std::vector<S>& value() const { return node_->value; }
  std::vector<S>& mutable_value() { return node_->value; }
  S item() const {
    if (numel() != 1) throw ShapeMismatch("item() needs a scalar tensor");
    return node_->value[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  const std::vector<S>& grad() const {
    if (node_->grad.empty()) throw Error("tensor has no gradient");
    return node_->grad;
  }
  std::vector<S>& mutable_grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), S(0));
  }

  std::shared_ptr<NodeT<S>> node() const { return node_; }

 private:
  explicit TensorT(std::shared_ptr<NodeT<S>> node) : node_(std::move(node)) {}

  static std::size_t count(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) {
      if (d <= 0) throw ShapeMismatch("non-positive dimension");
      n *= static_cast<std::size_t>(d);
    }
    return n;
  }
  static void check_shape_matches(const std::vector<int>& shape, std::size_t len) {
    if (count(shape) != len) {
      throw ShapeMismatch("shape does not match data length");
    }
  }

  std::shared_ptr<NodeT<S>> node_;
};

using Tensor = TensorT<float>;
using TensorD = TensorT<double>;

namespace detail {

inline std::string shape_str(const std::vector<int>& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

// c[m*n] += a[m*k] b[k*n]
template <typename S>
void matmul_accum(const S* a, const S* b, S* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const S* arow = a + static_cast<std::size_t>(i) * k;
    S* crow = c + static_cast<std::size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const S av = arow[p];
      const S* brow = b + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// da[m*k] += g[m*n] b[k*n]^T
template <typename S>
void matmul_bt_accum(const S* g, const S* b, S* da, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const S* grow = g + static_cast<std::size_t>(i) * n;
    S* darow = da + static_cast<std::size_t>(i) * k;
    for (int p = 0; p < k; ++p) {
      const S* brow = b + static_cast<std::size_t>(p) * n;
      S acc = S(0);
      for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
      darow[p] += acc;
    }
  }
}

// db[k*n] += a[m*k]^T g[m*n]
template <typename S>
void matmul_at_accum(const S* a, const S* g, S* db, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const S* arow = a + static_cast<std::size_t>(i) * k;
    const S* grow = g + static_cast<std::size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const S av = arow[p];
      S* dbrow = db + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) dbrow[j] += av * grow[j];
    }
  }
}

}  // namespace detail

template <typename S>
TensorT<S> matmul(const TensorT<S>& a, const TensorT<S>& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeMismatch("matmul: " + detail::shape_str(a.shape()) + " x " +
                        detail::shape_str(b.shape()));
  }
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<S> out(static_cast<std::size_t>(m) * n, S(0));
  detail::matmul_accum(a.value().data(), b.value().data(), out.data(), m, k, n);
  return TensorT<S>::make_op(
      {m, n}, std::move(out), {a, b}, [m, k, n](NodeT<S>& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        if (pa.requires_grad) {
          pa.ensure_grad();
          detail::matmul_bt_accum(self.grad.data(), pb.value.data(),
                                  pa.grad.data(), m, k, n);
        }
        if (pb.requires_grad) {
          pb.ensure_grad();
          detail::matmul_at_accum(pa.value.data(), self.grad.data(),
                                  pb.grad.data(), m, k, n);
        }
      });
}

template <typename S>
TensorT<S> add(const TensorT<S>& a, const TensorT<S>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeMismatch("add: " + detail::shape_str(a.shape()) + " vs " +
                        detail::shape_str(b.shape()));
  }
  std::vector<S> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  return TensorT<S>::make_op(a.shape(), std::move(out), {a, b}, [](NodeT<S>& self) {
    for (int p = 0; p < 2; ++p) {
      auto& parent = *self.parents[p];
      if (!parent.requires_grad) continue;
      parent.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) parent.grad[i] += self.grad[i];
    }
  });
}

// out[r, c] = m[r, c] + v[c]
template <typename S>
TensorT<S> add_rowvec(const TensorT<S>& m, const TensorT<S>& v) {
  if (m.ndim() != 2 || static_cast<int>(v.numel()) != m.dim(1)) {
    throw ShapeMismatch("add_rowvec: " + detail::shape_str(m.shape()) + " + " +
                        detail::shape_str(v.shape()));
  }
  const int rows = m.dim(0), cols = m.dim(1);
  std::vector<S> out(m.numel());
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      out[static_cast<std::size_t>(r) * cols + c] =
          m.value()[static_cast<std::size_t>(r) * cols + c] + v.value()[c];
    }
  }
  return TensorT<S>::make_op(
      m.shape(), std::move(out), {m, v}, [rows, cols](NodeT<S>& self) {
        auto& pm = *self.parents[0];
        auto& pv = *self.parents[1];
        if (pm.requires_grad) {
          pm.ensure_grad();
          for (std::size_t i = 0; i < self.grad.size(); ++i) pm.grad[i] += self.grad[i];
        }
        if (pv.requires_grad) {
          pv.ensure_grad();
          for (int r = 0; r < rows; ++r) {
            for (int c = 0; c < cols; ++c) {
              pv.grad[c] += self.grad[static_cast<std::size_t>(r) * cols + c];
            }
          }
        }
      });
}

template <typename S>
TensorT<S> mul(const TensorT<S>& a, const TensorT<S>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeMismatch("mul: " + detail::shape_str(a.shape()) + " vs " +
                        detail::shape_str(b.shape()));
  }
  std::vector<S> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  return TensorT<S>::make_op(a.shape(), std::move(out), {a, b}, [](NodeT<S>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      pa.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        pa.grad[i] += self.grad[i] * pb.value[i];
      }
    }
    if (pb.requires_grad) {
      pb.ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        pb.grad[i] += self.grad[i] * pa.value[i];
      }
    }
  });
}

template <typename S>
TensorT<S> scale(const TensorT<S>& a, S factor) {
  std::vector<S> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * factor;
  return TensorT<S>::make_op(a.shape(), std::move(out), {a}, [factor](NodeT<S>& self) {
    auto& pa = *self.parents[0];
    pa.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      pa.grad[i] += self.grad[i] * factor;
    }
  });
}

// Row-wise softmax over the last axis of a 2D tensor (1D is one row).
template <typename S>
TensorT<S> softmax_lastdim(const TensorT<S>& x) {
  const int rows = x.rows(), cols = x.cols();
  std::vector<S> out(x.numel());
  for (int r = 0; r < rows; ++r) {
    const S* in = x.value().data() + static_cast<std::size_t>(r) * cols;
    S* o = out.data() + static_cast<std::size_t>(r) * cols;
    S mx = in[0];
    for (int c = 1; c < cols; ++c) mx = std::max(mx, in[c]);
    S denom = S(0);
    for (int c = 0; c < cols; ++c) {
      o[c] = std::exp(in[c] - mx);
      denom += o[c];
    }
    for (int c = 0; c < cols; ++c) o[c] /= denom;
  }
  return TensorT<S>::make_op(
      x.shape(), std::move(out), {x}, [rows, cols](NodeT<S>& self) {
        auto& px = *self.parents[0];
        px.ensure_grad();
        for (int r = 0; r < rows; ++r) {
          const S* y = self.value.data() + static_cast<std::size_t>(r) * cols;
          const S* g = self.grad.data() + static_cast<std::size_t>(r) * cols;
          S* dx = px.grad.data() + static_cast<std::size_t>(r) * cols;
          S dot = S(0);
          for (int c = 0; c < cols; ++c) dot += g[c] * y[c];
          for (int c = 0; c < cols; ++c) dx[c] += (g[c] - dot) * y[c];
        }
      });
}

// Layer normalization over the last axis with learnable gain and bias.
// Before gain/bias the output has per-row mean 0 and (biased) variance 1.
template <typename S>
TensorT<S> layer_norm(const TensorT<S>& x, const TensorT<S>& gain,
                      const TensorT<S>& bias, S eps = S(1e-6)) {
  const int rows = x.rows(), cols = x.cols();
  if (static_cast<int>(gain.numel()) != cols || static_cast<int>(bias.numel()) != cols) {
    throw ShapeMismatch("layer_norm: gain/bias must have one entry per column");
  }
  std::vector<S> out(x.numel());
  // xhat and 1/sigma are needed by the backward pass.
  auto xhat = std::make_shared<std::vector<S>>(x.numel());
  auto inv_sigma = std::make_shared<std::vector<S>>(rows);
  for (int r = 0; r < rows; ++r) {
    const S* in = x.value().data() + static_cast<std::size_t>(r) * cols;
    S mean = S(0);
    for (int c = 0; c < cols; ++c) mean += in[c];
    mean /= static_cast<S>(cols);
    S var = S(0);
    for (int c = 0; c < cols; ++c) var += (in[c] - mean) * (in[c] - mean);
    var /= static_cast<S>(cols);
    const S inv = S(1) / std::sqrt(var + eps);
    (*inv_sigma)[r] = inv;
    for (int c = 0; c < cols; ++c) {
      const std::size_t i = static_cast<std::size_t>(r) * cols + c;
      (*xhat)[i] = (in[c] - mean) * inv;
      out[i] = (*xhat)[i] * gain.value()[c] + bias.value()[c];
    }
  }
  return TensorT<S>::make_op(
      x.shape(), std::move(out), {x, gain, bias},
      [rows, cols, xhat, inv_sigma](NodeT<S>& self) {
        auto& px = *self.parents[0];
        auto& pg = *self.parents[1];
        auto& pb = *self.parents[2];
        if (pg.requires_grad) pg.ensure_grad();
        if (pb.requires_grad) pb.ensure_grad();
        if (px.requires_grad) px.ensure_grad();
        for (int r = 0; r < rows; ++r) {
          const std::size_t base = static_cast<std::size_t>(r) * cols;
          const S* g = self.grad.data() + base;
          const S* xh = xhat->data() + base;
          if (pg.requires_grad || pb.requires_grad) {
            for (int c = 0; c < cols; ++c) {
              if (pg.requires_grad) pg.grad[c] += g[c] * xh[c];
              if (pb.requires_grad) pb.grad[c] += g[c];
            }
          }
          if (px.requires_grad) {
            // dxhat = g * gain; dx = inv*(dxhat - mean(dxhat) - xhat*mean(dxhat*xhat))
            S mean_dxh = S(0), mean_dxh_xh = S(0);
            for (int c = 0; c < cols; ++c) {
              const S dxh = g[c] * pg.value[c];
              mean_dxh += dxh;
              mean_dxh_xh += dxh * xh[c];
            }
            mean_dxh /= static_cast<S>(cols);
            mean_dxh_xh /= static_cast<S>(cols);
            const S inv = (*inv_sigma)[r];
            for (int c = 0; c < cols; ++c) {
              const S dxh = g[c] * pg.value[c];
              px.grad[base + c] += inv * (dxh - mean_dxh - xh[c] * mean_dxh_xh);
            }
          }
        }
      });
}

namespace detail {
inline constexpr double kGeluSqrt2OverPi = 0.7978845608028654;
inline constexpr double kGeluCubic = 0.044715;
}  // namespace detail

// GELU, tanh approximation.
template <typename S>
TensorT<S> gelu(const TensorT<S>& x) {
  constexpr double kSqrt2OverPi = detail::kGeluSqrt2OverPi;
  constexpr double kCubic = detail::kGeluCubic;
  std::vector<S> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const S v = x.value()[i];
    const S u = static_cast<S>(kSqrt2OverPi) * (v + static_cast<S>(kCubic) * v * v * v);
    out[i] = S(0.5) * v * (S(1) + std::tanh(u));
  }
  return TensorT<S>::make_op(x.shape(), std::move(out), {x}, [](NodeT<S>& self) {
    constexpr S a = static_cast<S>(detail::kGeluSqrt2OverPi);
    constexpr S b = static_cast<S>(detail::kGeluCubic);
    auto& px = *self.parents[0];
    px.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      const S v = px.value[i];
      const S t = std::tanh(a * (v + b * v * v * v));
      const S du = a * (S(1) + S(3) * b * v * v);
      const S d = S(0.5) * (S(1) + t) + S(0.5) * v * (S(1) - t * t) * du;
      px.grad[i] += self.grad[i] * d;
    }
  });
}

template <typename S>
TensorT<S> reshape(const TensorT<S>& x, std::vector<int> new_shape) {
  std::size_t n = 1;
  for (int d : new_shape) n *= static_cast<std::size_t>(d);
  if (n != x.numel()) throw ShapeMismatch("reshape: element count mismatch");
  std::vector<S> out = x.value();
  return TensorT<S>::make_op(std::move(new_shape), std::move(out), {x},
                             [](NodeT<S>& self) {
                               auto& px = *self.parents[0];
                               px.ensure_grad();
                               for (std::size_t i = 0; i < self.grad.size(); ++i) {
                                 px.grad[i] += self.grad[i];
                               }
                             });
}

template <typename S>
TensorT<S> transpose2d(const TensorT<S>& x) {
  if (x.ndim() != 2) throw ShapeMismatch("transpose2d: need a 2D tensor");
  const int rows = x.dim(0), cols = x.dim(1);
  std::vector<S> out(x.numel());
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      out[static_cast<std::size_t>(c) * rows + r] =
          x.value()[static_cast<std::size_t>(r) * cols + c];
    }
  }
  return TensorT<S>::make_op(
      {cols, rows}, std::move(out), {x}, [rows, cols](NodeT<S>& self) {
        auto& px = *self.parents[0];
        px.ensure_grad();
        for (int r = 0; r < rows; ++r) {
          for (int c = 0; c < cols; ++c) {
            px.grad[static_cast<std::size_t>(r) * cols + c] +=
                self.grad[static_cast<std::size_t>(c) * rows + r];
          }
        }
      });
}

template <typename S>
TensorT<S> slice_rows(const TensorT<S>& x, int start, int n) {
  if (x.ndim() != 2 || start < 0 || n <= 0 || start + n > x.dim(0)) {
    throw ShapeMismatch("slice_rows: range out of bounds");
  }
  const int cols = x.dim(1);
  std::vector<S> out(static_cast<std::size_t>(n) * cols);
  std::copy_n(x.value().begin() + static_cast<std::size_t>(start) * cols, out.size(),
              out.begin());
  return TensorT<S>::make_op(
      {n, cols}, std::move(out), {x}, [start, cols](NodeT<S>& self) {
        auto& px = *self.parents[0];
        px.ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
          px.grad[static_cast<std::size_t>(start) * cols + i] += self.grad[i];
        }
      });
}

template <typename S>
TensorT<S> slice_cols(const TensorT<S>& x, int start, int n) {
  if (x.ndim() != 2 || start < 0 || n <= 0 || start + n > x.dim(1)) {
    throw ShapeMismatch("slice_cols: range out of bounds");
  }
  const int rows = x.dim(0), cols = x.dim(1);
  std::vector<S> out(static_cast<std::size_t>(rows) * n);
  for (int r = 0; r < rows; ++r) {
    std::copy_n(x.value().begin() + static_cast<std::size_t>(r) * cols + start, n,
                out.begin() + static_cast<std::size_t>(r) * n);
  }
  return TensorT<S>::make_op(
      {rows, n}, std::move(out), {x}, [start, rows, cols, n](NodeT<S>& self) {
        auto& px = *self.parents[0];
        px.ensure_grad();
        for (int r = 0; r < rows; ++r) {
          for (int c = 0; c < n; ++c) {
            px.grad[static_cast<std::size_t>(r) * cols + start + c] +=
                self.grad[static_cast<std::size_t>(r) * n + c];
          }
        }
      });
}

template <typename S>
TensorT<S> concat_cols(const std::vector<TensorT<S>>& parts) {
  if (parts.empty()) throw ShapeMismatch("concat_cols: no inputs");
  const int rows = parts[0].rows();
  int total_cols = 0;
  for (const auto& p : parts) {
    if (p.ndim() != 2 || p.dim(0) != rows) {
      throw ShapeMismatch("concat_cols: row count mismatch");
    }
    total_cols += p.dim(1);
  }
  std::vector<S> out(static_cast<std::size_t>(rows) * total_cols);
  std::vector<int> offsets;
  int off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const int pc = p.dim(1);
    for (int r = 0; r < rows; ++r) {
      std::copy_n(p.value().begin() + static_cast<std::size_t>(r) * pc, pc,
                  out.begin() + static_cast<std::size_t>(r) * total_cols + off);
    }
    off += pc;
  }
  return TensorT<S>::make_op(
      {rows, total_cols}, std::move(out), parts,
      [rows, total_cols, offsets](NodeT<S>& self) {
        for (std::size_t p = 0; p < self.parents.size(); ++p) {
          auto& parent = *self.parents[p];
          if (!parent.requires_grad) continue;
          parent.ensure_grad();
          const int pc = parent.shape[1];
          for (int r = 0; r < rows; ++r) {
            for (int c = 0; c < pc; ++c) {
              parent.grad[static_cast<std::size_t>(r) * pc + c] +=
                  self.grad[static_cast<std::size_t>(r) * total_cols + offsets[p] + c];
            }
          }
        }
      });
}

template <typename S>
TensorT<S> concat_rows(const std::vector<TensorT<S>>& parts) {
  if (parts.empty()) throw ShapeMismatch("concat_rows: no inputs");
  const int cols = parts[0].cols();
  int total_rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) throw ShapeMismatch("concat_rows: column count mismatch");
    total_rows += p.rows();
  }
  std::vector<S> out;
  out.reserve(static_cast<std::size_t>(total_rows) * cols);
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    offsets.push_back(out.size());
    out.insert(out.end(), p.value().begin(), p.value().end());
  }
  return TensorT<S>::make_op(
      {total_rows, cols}, std::move(out), parts, [offsets](NodeT<S>& self) {
        for (std::size_t p = 0; p < self.parents.size(); ++p) {
          auto& parent = *self.parents[p];
          if (!parent.requires_grad) continue;
          parent.ensure_grad();
          for (std::size_t i = 0; i < parent.grad.size(); ++i) {
            parent.grad[i] += self.grad[offsets[p] + i];
          }
        }
      });
}

template <typename S>
TensorT<S> sum_all(const TensorT<S>& x) {
  S acc = S(0);
  for (S v : x.value()) acc += v;
  return TensorT<S>::make_op({1}, {acc}, {x}, [](NodeT<S>& self) {
    auto& px = *self.parents[0];
    px.ensure_grad();
    for (std::size_t i = 0; i < px.grad.size(); ++i) px.grad[i] += self.grad[0];
  });
}

template <typename S>
TensorT<S> mean_all(const TensorT<S>& x) {
  S acc = S(0);
  for (S v : x.value()) acc += v;
  const S inv = S(1) / static_cast<S>(x.numel());
  return TensorT<S>::make_op({1}, {acc * inv}, {x}, [inv](NodeT<S>& self) {
    auto& px = *self.parents[0];
    px.ensure_grad();
    for (std::size_t i = 0; i < px.grad.size(); ++i) px.grad[i] += self.grad[0] * inv;
  });
}

// Mean of a list of scalar tensors; the batch-loss reduction.
template <typename S>
TensorT<S> mean_stack(const std::vector<TensorT<S>>& scalars) {
  if (scalars.empty()) throw ShapeMismatch("mean_stack: no inputs");
  S acc = S(0);
  for (const auto& t : scalars) acc += t.item();
  const S inv = S(1) / static_cast<S>(scalars.size());
  return TensorT<S>::make_op({1}, {acc * inv}, scalars, [inv](NodeT<S>& self) {
    for (auto& parent : self.parents) {
      if (!parent->requires_grad) continue;
      parent->ensure_grad();
      parent->grad[0] += self.grad[0] * inv;
    }
  });
}

// Mean cross entropy of logit rows against integer class targets.
// logits: [B x C] (or a single row); targets.size() must equal B.
template <typename S>
TensorT<S> cross_entropy(const TensorT<S>& logits, const std::vector<int>& targets) {
  const int rows = logits.rows(), cols = logits.cols();
  if (static_cast<int>(targets.size()) != rows) {
    throw ShapeMismatch("cross_entropy: one target per logit row");
  }
  for (int t : targets) {
    if (t < 0 || t >= cols) throw ShapeMismatch("cross_entropy: target out of range");
  }
  // Save softmax rows for the backward pass.
  auto probs = std::make_shared<std::vector<S>>(logits.numel());
  S total = S(0);
  for (int r = 0; r < rows; ++r) {
    const S* in = logits.value().data() + static_cast<std::size_t>(r) * cols;
    S* pr = probs->data() + static_cast<std::size_t>(r) * cols;
    S mx = in[0];
    for (int c = 1; c < cols; ++c) mx = std::max(mx, in[c]);
    S denom = S(0);
    for (int c = 0; c < cols; ++c) {
      pr[c] = std::exp(in[c] - mx);
      denom += pr[c];
    }
    for (int c = 0; c < cols; ++c) pr[c] /= denom;
    total += std::log(denom) + mx - in[targets[r]];
  }
  const S inv = S(1) / static_cast<S>(rows);
  return TensorT<S>::make_op(
      {1}, {total * inv}, {logits}, [targets, probs, rows, cols, inv](NodeT<S>& self) {
        auto& pl = *self.parents[0];
        pl.ensure_grad();
        for (int r = 0; r < rows; ++r) {
          const S* pr = probs->data() + static_cast<std::size_t>(r) * cols;
          S* g = pl.grad.data() + static_cast<std::size_t>(r) * cols;
          for (int c = 0; c < cols; ++c) {
            const S onehot = c == targets[r] ? S(1) : S(0);
            g[c] += self.grad[0] * inv * (pr[c] - onehot);
          }
        }
      });
}

// out[r, c] = table[indices[r*cols + c]]; gradients scatter-add back into the
// table in fixed index order. Used for relative position bias.
template <typename S>
TensorT<S> gather_table(const TensorT<S>& table, const std::vector<int>& indices,
                        int rows, int cols) {
  if (table.ndim() != 1) throw ShapeMismatch("gather_table: table must be 1D");
  if (static_cast<std::size_t>(rows) * cols != indices.size()) {
    throw ShapeMismatch("gather_table: index count must be rows*cols");
  }
  const int table_len = static_cast<int>(table.numel());
  for (int idx : indices) {
    if (idx < 0 || idx >= table_len) throw ShapeMismatch("gather_table: index out of range");
  }
  std::vector<S> out(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) out[i] = table.value()[indices[i]];
  return TensorT<S>::make_op(
      {rows, cols}, std::move(out), {table}, [indices](NodeT<S>& self) {
        auto& pt = *self.parents[0];
        pt.ensure_grad();
        for (std::size_t i = 0; i < indices.size(); ++i) {
          pt.grad[indices[i]] += self.grad[i];
        }
      });
}

// Reverse-mode sweep from a scalar loss. Populates grads of every
// requires_grad tensor reachable from `loss`. A root can only be swept once.
template <typename S>
void backward(const TensorT<S>& loss) {
  if (loss.numel() != 1) throw NotScalarLoss("backward needs a scalar loss");
  auto root = loss.node();
  if (root->consumed) throw GraphConsumed("backward was already run on this loss");
  root->consumed = true;
  if (!root->requires_grad) return;

  // Iterative post-order DFS: topological order with each node visited once.
  std::vector<NodeT<S>*> order;
  std::unordered_set<NodeT<S>*> seen;
  std::vector<std::pair<NodeT<S>*, std::size_t>> stack;
  stack.emplace_back(root.get(), 0);
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      NodeT<S>* parent = node->parents[next++].get();
      if (parent->requires_grad && seen.insert(parent).second) {
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->ensure_grad();
  root->grad[0] = S(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    NodeT<S>* node = *it;
    if (node->backward_fn) {
      node->ensure_grad();
      node->backward_fn(*node);
    }
  }
}

// ---------------------------------------------------------------------------
// Gradient checking (64-bit only).

struct GradcheckEntry {
  int index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradcheckReport {
  double max_rel_error = 0.0;
  int n_checked = 0;
  double step = 0.0;
  double tol = 0.0;
  std::vector<GradcheckEntry> failures;  // coordinates exceeding tol

  bool ok() const { return failures.empty(); }
};

// Compares reverse-mode gradients of the scalar function `f` against central
// finite differences, coordinate by coordinate. Relative error is
// |a - n| / max(|a| + |n|, 1e-8).
inline GradcheckReport gradcheck(
    const std::function<TensorD(const TensorD&)>& f, const TensorD& x0,
    double step = 1e-4, double tol = 1e-4) {
  TensorD x = TensorD::leaf(x0.shape(), x0.value(), /*requires_grad=*/true);
  TensorD y = f(x);
  if (y.numel() != 1) throw NotScalarLoss("gradcheck: f must be scalar-valued");
  backward(y);
  const std::vector<double> analytic =
      x.has_grad() ? x.grad() : std::vector<double>(x.numel(), 0.0);

  GradcheckReport report;
  report.step = step;
  report.tol = tol;
  report.n_checked = static_cast<int>(x.numel());
  for (std::size_t i = 0; i < x.numel(); ++i) {
    std::vector<double> bumped = x0.value();
    bumped[i] += step;
    const double f_plus = f(TensorD::leaf(x0.shape(), bumped)).item();
    bumped[i] = x0.value()[i] - step;
    const double f_minus = f(TensorD::leaf(x0.shape(), bumped)).item();
    const double numeric = (f_plus - f_minus) / (2.0 * step);

    const double denom = std::max(std::fabs(analytic[i]) + std::fabs(numeric), 1e-8);
    const double rel = std::fabs(analytic[i] - numeric) / denom;
    report.max_rel_error = std::max(report.max_rel_error, rel);
    if (rel > tol) {
      report.failures.push_back(
          {static_cast<int>(i), analytic[i], numeric, rel});
    }
  }
  return report;
}

}  // namespace ser::nn

#endif  // SERKIT_TENSOR_HPP_
