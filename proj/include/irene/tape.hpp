// Copyright 2026 The irene-lab Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdint>
#include <deque>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "irene/tensor.hpp"

namespace irene {

/// A trainable tensor together with its gradient buffer and freeze state.
///
/// `grad` stays empty until backward touches the parameter, so a frozen
/// parameter never gets a gradient entry. `frozen_cols` freezes individual
/// input columns of a weight matrix; their gradient entries are forced to zero.
template <class T>
struct Param {
  std::string name;
  Tensor2<T> value;
  Tensor2<T> grad;
  bool frozen = false;
  std::vector<std::uint8_t> frozen_cols;

  Param() = default;
  Param(std::string n, Tensor2<T> v) : name(std::move(n)), value(std::move(v)) {}

  bool has_grad() const { return !grad.empty(); }
  void zero_grad() { grad = Tensor2<T>(); }

  /// Number of entries an optimizer may change.
  std::size_t trainable_count() const {
    if (frozen) return 0;
    if (frozen_cols.empty()) return value.size();
    auto free_cols = static_cast<std::size_t>(std::count(frozen_cols.begin(), frozen_cols.end(), 0));
    return free_cols * value.rows();
  }
};

/// Fixed-menu reverse-mode tape. Every op takes whole batches (rows = samples).
///
/// Ops are appended in execution order; backward walks them in exact reverse
/// order and accumulates gradients additively into leaves and parameters.
template <class T>
class GradTape {
 public:
  using Var = std::size_t;

  struct Seed {
    Var var;
    const Tensor2<T>* grad;
  };

  Var leaf(Tensor2<T> value, bool requires_grad = false) {
    Node n;
    n.op = Op::Leaf;
    n.requires_grad = requires_grad;
    n.value = std::move(value);
    return push(std::move(n));
  }

  /// x · Wᵀ with W stored out×in.
  Var matmul(Var x, Param<T>& weight) {
    const auto& xv = value(x);
    if (xv.cols() != weight.value.cols()) {
      throw DimensionError("tape matmul: input width " + std::to_string(xv.cols()) +
                           " != weight cols " + std::to_string(weight.value.cols()) + " (" +
                           weight.name + ")");
    }
    Node n;
    n.op = Op::MatMul;
    n.a = x;
    n.param = &weight;
    n.requires_grad = nodes_[x].requires_grad || !weight.frozen;
    n.value = matmul_nt(xv, weight.value);
    return push(std::move(n));
  }

  Var add_bias(Var x, Param<T>& bias) {
    const auto& xv = value(x);
    if (bias.value.size() != xv.cols()) {
      throw DimensionError("tape add_bias: bias length mismatch (" + bias.name + ")");
    }
    Node n;
    n.op = Op::AddBias;
    n.a = x;
    n.param = &bias;
    n.requires_grad = nodes_[x].requires_grad || !bias.frozen;
    n.value = xv;
    as_eigen(n.value).rowwise() +=
        as_row(bias.value.data(), xv.cols());
    return push(std::move(n));
  }

  Var relu(Var x) {
    Node n = unary(Op::Relu, x);
    for (auto& v : n.value.storage()) v = v > T(0) ? v : T(0);
    return push(std::move(n));
  }

  Var sigmoid(Var x) {
    Node n = unary(Op::Sigmoid, x);
    for (auto& v : n.value.storage()) v = irene::sigmoid(v);
    return push(std::move(n));
  }

  /// exp(clamp(x, lo, hi)); gradient is zero where the clamp is active.
  Var exp_clamped(Var x, T lo, T hi) {
    Node n = unary(Op::ExpClamp, x);
    n.lo = lo;
    n.hi = hi;
    for (auto& v : n.value.storage()) v = std::exp(std::clamp(v, lo, hi));
    return push(std::move(n));
  }

  /// Column-wise concatenation [a | b].
  Var concat(Var a, Var b) {
    const auto& av = value(a);
    const auto& bv = value(b);
    if (av.rows() != bv.rows()) throw DimensionError("tape concat: row mismatch");
    Node n;
    n.op = Op::Concat;
    n.a = a;
    n.b = b;
    n.requires_grad = nodes_[a].requires_grad || nodes_[b].requires_grad;
    n.value = Tensor2<T>(av.rows(), av.cols() + bv.cols());
    as_eigen(n.value).leftCols(av.cols()) = as_eigen(av);
    as_eigen(n.value).rightCols(bv.cols()) = as_eigen(bv);
    return push(std::move(n));
  }

  /// Columns [c0, c1).
  Var slice(Var x, std::size_t c0, std::size_t c1) {
    const auto& xv = value(x);
    if (c0 >= c1 || c1 > xv.cols()) throw DimensionError("tape slice: bad column range");
    Node n;
    n.op = Op::Slice;
    n.a = x;
    n.c0 = c0;
    n.requires_grad = nodes_[x].requires_grad;
    n.value = Tensor2<T>(xv.rows(), c1 - c0);
    as_eigen(n.value) = as_eigen(xv).middleCols(static_cast<Eigen::Index>(c0),
                                                static_cast<Eigen::Index>(c1 - c0));
    return push(std::move(n));
  }

  Var gather_rows(Var x, std::vector<std::uint32_t> rows) {
    const auto& xv = value(x);
    Node n;
    n.op = Op::GatherRows;
    n.a = x;
    n.requires_grad = nodes_[x].requires_grad;
    n.value = Tensor2<T>(rows.size(), xv.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i] >= xv.rows()) throw DimensionError("tape gather_rows: index out of range");
      std::copy_n(xv.row(rows[i]).data(), xv.cols(), n.value.row(i).data());
    }
    n.index = std::move(rows);
    return push(std::move(n));
  }

  /// Per-row weighted sum base + alpha·(edit − base); alpha is N×1.
  Var lerp(Var base, Var edit, Var alpha) {
    const auto& bv = value(base);
    const auto& ev = value(edit);
    const auto& av = value(alpha);
    if (bv.rows() != ev.rows() || bv.cols() != ev.cols() || av.rows() != bv.rows() ||
        av.cols() != 1) {
      throw DimensionError("tape lerp: shape mismatch");
    }
    Node n;
    n.op = Op::Lerp;
    n.a = base;
    n.b = edit;
    n.c = alpha;
    n.requires_grad =
        nodes_[base].requires_grad || nodes_[edit].requires_grad || nodes_[alpha].requires_grad;
    n.value = Tensor2<T>(bv.rows(), bv.cols());
    for (std::size_t r = 0; r < bv.rows(); ++r)
      for (std::size_t c = 0; c < bv.cols(); ++c)
        n.value(r, c) = std::lerp(bv(r, c), ev(r, c), av(r, 0));
    return push(std::move(n));
  }

  const Tensor2<T>& value(Var v) const {
    if (v >= nodes_.size()) throw UsageError("tape: unknown variable");
    return nodes_[v].value;
  }

  /// Gradient accumulated on `v` by the last backward; empty if none reached it.
  const Tensor2<T>& grad(Var v) const {
    if (v >= grads_.size()) throw UsageError("tape: no gradient recorded");
    return grads_[v];
  }

  std::size_t size() const { return nodes_.size(); }

  void clear() {
    nodes_.clear();
    grads_.clear();
  }

  void backward(Var out, const Tensor2<T>& seed) {
    Seed s{out, &seed};
    backward(std::span<const Seed>(&s, 1));
  }

  void backward(std::span<const Seed> seeds) {
    if (nodes_.empty()) throw UsageError("backward on an empty tape");
    grads_.assign(nodes_.size(), Tensor2<T>());
    for (const auto& s : seeds) {
      const auto& v = value(s.var);
      if (s.grad->rows() != v.rows() || s.grad->cols() != v.cols()) {
        throw DimensionError("backward: seed shape does not match output");
      }
      accumulate(s.var, *s.grad);
    }
    for (std::size_t i = nodes_.size(); i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad || grads_[i].empty() || n.op == Op::Leaf) continue;
      backward_node(n, grads_[i]);
    }
  }

 private:
  enum class Op { Leaf, MatMul, AddBias, Relu, Sigmoid, ExpClamp, Concat, Slice, GatherRows, Lerp };

  struct Node {
    Op op = Op::Leaf;
    Var a = 0, b = 0, c = 0;
    Param<T>* param = nullptr;
    T lo = T(0), hi = T(0);
    std::size_t c0 = 0;
    std::vector<std::uint32_t> index;
    Tensor2<T> value;
    bool requires_grad = false;
  };

  Var push(Node n) {
    nodes_.push_back(std::move(n));
    return nodes_.size() - 1;
  }

  Node unary(Op op, Var x) {
    Node n;
    n.op = op;
    n.a = x;
    n.requires_grad = nodes_[x].requires_grad;
    n.value = value(x);
    return n;
  }

  void accumulate(Var v, const Tensor2<T>& g) {
    if (!nodes_[v].requires_grad) return;
    if (grads_[v].empty()) {
      grads_[v] = g;
    } else {
      as_eigen(grads_[v]) += as_eigen(g);
    }
  }

  static void accumulate_param(Param<T>& p, const Tensor2<T>& g) {
    if (p.frozen) return;
    if (p.grad.empty()) p.grad = Tensor2<T>(p.value.rows(), p.value.cols());
    as_eigen(p.grad) += as_eigen(g);
    if (!p.frozen_cols.empty()) {
      for (std::size_t r = 0; r < p.grad.rows(); ++r)
        for (std::size_t c = 0; c < p.grad.cols(); ++c)
          if (p.frozen_cols[c]) p.grad(r, c) = T(0);
    }
  }

  void backward_node(const Node& n, const Tensor2<T>& g) {
    switch (n.op) {
      case Op::Leaf:
        break;
      case Op::MatMul: {
        if (!n.param->frozen) {
          Tensor2<T> gw(n.param->value.rows(), n.param->value.cols());
          as_eigen(gw).noalias() = as_eigen(g).transpose() * as_eigen(value(n.a));
          accumulate_param(*n.param, gw);
        }
        if (nodes_[n.a].requires_grad) accumulate(n.a, irene::matmul(g, n.param->value));
        break;
      }
      case Op::AddBias: {
        if (!n.param->frozen) {
          Tensor2<T> gb(n.param->value.rows(), n.param->value.cols());
          auto sums = as_eigen(g).colwise().sum();
          for (std::size_t c = 0; c < gb.size(); ++c) gb.data()[c] = sums(static_cast<Eigen::Index>(c));
          accumulate_param(*n.param, gb);
        }
        accumulate(n.a, g);
        break;
      }
      case Op::Relu: {
        Tensor2<T> gx = g;
        const auto& y = n.value;
        for (std::size_t i = 0; i < gx.size(); ++i)
          if (!(y.data()[i] > T(0))) gx.data()[i] = T(0);
        accumulate(n.a, gx);
        break;
      }
      case Op::Sigmoid: {
        Tensor2<T> gx = g;
        const auto& y = n.value;
        for (std::size_t i = 0; i < gx.size(); ++i) gx.data()[i] *= y.data()[i] * (T(1) - y.data()[i]);
        accumulate(n.a, gx);
        break;
      }
      case Op::ExpClamp: {
        Tensor2<T> gx = g;
        const auto& x = value(n.a);
        const auto& y = n.value;
        for (std::size_t i = 0; i < gx.size(); ++i) {
          const T xi = x.data()[i];
          gx.data()[i] = (xi < n.lo || xi > n.hi) ? T(0) : gx.data()[i] * y.data()[i];
        }
        accumulate(n.a, gx);
        break;
      }
      case Op::Concat: {
        const auto ca = value(n.a).cols();
        const auto cb = value(n.b).cols();
        if (nodes_[n.a].requires_grad) {
          Tensor2<T> ga(g.rows(), ca);
          as_eigen(ga) = as_eigen(g).leftCols(ca);
          accumulate(n.a, ga);
        }
        if (nodes_[n.b].requires_grad) {
          Tensor2<T> gb(g.rows(), cb);
          as_eigen(gb) = as_eigen(g).rightCols(cb);
          accumulate(n.b, gb);
        }
        break;
      }
      case Op::Slice: {
        const auto& x = value(n.a);
        Tensor2<T> gx(x.rows(), x.cols());
        as_eigen(gx).middleCols(static_cast<Eigen::Index>(n.c0), static_cast<Eigen::Index>(g.cols())) =
            as_eigen(g);
        accumulate(n.a, gx);
        break;
      }
      case Op::GatherRows: {
        const auto& x = value(n.a);
        Tensor2<T> gx(x.rows(), x.cols());
        for (std::size_t i = 0; i < n.index.size(); ++i) {
          auto dst = gx.row(n.index[i]);
          auto src = g.row(i);
          for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += src[c];
        }
        accumulate(n.a, gx);
        break;
      }
      case Op::Lerp: {
        const auto& bv = value(n.a);
        const auto& ev = value(n.b);
        const auto& av = value(n.c);
        Tensor2<T> gb(bv.rows(), bv.cols()), ge(bv.rows(), bv.cols()), ga(bv.rows(), 1);
        for (std::size_t r = 0; r < bv.rows(); ++r) {
          const T alpha = av(r, 0);
          T acc = T(0);
          for (std::size_t c = 0; c < bv.cols(); ++c) {
            gb(r, c) = g(r, c) * (T(1) - alpha);
            ge(r, c) = g(r, c) * alpha;
            acc += g(r, c) * (ev(r, c) - bv(r, c));
          }
          ga(r, 0) = acc;
        }
        accumulate(n.a, gb);
        accumulate(n.b, ge);
        accumulate(n.c, ga);
        break;
      }
    }
  }

  std::deque<Node> nodes_;  // deque: value() references stay valid while recording
  std::vector<Tensor2<T>> grads_;
};

}  // namespace irene
