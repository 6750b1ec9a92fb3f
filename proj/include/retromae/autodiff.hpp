// Copyright 2026 The retromae-desk Authors
// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode differentiation over a linear tape. Every op records its output
// value and a closure that pushes the output gradient back to its inputs.
// Nodes are appended in creation order, so the tape is topologically sorted by
// construction and backward() is a single reverse sweep.

#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "retromae/tensor.hpp"

namespace retromae::ad {

/// A learnable array with its accumulated gradient.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;

  Parameter() = default;
  Parameter(std::string n, Tensor<T> v)
      : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

  void zero_grad() { grad = Tensor<T>(value.shape()); }
};

template <typename T>
class Tape;

/// Handle to a node on a tape.
template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const Tensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
};

template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor<T>& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(Tensor<T> value);
  /// Leaf bound to a parameter. Its gradient lands in `p.grad` during backward.
  Var<T> param(Parameter<T>& p);
  /// Appends an op output. `requires_grad` is the OR over the op's inputs.
  Var<T> record(Tensor<T> value, bool requires_grad, BackwardFn backward);

  const Tensor<T>& value(std::size_t id) const;
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  /// Gradient buffer for a node, zero-initialized on first use.
  Tensor<T>& grad(std::size_t id);

  /// Sweeps the tape in reverse from a scalar loss. Each node's closure runs at
  /// most once.
  void backward(Var<T> loss);

  std::size_t size() const { return nodes_.size(); }

  /// Number of backward closures run by the last backward(); test hook.
  std::size_t last_backward_visits() const { return last_visits_; }

 private:
  struct Node {
    Tensor<T> owned;
    const Tensor<T>* external = nullptr;
    Tensor<T> grad;
    bool requires_grad = false;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
  std::size_t last_visits_ = 0;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
  return tape->value(id);
}

/// Marker used in additive masks.
template <typename T>
constexpr T kMasked = -std::numeric_limits<T>::infinity();

// Elementwise and structural ops.
template <typename T> Var<T> add(Var<T> a, Var<T> b);
template <typename T> Var<T> scale(Var<T> a, T factor);
template <typename T> Var<T> sum(Var<T> a);
/// x[n x d] + bias[d] broadcast across rows.
template <typename T> Var<T> add_bias(Var<T> x, Var<T> bias);
template <typename T> Var<T> transpose(Var<T> a);
template <typename T> Var<T> reshape(Var<T> a, Shape shape);

// Linear algebra.
template <typename T> Var<T> matmul(Var<T> a, Var<T> b);
/// a[N x m x k] . b[N x k x n] -> [N x m x n]
template <typename T> Var<T> batched_matmul(Var<T> a, Var<T> b);
/// a[N x m x k] . b[N x n x k]^T -> [N x m x n]
template <typename T> Var<T> batched_matmul_bt(Var<T> a, Var<T> b);

// Nonlinearities and normalization.
template <typename T> Var<T> gelu(Var<T> x);
template <typename T> Var<T> layer_norm(Var<T> x, Var<T> gain, Var<T> bias, T eps = T(1e-12));

/// Softmax over the last axis of scores viewed as [N x R x C] after adding an
/// additive mask of 0 / -inf entries. The mask is [R x C] (shared) or
/// [G x R x C] with N divisible by G; slice n uses mask n / (N / G).
/// Masked entries get exactly zero probability. A row with no visible entry
/// throws.
template <typename T> Var<T> masked_softmax(Var<T> scores, const Tensor<T>& mask);

/// Row gather: out[i] = table[ids[i]]. Used for word/position embeddings and
/// for broadcasting per-sequence vectors to positions.
template <typename T> Var<T> gather_rows(Var<T> table, std::vector<std::int32_t> ids);
template <typename T>
inline Var<T> embedding_lookup(Var<T> table, std::vector<std::int32_t> ids) {
  return gather_rows(table, std::move(ids));
}
/// out[i] = use_b[i] ? b[i] : a[i] for two [n x d] inputs.
template <typename T> Var<T> select_rows(Var<T> a, Var<T> b, std::vector<std::uint8_t> use_b);

/// [B*L x H*dh] -> [B*H x L x dh]
template <typename T> Var<T> split_heads(Var<T> x, std::size_t batch, std::size_t heads);
/// [B*H x L x dh] -> [B*L x H*dh]
template <typename T> Var<T> merge_heads(Var<T> x, std::size_t batch, std::size_t heads);

/// Mean negative log-likelihood over rows with weight 1. Rows with weight 0
/// receive no gradient.
template <typename T>
Var<T> cross_entropy(Var<T> logits, const std::vector<std::int32_t>& targets,
                     const std::vector<std::uint8_t>& weights);

}  // namespace retromae::ad
