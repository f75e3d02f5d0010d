// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "hld/autodiff/tensor.hpp"

namespace hld::ad {

enum class OpKind {
  MatMul,
  Add,
  Sub,
  ElementwiseMul,
  Scale,
  AddScalar,
  Sigmoid,
  Tanh,
  Relu,
  Sqrt,
  ConcatLastAxis,
  MeanOverAxis,
  Sum,
  SquaredEuclideanDistance,
  GradReverse,
  BceWithLogits,
  GruSequence,
};

std::string_view to_string(OpKind kind);

/// Receives the gradient of the node's output and accumulates into the
/// gradients of the node's inputs.
using BackwardFn = std::function<void(std::span<const double> grad_out)>;

/// Dynamic reverse-mode tape. Build one per step, call backward() once.
///
/// Nodes are only recorded when some input requires a gradient, so a tape
/// over frozen parameters costs nothing beyond the forward arithmetic.
class Tape {
 public:
  explicit Tape(bool record = true) : record_(record) {}

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Generic dispatch for the argument-free operator kinds.
  Tensor forward_op(OpKind kind, std::span<const Tensor> inputs);

  /// (m,k)x(k,n) -> (m,n) or (m,k)x(k) -> (m).
  Tensor matmul(const Tensor& a, const Tensor& b);
  Tensor add(const Tensor& a, const Tensor& b);
  Tensor sub(const Tensor& a, const Tensor& b);
  Tensor mul(const Tensor& a, const Tensor& b);
  Tensor scale(const Tensor& a, double factor);
  Tensor add_scalar(const Tensor& a, double offset);
  Tensor sigmoid(const Tensor& a);
  Tensor tanh(const Tensor& a);
  Tensor relu(const Tensor& a);
  /// sqrt(max(a, 0)); the backward rule evaluates 0.5 / sqrt(max(a, kSqrtFloor))
  /// so a zero distance yields a finite gradient.
  Tensor sqrt(const Tensor& a);
  Tensor concat(const Tensor& a, const Tensor& b);
  Tensor mean(const Tensor& a, std::size_t axis);
  Tensor sum(const Tensor& a);
  Tensor squared_distance(const Tensor& a, const Tensor& b);
  /// Identity forward, negated gradient backward.
  Tensor grad_reverse(const Tensor& a);
  /// Numerically stable binary cross-entropy on a scalar logit.
  Tensor bce_with_logits(const Tensor& logit, double label);

  /// Records a node computed outside the tape (fused kernels). `out` must be
  /// freshly created; `backward` is invoked only if `out` receives gradient.
  Tensor record(OpKind kind, std::vector<Tensor> inputs, Tensor out, BackwardFn backward);

  /// Seeds d(loss)/d(loss) = 1 and runs every recorded rule in reverse order.
  void backward(const Tensor& loss);

  bool recording() const noexcept { return record_; }
  std::size_t size() const noexcept { return nodes_.size(); }
  std::vector<OpKind> recorded_kinds() const;

  static constexpr double kSqrtFloor = 1e-12;

 private:
  struct Node {
    OpKind kind;
    std::vector<Tensor> inputs;
    Tensor output;
    BackwardFn backward;
  };

  bool needs_grad(std::span<const Tensor> inputs) const;

  bool record_;
  std::vector<Node> nodes_;
};

/// Test hook: while alive, the backward rule of `kind` on this thread
/// receives a sign-flipped upstream gradient.
class ScopedBackwardFault {
 public:
  explicit ScopedBackwardFault(OpKind kind);
  ~ScopedBackwardFault();
  ScopedBackwardFault(const ScopedBackwardFault&) = delete;
  ScopedBackwardFault& operator=(const ScopedBackwardFault&) = delete;

 private:
  const OpKind* previous_;
  OpKind kind_;
};

}  // namespace hld::ad
