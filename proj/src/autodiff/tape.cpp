// SPDX-License-Identifier: Apache-2.0
#include "hld/autodiff/tape.hpp"

#include <algorithm>
#include <cmath>

#include "hld/util/error.hpp"

namespace hld::ad {
namespace {

thread_local const OpKind* g_fault = nullptr;

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw Error(ErrorCode::ShapeMismatch, std::string(op) + ": " + shape_string(a.shape()) +
                                              " vs " + shape_string(b.shape()));
  }
}

void check_inputs(std::span<const Tensor> inputs, const char* op) {
  for (const auto& t : inputs) {
    if (!t.defined()) throw Error(ErrorCode::ShapeMismatch, std::string(op) + ": undefined input");
    require_finite(t.values(), op);
  }
}

double sigmoid_scalar(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

std::string_view to_string(OpKind kind) {
  switch (kind) {
    case OpKind::MatMul: return "matmul";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::ElementwiseMul: return "elementwise_mul";
    case OpKind::Scale: return "scale";
    case OpKind::AddScalar: return "add_scalar";
    case OpKind::Sigmoid: return "sigmoid";
    case OpKind::Tanh: return "tanh";
    case OpKind::Relu: return "relu";
    case OpKind::Sqrt: return "sqrt";
    case OpKind::ConcatLastAxis: return "concat_last_axis";
    case OpKind::MeanOverAxis: return "mean_over_axis";
    case OpKind::Sum: return "sum";
    case OpKind::SquaredEuclideanDistance: return "squared_euclidean_distance";
    case OpKind::GradReverse: return "grad_reverse";
    case OpKind::BceWithLogits: return "bce_with_logits";
    case OpKind::GruSequence: return "gru_sequence";
  }
  return "unknown";
}

ScopedBackwardFault::ScopedBackwardFault(OpKind kind) : previous_(g_fault), kind_(kind) {
  g_fault = &kind_;
}

ScopedBackwardFault::~ScopedBackwardFault() { g_fault = previous_; }

bool Tape::needs_grad(std::span<const Tensor> inputs) const {
  if (!record_) return false;
  return std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
}

Tensor Tape::record(OpKind kind, std::vector<Tensor> inputs, Tensor out, BackwardFn backward) {
  if (needs_grad(inputs)) {
    out.set_requires_grad(true);
    nodes_.push_back(Node{kind, std::move(inputs), out, std::move(backward)});
  }
  return out;
}

std::vector<OpKind> Tape::recorded_kinds() const {
  std::vector<OpKind> kinds;
  kinds.reserve(nodes_.size());
  for (const auto& n : nodes_) kinds.push_back(n.kind);
  return kinds;
}

Tensor Tape::forward_op(OpKind kind, std::span<const Tensor> inputs) {
  auto arity = [&](std::size_t n) {
    if (inputs.size() != n) {
      throw Error(ErrorCode::ShapeMismatch, std::string(to_string(kind)) + " expects " +
                                                std::to_string(n) + " inputs");
    }
  };
  switch (kind) {
    case OpKind::MatMul: arity(2); return matmul(inputs[0], inputs[1]);
    case OpKind::Add: arity(2); return add(inputs[0], inputs[1]);
    case OpKind::Sub: arity(2); return sub(inputs[0], inputs[1]);
    case OpKind::ElementwiseMul: arity(2); return mul(inputs[0], inputs[1]);
    case OpKind::Sigmoid: arity(1); return sigmoid(inputs[0]);
    case OpKind::Tanh: arity(1); return tanh(inputs[0]);
    case OpKind::Relu: arity(1); return relu(inputs[0]);
    case OpKind::Sqrt: arity(1); return sqrt(inputs[0]);
    case OpKind::ConcatLastAxis: arity(2); return concat(inputs[0], inputs[1]);
    case OpKind::MeanOverAxis: arity(1); return mean(inputs[0], 0);
    case OpKind::Sum: arity(1); return sum(inputs[0]);
    case OpKind::SquaredEuclideanDistance: arity(2); return squared_distance(inputs[0], inputs[1]);
    case OpKind::GradReverse: arity(1); return grad_reverse(inputs[0]);
    default:
      throw Error(ErrorCode::ShapeMismatch,
                  std::string(to_string(kind)) + " needs arguments; call the named method");
  }
}

Tensor Tape::matmul(const Tensor& a, const Tensor& b) {
  const Tensor in[] = {a, b};
  check_inputs(in, "matmul");
  if (a.rank() != 2 || (b.rank() != 1 && b.rank() != 2) || a.dim(1) != b.dim(0)) {
    throw Error(ErrorCode::ShapeMismatch,
                "matmul: " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.rank() == 2 ? b.dim(1) : 1;
  Shape out_shape = b.rank() == 2 ? Shape{m, n} : Shape{m};
  std::vector<double> out(m * n, 0.0);
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      const double* brow = bv.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += aip * brow[j];
    }
  }
  Tensor result(std::move(out_shape), std::move(out));
  Tensor ta = a, tb = b;
  return record(OpKind::MatMul, {a, b}, result, [ta, tb, m, k, n](std::span<const double> g) mutable {
    const auto av = ta.values();
    const auto bv = tb.values();
    if (ta.requires_grad()) {
      auto ga = ta.mutable_grad();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * bv[p * n + j];
          ga[i * k + p] += acc;
        }
      }
    }
    if (tb.requires_grad()) {
      auto gb = tb.mutable_grad();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = av[i * k + p];
          for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += aip * g[i * n + j];
        }
      }
    }
  });
}

Tensor Tape::add(const Tensor& a, const Tensor& b) {
  const Tensor in[] = {a, b};
  check_inputs(in, "add");
  require_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
  Tensor ta = a, tb = b;
  return record(OpKind::Add, {a, b}, Tensor(a.shape(), std::move(out)),
                [ta, tb](std::span<const double> g) mutable {
                  if (ta.requires_grad()) {
                    auto ga = ta.mutable_grad();
                    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                  }
                  if (tb.requires_grad()) {
                    auto gb = tb.mutable_grad();
                    for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
                  }
                });
}

Tensor Tape::sub(const Tensor& a, const Tensor& b) {
  const Tensor in[] = {a, b};
  check_inputs(in, "sub");
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] - b.values()[i];
  Tensor ta = a, tb = b;
  return record(OpKind::Sub, {a, b}, Tensor(a.shape(), std::move(out)),
                [ta, tb](std::span<const double> g) mutable {
                  if (ta.requires_grad()) {
                    auto ga = ta.mutable_grad();
                    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                  }
                  if (tb.requires_grad()) {
                    auto gb = tb.mutable_grad();
                    for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
                  }
                });
}

Tensor Tape::mul(const Tensor& a, const Tensor& b) {
  const Tensor in[] = {a, b};
  check_inputs(in, "elementwise_mul");
  require_same_shape(a, b, "elementwise_mul");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
  Tensor ta = a, tb = b;
  return record(OpKind::ElementwiseMul, {a, b}, Tensor(a.shape(), std::move(out)),
                [ta, tb](std::span<const double> g) mutable {
                  // Read both operands before writing: a and b may alias.
                  const auto av = ta.values();
                  const auto bv = tb.values();
                  if (ta.requires_grad()) {
                    auto ga = ta.mutable_grad();
                    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
                  }
                  if (tb.requires_grad()) {
                    auto gb = tb.mutable_grad();
                    for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
                  }
                });
}

Tensor Tape::scale(const Tensor& a, double factor) {
  const Tensor in[] = {a};
  check_inputs(in, "scale");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * factor;
  Tensor ta = a;
  return record(OpKind::Scale, {a}, Tensor(a.shape(), std::move(out)),
                [ta, factor](std::span<const double> g) mutable {
                  auto ga = ta.mutable_grad();
                  for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
                });
}

Tensor Tape::add_scalar(const Tensor& a, double offset) {
  const Tensor in[] = {a};
  check_inputs(in, "add_scalar");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + offset;
  Tensor ta = a;
  return record(OpKind::AddScalar, {a}, Tensor(a.shape(), std::move(out)),
                [ta](std::span<const double> g) mutable {
                  auto ga = ta.mutable_grad();
                  for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                });
}

Tensor Tape::sigmoid(const Tensor& a) {
  const Tensor in[] = {a};
  check_inputs(in, "sigmoid");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = sigmoid_scalar(a.values()[i]);
  Tensor result(a.shape(), std::move(out));
  Tensor ta = a, y = result;
  return record(OpKind::Sigmoid, {a}, result, [ta, y](std::span<const double> g) mutable {
    auto ga = ta.mutable_grad();
    const auto yv = y.values();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * yv[i] * (1.0 - yv[i]);
  });
}

Tensor Tape::tanh(const Tensor& a) {
  const Tensor in[] = {a};
  check_inputs(in, "tanh");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(a.values()[i]);
  Tensor result(a.shape(), std::move(out));
  Tensor ta = a, y = result;
  return record(OpKind::Tanh, {a}, result, [ta, y](std::span<const double> g) mutable {
    auto ga = ta.mutable_grad();
    const auto yv = y.values();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (1.0 - yv[i] * yv[i]);
  });
}

Tensor Tape::relu(const Tensor& a) {
  const Tensor in[] = {a};
  check_inputs(in, "relu");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(a.values()[i], 0.0);
  Tensor ta = a;
  return record(OpKind::Relu, {a}, Tensor(a.shape(), std::move(out)),
                [ta](std::span<const double> g) mutable {
                  auto ga = ta.mutable_grad();
                  const auto av = ta.values();
                  for (std::size_t i = 0; i < g.size(); ++i) {
                    if (av[i] > 0.0) ga[i] += g[i];
                  }
                });
}

Tensor Tape::sqrt(const Tensor& a) {
  const Tensor in[] = {a};
  check_inputs(in, "sqrt");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::sqrt(std::max(a.values()[i], 0.0));
  Tensor ta = a;
  return record(OpKind::Sqrt, {a}, Tensor(a.shape(), std::move(out)),
                [ta](std::span<const double> g) mutable {
                  auto ga = ta.mutable_grad();
                  const auto av = ta.values();
                  for (std::size_t i = 0; i < g.size(); ++i) {
                    ga[i] += g[i] * 0.5 / std::sqrt(std::max(av[i], kSqrtFloor));
                  }
                });
}

Tensor Tape::concat(const Tensor& a, const Tensor& b) {
  const Tensor in[] = {a, b};
  check_inputs(in, "concat_last_axis");
  if (a.rank() == 0 || a.rank() != b.rank() ||
      !std::equal(a.shape().begin(), a.shape().end() - 1, b.shape().begin())) {
    throw Error(ErrorCode::ShapeMismatch, "concat_last_axis: " + shape_string(a.shape()) + " vs " +
                                              shape_string(b.shape()));
  }
  const std::size_t na = a.shape().back(), nb = b.shape().back();
  const std::size_t rows = a.size() / na;
  Shape out_shape = a.shape();
  out_shape.back() = na + nb;
  std::vector<double> out;
  out.reserve(rows * (na + nb));
  for (std::size_t r = 0; r < rows; ++r) {
    out.insert(out.end(), a.values().begin() + r * na, a.values().begin() + (r + 1) * na);
    out.insert(out.end(), b.values().begin() + r * nb, b.values().begin() + (r + 1) * nb);
  }
  Tensor ta = a, tb = b;
  return record(OpKind::ConcatLastAxis, {a, b}, Tensor(std::move(out_shape), std::move(out)),
                [ta, tb, na, nb, rows](std::span<const double> g) mutable {
                  const std::size_t w = na + nb;
                  if (ta.requires_grad()) {
                    auto ga = ta.mutable_grad();
                    for (std::size_t r = 0; r < rows; ++r)
                      for (std::size_t j = 0; j < na; ++j) ga[r * na + j] += g[r * w + j];
                  }
                  if (tb.requires_grad()) {
                    auto gb = tb.mutable_grad();
                    for (std::size_t r = 0; r < rows; ++r)
                      for (std::size_t j = 0; j < nb; ++j) gb[r * nb + j] += g[r * w + na + j];
                  }
                });
}

Tensor Tape::mean(const Tensor& a, std::size_t axis) {
  const Tensor in[] = {a};
  check_inputs(in, "mean_over_axis");
  if (axis >= a.rank()) {
    throw Error(ErrorCode::ShapeMismatch,
                "mean_over_axis: axis " + std::to_string(axis) + " of " + shape_string(a.shape()));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= a.dim(i);
  for (std::size_t i = axis + 1; i < a.rank(); ++i) inner *= a.dim(i);
  const std::size_t len = a.dim(axis);
  Shape out_shape = a.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  std::vector<double> out(outer * inner, 0.0);
  const auto av = a.values();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t l = 0; l < len; ++l)
      for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += av[(o * len + l) * inner + i];
  const double inv = 1.0 / static_cast<double>(len);
  for (double& v : out) v *= inv;
  Tensor ta = a;
  return record(OpKind::MeanOverAxis, {a}, Tensor(std::move(out_shape), std::move(out)),
                [ta, outer, inner, len, inv](std::span<const double> g) mutable {
                  auto ga = ta.mutable_grad();
                  for (std::size_t o = 0; o < outer; ++o)
                    for (std::size_t l = 0; l < len; ++l)
                      for (std::size_t i = 0; i < inner; ++i)
                        ga[(o * len + l) * inner + i] += g[o * inner + i] * inv;
                });
}

Tensor Tape::sum(const Tensor& a) {
  const Tensor in[] = {a};
  check_inputs(in, "sum");
  double total = 0.0;
  for (double v : a.values()) total += v;
  Tensor ta = a;
  return record(OpKind::Sum, {a}, Tensor::scalar(total), [ta](std::span<const double> g) mutable {
    auto ga = ta.mutable_grad();
    for (double& v : ga) v += g[0];
  });
}

Tensor Tape::squared_distance(const Tensor& a, const Tensor& b) {
  const Tensor in[] = {a, b};
  check_inputs(in, "squared_euclidean_distance");
  require_same_shape(a, b, "squared_euclidean_distance");
  double total = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a.values()[i] - b.values()[i];
    total += d * d;
  }
  Tensor ta = a, tb = b;
  return record(OpKind::SquaredEuclideanDistance, {a, b}, Tensor::scalar(total),
                [ta, tb](std::span<const double> g) mutable {
                  const auto av = ta.values();
                  const auto bv = tb.values();
                  if (ta.requires_grad()) {
                    auto ga = ta.mutable_grad();
                    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += 2.0 * g[0] * (av[i] - bv[i]);
                  }
                  if (tb.requires_grad()) {
                    auto gb = tb.mutable_grad();
                    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= 2.0 * g[0] * (av[i] - bv[i]);
                  }
                });
}

Tensor Tape::grad_reverse(const Tensor& a) {
  const Tensor in[] = {a};
  check_inputs(in, "grad_reverse");
  Tensor ta = a;
  return record(OpKind::GradReverse, {a}, Tensor(a.shape(), {a.values().begin(), a.values().end()}),
                [ta](std::span<const double> g) mutable {
                  auto ga = ta.mutable_grad();
                  for (std::size_t i = 0; i < g.size(); ++i) ga[i] += -g[i];
                });
}

Tensor Tape::bce_with_logits(const Tensor& logit, double label) {
  const Tensor in[] = {logit};
  check_inputs(in, "bce_with_logits");
  if (logit.size() != 1) throw Error(ErrorCode::NotScalar, "bce_with_logits expects a scalar logit");
  if (label != 0.0 && label != 1.0) {
    throw Error(ErrorCode::InvalidLabel, "bce_with_logits label must be 0 or 1");
  }
  const double x = logit.item();
  const double loss = std::max(x, 0.0) - x * label + std::log1p(std::exp(-std::abs(x)));
  Tensor tl = logit;
  return record(OpKind::BceWithLogits, {logit}, Tensor::scalar(loss),
                [tl, label](std::span<const double> g) mutable {
                  tl.mutable_grad()[0] += g[0] * (sigmoid_scalar(tl.item()) - label);
                });
}

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw Error(ErrorCode::NotScalar,
                "backward needs a scalar loss, got " + (loss.defined() ? shape_string(loss.shape()) : "undefined"));
  }
  Tensor seed = loss;
  if (!seed.requires_grad()) return;
  seed.mutable_grad()[0] += 1.0;
  std::vector<double> flipped;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    Node& node = *it;
    if (!node.output.has_grad()) continue;
    std::span<const double> g = node.output.grad();
    if (g_fault != nullptr && *g_fault == node.kind) {
      flipped.assign(g.begin(), g.end());
      for (double& v : flipped) v = -v;
      g = flipped;
    }
    node.backward(g);
  }
  for (const auto& node : nodes_) {
    for (const auto& in : node.inputs) {
      if (in.has_grad()) require_finite(in.grad(), "backward");
    }
  }
}

}  // namespace hld::ad
