// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "hld/autodiff/gradcheck.hpp"
#include "hld/autodiff/tape.hpp"
#include "hld/util/error.hpp"

using hld::Error;
using hld::ErrorCode;
using hld::ad::OpKind;
using hld::ad::Tape;
using hld::ad::Tensor;

namespace {

std::vector<double> grad_of(const Tensor& t) { return {t.grad().begin(), t.grad().end()}; }
std::vector<double> values_of(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

template <class F>
ErrorCode code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no hld::Error thrown";
  return ErrorCode::TrainingFailure;
}

}  // namespace

TEST(Tensor, ShapeMustMatchValueCount) {
  EXPECT_EQ(code_of([] { Tensor({2, 2}, {1.0, 2.0, 3.0}); }), ErrorCode::ShapeMismatch);
  Tensor s = Tensor::scalar(3.0);
  EXPECT_EQ(s.size(), 1u);
  EXPECT_EQ(s.rank(), 0u);
  EXPECT_DOUBLE_EQ(s.item(), 3.0);
}

TEST(Tensor, CloneIsDeep) {
  Tensor a = Tensor::vector({1.0, 2.0});
  Tensor b = a.clone();
  b.mutable_values()[0] = 9.0;
  EXPECT_EQ(a.values()[0], 1.0);
  EXPECT_FALSE(a.same_storage(b));
}

TEST(ForwardOp, SigmoidAtZero) {
  Tape t;
  Tensor y = t.sigmoid(Tensor::vector({0.0}));
  EXPECT_EQ(values_of(y), std::vector<double>{0.5});
}

TEST(ForwardOp, ConcatKeepsArgumentOrder) {
  Tape t;
  Tensor y = t.concat(Tensor::vector({1.0, 2.0}), Tensor::vector({3.0}));
  EXPECT_EQ(values_of(y), (std::vector<double>{1.0, 2.0, 3.0}));
}

TEST(ForwardOp, SquaredDistanceOfIdenticalVectorsIsZero) {
  Tape t;
  Tensor d = t.squared_distance(Tensor::vector({1.0, 2.0}), Tensor::vector({1.0, 2.0}));
  EXPECT_EQ(d.rank(), 0u);
  EXPECT_EQ(d.item(), 0.0);
}

TEST(ForwardOp, MatmulByHand) {
  Tape t;
  Tensor a({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor b({3, 2}, {7, 8, 9, 10, 11, 12});
  EXPECT_EQ(values_of(t.matmul(a, b)), (std::vector<double>{58, 64, 139, 154}));
  EXPECT_EQ(values_of(t.matmul(a, Tensor::vector({1, 0, -1}))), (std::vector<double>{-2, -2}));
}

TEST(ForwardOp, MeanOverEachAxis) {
  Tape t;
  Tensor x({2, 2}, {1, 3, 3, 5});
  EXPECT_EQ(values_of(t.mean(x, 0)), (std::vector<double>{2, 4}));
  EXPECT_EQ(values_of(t.mean(x, 1)), (std::vector<double>{2, 4}));
}

TEST(ForwardOp, GenericDispatchMatchesNamedOps) {
  Tape t;
  Tensor a = Tensor::vector({0.3, -1.2}), b = Tensor::vector({2.0, 0.5});
  std::vector<Tensor> ab{a, b};
  EXPECT_EQ(values_of(t.forward_op(OpKind::Add, ab)), values_of(t.add(a, b)));
  EXPECT_EQ(values_of(t.forward_op(OpKind::ElementwiseMul, ab)), values_of(t.mul(a, b)));
  EXPECT_EQ(values_of(t.forward_op(OpKind::SquaredEuclideanDistance, ab)), values_of(t.squared_distance(a, b)));
  std::vector<Tensor> only_a{a};
  EXPECT_EQ(values_of(t.forward_op(OpKind::Tanh, only_a)), values_of(t.tanh(a)));
  EXPECT_EQ(values_of(t.forward_op(OpKind::Relu, only_a)), values_of(t.relu(a)));
}

TEST(ForwardOp, ShapeErrors) {
  Tape t;
  EXPECT_EQ(code_of([&] { t.add(Tensor::vector({1, 2}), Tensor::vector({1, 2, 3})); }), ErrorCode::ShapeMismatch);
  EXPECT_EQ(code_of([&] { t.matmul(Tensor({2, 3}, std::vector<double>(6)), Tensor({2, 2}, std::vector<double>(4))); }),
            ErrorCode::ShapeMismatch);
  EXPECT_EQ(code_of([&] { t.concat(Tensor({2, 2}, std::vector<double>(4)), Tensor({3, 1}, std::vector<double>(3))); }),
            ErrorCode::ShapeMismatch);
}

TEST(ForwardOp, NonFiniteInputRejected) {
  Tape t;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  EXPECT_EQ(code_of([&] { t.tanh(Tensor::vector({nan})); }), ErrorCode::NonFinite);
  EXPECT_EQ(code_of([&] { t.add(Tensor::vector({1.0}), Tensor::vector({INFINITY})); }), ErrorCode::NonFinite);
}

TEST(Backward, SumGivesOnes) {
  Tensor x = Tensor::vector({1, 2, 3}, true);
  Tape t;
  t.backward(t.sum(x));
  EXPECT_EQ(grad_of(x), (std::vector<double>{1, 1, 1}));
}

TEST(Backward, SquaredDistance) {
  Tensor x = Tensor::vector({3}, true), y = Tensor::vector({1}, true);
  Tape t;
  t.backward(t.squared_distance(x, y));
  EXPECT_EQ(grad_of(x), std::vector<double>{4});
  EXPECT_EQ(grad_of(y), std::vector<double>{-4});
}

TEST(Backward, SigmoidAtZero) {
  Tensor x = Tensor::vector({0.0}, true);
  Tape t;
  t.backward(t.sum(t.sigmoid(x)));
  EXPECT_EQ(grad_of(x), std::vector<double>{0.25});
}

TEST(Backward, NonScalarLossRejected) {
  Tensor x = Tensor::vector({1, 2}, true);
  Tape t;
  Tensor y = t.tanh(x);
  EXPECT_EQ(code_of([&] { t.backward(y); }), ErrorCode::NotScalar);
}

TEST(Backward, FanOutAccumulatesPerPathGradients) {
  const std::vector<double> xv{0.4, -1.3, 2.1};
  auto path_a = [](Tape& t, const Tensor& x) { return t.sum(t.tanh(x)); };
  auto path_b = [](Tape& t, const Tensor& x) { return t.sum(t.mul(x, x)); };

  Tensor x = Tensor::vector(xv, true);
  {
    Tape t;
    t.backward(t.add(path_a(t, x), path_b(t, x)));
  }
  Tensor xa = Tensor::vector(xv, true), xb = Tensor::vector(xv, true);
  {
    Tape t;
    t.backward(path_a(t, xa));
  }
  {
    Tape t;
    t.backward(path_b(t, xb));
  }
  for (std::size_t i = 0; i < xv.size(); ++i) EXPECT_DOUBLE_EQ(x.grad()[i], xa.grad()[i] + xb.grad()[i]);
}

TEST(Backward, SqrtGuardKeepsZeroDistanceFinite) {
  Tensor a = Tensor::vector({1.0, 2.0}, true);
  Tensor b = Tensor::vector({1.0, 2.0}, true);
  Tape t;
  Tensor d = t.sqrt(t.squared_distance(a, b));
  EXPECT_EQ(d.item(), 0.0);
  t.backward(d);
  for (double g : a.grad()) EXPECT_TRUE(std::isfinite(g));
}

TEST(Backward, SqrtGuardUsesClampedValue) {
  Tensor x = Tensor::scalar(0.0, true);
  Tape t;
  t.backward(t.sqrt(x));
  EXPECT_DOUBLE_EQ(x.grad()[0], 0.5 / std::sqrt(Tape::kSqrtFloor));
}

TEST(Tape, RecordsOnlyWhenSomeInputNeedsGrad) {
  Tape t;
  Tensor c = Tensor::vector({1.0, 2.0});
  t.tanh(c);
  EXPECT_EQ(t.size(), 0u);
  Tensor x = Tensor::vector({1.0, 2.0}, true);
  t.tanh(t.add(x, c));
  EXPECT_EQ(t.recorded_kinds(), (std::vector<OpKind>{OpKind::Add, OpKind::Tanh}));

  Tape off(false);
  off.tanh(x);
  EXPECT_EQ(off.size(), 0u);
}

TEST(Tape, DeterministicGradients) {
  auto run = [] {
    Tensor x({2, 2}, {0.1, -0.2, 0.3, 0.7}, true);
    Tensor w({2, 2}, {1.1, 0.4, -0.6, 0.2}, true);
    Tape t;
    t.backward(t.sum(t.sigmoid(t.matmul(w, t.tanh(x)))));
    std::vector<double> g = grad_of(x);
    g.insert(g.end(), w.grad().begin(), w.grad().end());
    return g;
  };
  EXPECT_EQ(run(), run());
}

TEST(Tape, FaultInjectionFlipsOneRule) {
  auto grad = [] {
    Tensor x = Tensor::vector({0.3}, true);
    Tape t;
    t.backward(t.sum(t.tanh(x)));
    return x.grad()[0];
  };
  const double clean = grad();
  {
    hld::ad::ScopedBackwardFault fault(OpKind::Tanh);
    EXPECT_EQ(grad(), -clean);
  }
  EXPECT_EQ(grad(), clean);
}

TEST(GradCheck, SumOfSquares) {
  auto f = [](Tape& t, const Tensor& x) { return t.sum(t.mul(x, x)); };
  auto r = hld::ad::finite_difference_check(f, Tensor::vector({1.0, 2.0}), 1e-5, 1e-6);
  EXPECT_TRUE(r.passed);
  EXPECT_EQ(r.analytic, (std::vector<double>{2.0, 4.0}));
}

TEST(GradCheck, TanhOfMatmulOnRandomInput) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  std::vector<double> xv(9), wv(9);
  for (auto& v : xv) v = u(rng);
  for (auto& v : wv) v = u(rng);
  Tensor w({3, 3}, wv);
  auto f = [&](Tape& t, const Tensor& x) { return t.sum(t.tanh(t.matmul(w, x))); };
  auto r = hld::ad::finite_difference_check(f, Tensor({3, 3}, xv), 1e-5, 1e-4);
  EXPECT_TRUE(r.passed) << r.max_relative_error;
}

TEST(GradCheck, ReluAwayFromKink) {
  auto f = [](Tape& t, const Tensor& x) { return t.sum(t.relu(x)); };
  auto r = hld::ad::finite_difference_check(f, Tensor::vector({0.5}), 1e-5, 1e-6);
  EXPECT_TRUE(r.passed);
  EXPECT_EQ(r.analytic[0], 1.0);
}

TEST(GradCheck, ReportsAWrongGradient) {
  hld::ad::ScopedBackwardFault fault(OpKind::Sigmoid);
  auto f = [](Tape& t, const Tensor& x) { return t.sum(t.sigmoid(x)); };
  auto r = hld::ad::finite_difference_check(f, Tensor::vector({0.2, -0.4}), 1e-5, 1e-4);
  EXPECT_FALSE(r.passed);
}
