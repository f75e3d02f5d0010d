// SPDX-License-Identifier: Apache-2.0
#include "hld/app/gradcheck_suite.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>

#include "hld/data/ops.hpp"
#include "hld/nn/gru.hpp"
#include "hld/nn/losses.hpp"
#include "hld/nn/mlp.hpp"
#include "hld/pipeline/training.hpp"
#include "hld/util/error.hpp"
#include "hld/util/rng.hpp"

namespace hld::app {
namespace {

using ad::OpKind;
using ad::Tape;
using ad::Tensor;

constexpr double kEpsilon = 1e-5;
// Gradients below this magnitude are compared absolutely.
constexpr double kFloor = 1e-5;

/// Scalar terms of the objective; the tape sums them before backward.
using Objective = std::function<std::vector<Tensor>(Tape&)>;

/// `coeffs[p][k]` weights term k in the numeric derivative for parameter p.
/// Plain losses use all ones; parameters upstream of a gradient reversal
/// see the reversed terms with -1.
double max_relative_error(const Objective& f, const std::vector<Tensor>& params,
                          const std::vector<std::vector<double>>& coeffs) {
  for (Tensor p : params) p.zero_grad();
  {
    Tape tape;
    auto terms = f(tape);
    Tensor total = terms.front();
    for (std::size_t k = 1; k < terms.size(); ++k) total = tape.add(total, terms[k]);
    tape.backward(total);
  }
  auto eval = [&f] {
    Tape tape(false);
    std::vector<double> out;
    for (const auto& t : f(tape)) out.push_back(t.item());
    return out;
  };

  double worst = 0.0;
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor param = params[p];
    std::vector<double> analytic(param.size(), 0.0);
    if (param.has_grad()) analytic.assign(param.grad().begin(), param.grad().end());
    auto values = param.mutable_values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double orig = values[i];
      values[i] = orig + kEpsilon;
      const auto up = eval();
      values[i] = orig - kEpsilon;
      const auto down = eval();
      values[i] = orig;
      double numeric = 0.0;
      for (std::size_t k = 0; k < up.size(); ++k) numeric += coeffs[p][k] * (up[k] - down[k]) / (2.0 * kEpsilon);
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), kFloor});
      worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
    }
  }
  return worst;
}

double max_relative_error(const Objective& f, const std::vector<Tensor>& params, double sign = 1.0) {
  return max_relative_error(f, params, std::vector<std::vector<double>>(params.size(), {sign}));
}

class Sampler {
 public:
  explicit Sampler(Rng rng) : rng_(std::move(rng)) {}

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }

  Tensor tensor(ad::Shape shape, double lo = -2.0, double hi = 2.0, bool grad = true) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    std::vector<double> v(n);
    for (auto& x : v) x = uniform(lo, hi);
    return Tensor(std::move(shape), std::move(v), grad);
  }

  /// Keeps every element at least `gap` away from zero (relu kink).
  Tensor away_from_zero(ad::Shape shape, double gap) {
    Tensor t = tensor(std::move(shape));
    for (auto& x : t.mutable_values()) {
      if (std::abs(x) < gap) x = x < 0.0 ? x - gap : x + gap;
    }
    return t;
  }

  std::size_t index(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng_); }
  Rng& rng() { return rng_; }

 private:
  Rng rng_;
};

/// sum(y * R) for a fixed random R, so each output element carries a
/// distinct upstream gradient.
Tensor readout(Tape& tape, const Tensor& y, const Tensor& weights) {
  if (y.rank() == 0) return y;
  return tape.sum(tape.mul(y, weights));
}

using Builder = std::function<double(Sampler&)>;

struct CheckSpec {
  std::string name;
  bool end_to_end = false;
  Builder run;
};

/// Unary op; the readout weights match its output shape.
Builder unary(std::function<Tensor(Tape&, const Tensor&)> op, std::function<Tensor(Sampler&)> input) {
  return [op, input](Sampler& s) {
    Tensor x = input(s);
    Tape probe(false);
    Tensor r = s.tensor(op(probe, x).shape(), -1.0, 1.0, false);
    return max_relative_error([&](Tape& t) { return std::vector<Tensor>{readout(t, op(t, x), r)}; }, {x});
  };
}

Builder binary(std::function<Tensor(Tape&, const Tensor&, const Tensor&)> op, ad::Shape a_shape,
               ad::Shape b_shape) {
  return [op, a_shape, b_shape](Sampler& s) {
    Tensor a = s.tensor(a_shape);
    Tensor b = s.tensor(b_shape);
    Tape probe(false);
    Tensor r = s.tensor(op(probe, a, b).shape(), -1.0, 1.0, false);
    return max_relative_error([&](Tape& t) { return std::vector<Tensor>{readout(t, op(t, a, b), r)}; }, {a, b});
  };
}

nn::GruParams random_gru(Sampler& s, std::size_t d, std::size_t h) {
  nn::GruParams p;
  p.input_dim = d;
  p.hidden_dim = h;
  for (Tensor* w : {&p.w_z, &p.w_r, &p.w_h}) *w = s.tensor({h, d}, -0.8, 0.8);
  for (Tensor* u : {&p.u_z, &p.u_r, &p.u_h}) *u = s.tensor({h, h}, -0.8, 0.8);
  for (Tensor* b : {&p.b_z, &p.b_r, &p.b_h}) *b = s.tensor({h}, -0.5, 0.5);
  return p;
}

Builder gru_check(bool fused) {
  return [fused](Sampler& s) {
    const std::size_t d = 3, h = 4, steps = 5;
    nn::GruParams p = random_gru(s, d, h);
    Tensor frames = s.tensor({steps, d}, -2.0, 2.0, fused);
    Tensor h0 = s.tensor({h}, -0.5, 0.5);
    Tensor r = s.tensor({steps, h}, -1.0, 1.0, false);
    auto params = p.parameters();
    params.push_back(h0);
    if (fused) params.push_back(frames);
    auto f = [&](Tape& t) {
      if (fused) return std::vector<Tensor>{readout(t, nn::gru_forward(t, frames, p, h0), r)};
      // The composed path yields one state per step; weight each by its row of R.
      auto states = nn::gru_forward_reference(t, frames, p, h0);
      Tensor total = Tensor::scalar(0.0);
      for (std::size_t i = 0; i < states.size(); ++i) {
        std::vector<double> row(r.values().begin() + static_cast<std::ptrdiff_t>(i * h),
                                r.values().begin() + static_cast<std::ptrdiff_t>((i + 1) * h));
        total = t.add(total, readout(t, states[i], Tensor::vector(row)));
      }
      return std::vector<Tensor>{total};
    };
    return max_relative_error(f, params);
  };
}

double triplet_instance(Sampler& s) {
  // Resample until the hinge is clearly on one side; the kink is not differentiable.
  for (;;) {
    Tensor a = s.tensor({4}), p = s.tensor({4}), n = s.tensor({4});
    Tape probe(false);
    const double d_pos = std::sqrt(probe.squared_distance(a, p).item());
    const double d_neg = std::sqrt(probe.squared_distance(a, n).item());
    if (std::abs(1.0 + d_pos - d_neg) < 1e-2 || d_pos < 1e-2 || d_neg < 1e-2) continue;
    return max_relative_error([&](Tape& t) { return std::vector<Tensor>{nn::triplet_loss(t, a, p, n)}; },
                              {a, p, n});
  }
}

double mlp_instance(Sampler& s) {
  nn::MlpParams mlp = nn::init_mlp({5, 4, 1}, nn::Activation::Relu, s.index(1u << 30));
  for (auto& layer : mlp.layers) layer.bias = s.tensor(layer.bias.shape(), -0.5, 0.5);
  Tensor x = s.tensor({5});
  auto params = mlp.parameters();
  params.push_back(x);
  // Relu kinks: resample until every pre-activation is clear of zero.
  for (int attempt = 0; attempt < 100; ++attempt) {
    Tape probe(false);
    Tensor pre = probe.add(probe.matmul(mlp.layers[0].weight, x), mlp.layers[0].bias);
    const auto v = pre.values();
    if (std::all_of(v.begin(), v.end(), [](double z) { return std::abs(z) > 1e-3; })) break;
    x = s.tensor({5});
    params.back() = x;
  }
  return max_relative_error([&](Tape& t) { return std::vector<Tensor>{nn::mlp_forward(t, x, mlp)}; }, params);
}

/// Tiny generated dataset, a fresh AnchorVMABM bundle, and batch_loss over a
/// few instances. Encoder parameters sit upstream of the gradient reversal,
/// so their numeric oracle is d(bce)/dθ - d(mse)/dθ.
double end_to_end_instance(Sampler& s) {
  data::GeneratorConfig gen;
  gen.subjects = 2;
  gen.feature_dim = 3;
  gen.fps = 1;
  gen.schedule_entries = 6;
  gen.min_duration_s = 3;
  gen.max_duration_s = 4;
  for (int attempt = 0;; ++attempt) {
    gen.seed = s.index(1u << 30);
    data::Dataset ds = data::generate_synthetic(gen);
    auto sessions = ds.session_ids();
    pipeline::DatasetView view(ds, sessions);
    auto set = pipeline::build_instances(view, pipeline::ModelVariant::AnchorVMABM);
    if (set.instances.size() < 2) {
      if (attempt > 100) throw Error(ErrorCode::EmptyDataset, "gradcheck dataset has no anchored instances");
      continue;
    }
    std::vector<pipeline::Instance> batch(set.instances.begin(),
                                          set.instances.begin() + static_cast<std::ptrdiff_t>(std::min<std::size_t>(3, set.instances.size())));
    auto bundle = pipeline::make_bundle(pipeline::ModelVariant::AnchorVMABM, gen.feature_dim, 3, s.index(1u << 30));
    bundle.age_norm = {50.0, 15.0};
    for (auto* head : {&bundle.hl_head, &*bundle.age_head}) {
      for (auto& layer : head->layers) layer.bias = s.tensor(layer.bias.shape(), -0.3, 0.3);
    }
    for (Tensor* b : {&bundle.encoder.b_z, &bundle.encoder.b_r, &bundle.encoder.b_h}) *b = s.tensor(b->shape(), -0.3, 0.3);

    std::vector<Tensor> params;
    std::vector<std::vector<double>> coeffs;
    for (const auto& p : bundle.encoder.parameters()) {
      params.push_back(p);
      coeffs.push_back({1.0, -1.0});
    }
    for (const auto& p : bundle.hl_head.parameters()) {
      params.push_back(p);
      coeffs.push_back({1.0, 1.0});
    }
    for (const auto& p : bundle.age_head->parameters()) {
      params.push_back(p);
      coeffs.push_back({1.0, 1.0});
    }
    auto f = [&](Tape& t) {
      auto loss = pipeline::batch_loss(t, view, bundle, batch);
      return std::vector<Tensor>{loss.bce, *loss.mse};
    };
    return max_relative_error(f, params, coeffs);
  }
}

std::vector<CheckSpec> all_checks() {
  auto plain = [](Sampler& s) { return s.tensor({2, 3}); };
  std::vector<CheckSpec> checks;
  checks.push_back({"matmul", false, binary([](Tape& t, const Tensor& a, const Tensor& b) { return t.matmul(a, b); },
                                            {3, 4}, {4, 2})});
  checks.push_back({"matmul_vector", false,
                    binary([](Tape& t, const Tensor& a, const Tensor& b) { return t.matmul(a, b); }, {3, 4}, {4})});
  checks.push_back({"add", false, binary([](Tape& t, const Tensor& a, const Tensor& b) { return t.add(a, b); },
                                         {2, 3}, {2, 3})});
  checks.push_back({"sub", false, binary([](Tape& t, const Tensor& a, const Tensor& b) { return t.sub(a, b); },
                                         {2, 3}, {2, 3})});
  checks.push_back({"elementwise_mul", false,
                    binary([](Tape& t, const Tensor& a, const Tensor& b) { return t.mul(a, b); }, {2, 3}, {2, 3})});
  checks.push_back({"scale", false, unary([](Tape& t, const Tensor& x) { return t.scale(x, -1.7); }, plain)});
  checks.push_back({"add_scalar", false, unary([](Tape& t, const Tensor& x) { return t.add_scalar(x, 0.3); }, plain)});
  checks.push_back({"sigmoid", false, unary([](Tape& t, const Tensor& x) { return t.sigmoid(x); }, plain)});
  checks.push_back({"tanh", false, unary([](Tape& t, const Tensor& x) { return t.tanh(x); }, plain)});
  checks.push_back({"relu", false, unary([](Tape& t, const Tensor& x) { return t.relu(x); },
                                         [](Sampler& s) { return s.away_from_zero({2, 3}, 1e-2); })});
  checks.push_back({"sqrt", false, unary([](Tape& t, const Tensor& x) { return t.sqrt(x); },
                                         [](Sampler& s) { return s.tensor({2, 3}, 0.1, 3.0); })});
  checks.push_back({"concat_last_axis", false,
                    binary([](Tape& t, const Tensor& a, const Tensor& b) { return t.concat(a, b); }, {3}, {4})});
  checks.push_back({"mean_over_axis_0", false, unary([](Tape& t, const Tensor& x) { return t.mean(x, 0); }, plain)});
  checks.push_back({"mean_over_axis_1", false, unary([](Tape& t, const Tensor& x) { return t.mean(x, 1); }, plain)});
  checks.push_back({"sum", false, unary([](Tape& t, const Tensor& x) { return t.sum(x); }, plain)});
  checks.push_back({"squared_euclidean_distance", false,
                    binary([](Tape& t, const Tensor& a, const Tensor& b) { return t.squared_distance(a, b); }, {5},
                           {5})});
  checks.push_back({"grad_reverse", false, [](Sampler& s) {
                      // Reversal is not the derivative of the forward map: expect -numeric.
                      Tensor x = s.tensor({2, 3});
                      Tensor r = s.tensor({2, 3}, -1.0, 1.0, false);
                      return max_relative_error(
                          [&](Tape& t) { return std::vector<Tensor>{readout(t, t.grad_reverse(x), r)}; }, {x}, -1.0);
                    }});
  checks.push_back({"bce_with_logits", false, [](Sampler& s) {
                      Tensor x = s.tensor({}, -20.0, 20.0);
                      const double label = static_cast<double>(s.index(2));
                      return max_relative_error(
                          [&](Tape& t) { return std::vector<Tensor>{t.bce_with_logits(x, label)}; }, {x});
                    }});
  checks.push_back({"gru_sequence", false, gru_check(true)});
  checks.push_back({"gru_reference", false, gru_check(false)});
  checks.push_back({"mlp", false, mlp_instance});
  checks.push_back({"triplet_loss", false, triplet_instance});
  checks.push_back({"mse_loss", false, [](Sampler& s) {
                      Tensor x = s.tensor({1});
                      const double target = s.uniform(-2.0, 2.0);
                      return max_relative_error(
                          [&](Tape& t) { return std::vector<Tensor>{t.sum(nn::mse_loss(t, x, target))}; }, {x});
                    }});
  checks.push_back({"anchor_vm_abm_batch_loss", true, end_to_end_instance});
  return checks;
}

}  // namespace

bool SuiteReport::passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.passed; });
}

std::string SuiteReport::format() const {
  std::string out;
  char line[160];
  for (const auto& c : checks) {
    std::snprintf(line, sizeof line, "%-28s n=%-3zu max_rel_err=%.3e tol=%.0e %s\n", c.name.c_str(), c.instances,
                  c.max_relative_error, c.tolerance, c.passed ? "PASS" : "FAIL");
    out += line;
  }
  std::snprintf(line, sizeof line, "%zu checks, %s, %.2f s\n", checks.size(), passed() ? "all passed" : "FAILED",
                seconds);
  out += line;
  return out;
}

SuiteReport run_gradcheck_suite(const SuiteOptions& options) {
  if (options.instances == 0) throw Error(ErrorCode::InvalidConfig, "instances must be positive");
  const auto start = std::chrono::steady_clock::now();
  std::optional<ad::ScopedBackwardFault> fault;
  if (options.fault) fault.emplace(*options.fault);

  SuiteReport report;
  for (const auto& spec : all_checks()) {
    CheckResult result;
    result.name = spec.name;
    result.tolerance = spec.end_to_end ? options.end_to_end_tolerance : options.op_tolerance;
    for (std::size_t i = 0; i < options.instances; ++i) {
      Sampler sampler(make_rng(options.seed, "gradcheck." + spec.name, i));
      const double err = spec.run(sampler);
      // NaN must fail too.
      result.max_relative_error = std::isnan(err) ? err : std::max(result.max_relative_error, err);
      ++result.instances;
    }
    result.passed = result.max_relative_error < result.tolerance;
    report.checks.push_back(std::move(result));
  }
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

ad::OpKind op_kind_from_string(const std::string& name) {
  for (int k = 0; k <= static_cast<int>(OpKind::GruSequence); ++k) {
    const auto kind = static_cast<OpKind>(k);
    if (ad::to_string(kind) == name) return kind;
  }
  throw Error(ErrorCode::InvalidConfig, "unknown op '" + name + "'");
}

}  // namespace hld::app
