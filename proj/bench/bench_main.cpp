// SPDX-License-Identifier: Apache-2.0
// Fused vs composed GRU, and serial vs OpenMP cross-validation jobs.
#include <benchmark/benchmark.h>

#include <random>

#include "hld/data/ops.hpp"
#include "hld/eval/cv.hpp"
#include "hld/nn/gru.hpp"
#include "hld/util/rng.hpp"

namespace {

using hld::ad::Tape;
using hld::ad::Tensor;

Tensor random_frames(std::size_t steps, std::size_t dim) {
  auto rng = hld::make_rng(1, "bench.frames");
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> v(steps * dim);
  for (auto& x : v) x = n(rng);
  return Tensor({steps, dim}, std::move(v));
}

void BM_GruFused(benchmark::State& state) {
  const auto steps = static_cast<std::size_t>(state.range(0));
  auto params = hld::nn::init_gru(16, 32, 7);
  Tensor frames = random_frames(steps, 16);
  for (auto _ : state) {
    Tape tape;
    Tensor h = hld::nn::gru_forward(tape, frames, params, Tensor::zeros({32}));
    Tensor loss = tape.sum(hld::nn::avg_pool(tape, h));
    tape.backward(loss);
    benchmark::DoNotOptimize(params.w_z.grad().data());
  }
}
BENCHMARK(BM_GruFused)->Arg(50)->Arg(150);

void BM_GruReference(benchmark::State& state) {
  const auto steps = static_cast<std::size_t>(state.range(0));
  auto params = hld::nn::init_gru(16, 32, 7);
  Tensor frames = random_frames(steps, 16);
  for (auto _ : state) {
    Tape tape;
    auto hs = hld::nn::gru_forward_reference(tape, frames, params, Tensor::zeros({32}));
    Tensor loss = tape.sum(hld::nn::avg_pool(tape, hs));
    tape.backward(loss);
    benchmark::DoNotOptimize(params.w_z.grad().data());
  }
}
BENCHMARK(BM_GruReference)->Arg(50)->Arg(150);

const hld::data::Dataset& small_dataset() {
  static const hld::data::Dataset ds = [] {
    hld::data::GeneratorConfig g;
    g.subjects = 20;
    g.feature_dim = 8;
    g.schedule_entries = 8;
    return hld::data::generate_synthetic(g);
  }();
  return ds;
}

void BM_Evaluate(benchmark::State& state) {
  hld::eval::EvalConfig c;
  c.variant = hld::pipeline::ModelVariant::Anchor;
  c.hidden_dim = 8;
  c.finetune.epochs = 1;
  c.finetune.lr = 3e-3;
  c.folds = 4;
  c.seeds = {0, 1};
  c.age_probe = false;
  c.parallel = state.range(0) != 0;
  for (auto _ : state) {
    auto report = hld::eval::evaluate(small_dataset(), c);
    benchmark::DoNotOptimize(report.overall.mean);
  }
  state.SetLabel(c.parallel ? "openmp" : "serial");
}
BENCHMARK(BM_Evaluate)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
