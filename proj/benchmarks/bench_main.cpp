#include <benchmark/benchmark.h>

#include "repflow/blocks.hpp"
#include "repflow/metrics.hpp"
#include "repflow/probing.hpp"
#include "repflow/random.hpp"
#include "repflow/theory.hpp"

using namespace repflow;

namespace {

Matrix gaussian(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  CounterRng rng(seed, 0);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng.normal();
  return m;
}

ActivationStack random_stack(std::size_t layers, Eigen::Index n, Eigen::Index d) {
  std::vector<Matrix> snaps;
  for (std::size_t l = 0; l < layers; ++l) snaps.push_back(gaussian(n, d, l));
  return ActivationStack::from_layers(snaps);
}

void BM_Philox(benchmark::State& state) {
  CounterRng rng(1, 2);
  for (auto _ : state) benchmark::DoNotOptimize(rng.normal());
}
BENCHMARK(BM_Philox);

void BM_ComputeMetrics(benchmark::State& state) {
  const ActivationStack s = random_stack(static_cast<std::size_t>(state.range(0)), 128, 64);
  for (auto _ : state) benchmark::DoNotOptimize(compute_metrics(s));
}
BENCHMARK(BM_ComputeMetrics)->Arg(9)->Arg(33);

void BM_LinearCka(benchmark::State& state) {
  const Matrix x = gaussian(state.range(0), 64, 1), y = gaussian(state.range(0), 64, 2);
  for (auto _ : state) benchmark::DoNotOptimize(linear_cka(x, y));
}
BENCHMARK(BM_LinearCka)->Arg(128)->Arg(1024);

void BM_TransformerBlock(benchmark::State& state) {
  const TransformerParams p = init_transformer({}, {64});
  const Matrix h = gaussian(state.range(0), 64, 3);
  for (auto _ : state) benchmark::DoNotOptimize(transformer_block_forward(h, p));
}
BENCHMARK(BM_TransformerBlock)->Arg(32)->Arg(128);

void BM_MambaBlock(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const MambaParams p = init_mamba({}, {n, 64, 16, 4, Nonlinearity::exact});
  const Matrix h = gaussian(state.range(0), 64, 4);
  for (auto _ : state) benchmark::DoNotOptimize(mamba_block_forward(h, p));
}
BENCHMARK(BM_MambaBlock)->Arg(32)->Arg(128);

void BM_SpectralNorm(benchmark::State& state) {
  const Matrix m = gaussian(state.range(0), state.range(0), 5);
  for (auto _ : state) benchmark::DoNotOptimize(spectral_norm(m));
}
BENCHMARK(BM_SpectralNorm)->Arg(16)->Arg(64);

void BM_MonteCarlo(benchmark::State& state) {
  const TransformerParams p =
      init_transformer({}, {8, 0, AttentionMode::mean_field, Nonlinearity::linear_gain, 0.1});
  const BlockFn block = [&](const Matrix& h) { return transformer_block_forward(h, p); };
  for (auto _ : state) benchmark::DoNotOptimize(mc_expected_st2(block, {4, 8, 0.1}, 10000, 1));
}
BENCHMARK(BM_MonteCarlo)->Unit(benchmark::kMillisecond);

void BM_TrainProbe(benchmark::State& state) {
  const Matrix x = gaussian(1000, 64, 6);
  std::vector<int> y(1000);
  for (int i = 0; i < 1000; ++i) y[i] = i % 10;
  for (auto _ : state) benchmark::DoNotOptimize(train_probe(x, y, {}));
}
BENCHMARK(BM_TrainProbe)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
