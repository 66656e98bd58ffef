#include <benchmark/benchmark.h>

#include <numeric>

#include "amoe/gbdt.hpp"
#include "amoe/metrics.hpp"
#include "amoe/moe.hpp"
#include "amoe/rng.hpp"
#include "amoe/training.hpp"

using namespace amoe;

namespace {

TrainData synthetic_rows(Index n, Index dim, std::uint64_t seed) {
  Rng rng(seed);
  TrainData d;
  d.x = Matrix(n, dim);
  d.anchor_z = Vector(n);
  d.y = Vector(n);
  for (Index i = 0; i < d.x.size(); ++i) d.x.data()[i] = rng.normal();
  for (Index i = 0; i < n; ++i) {
    d.anchor_z(i) = d.x(i, 0) - 0.5 * d.x(i, 1);
    d.y(i) = d.anchor_z(i) + 0.3 * rng.normal();
  }
  return d;
}

IndexList all_rows(Index n) {
  IndexList rows(static_cast<std::size_t>(n));
  std::iota(rows.begin(), rows.end(), Index{0});
  return rows;
}

}  // namespace

// Forward pass of the default model, one density per row.
static void BM_Forward(benchmark::State& state) {
  const Index n = state.range(0);
  const TrainData d = synthetic_rows(n, 8, 1);
  const MoeNetwork net = MoeNetwork::initialize(MoeConfig{}, 8, 1);
  for (auto _ : state) {
    double acc = 0.0;
    for (Index i = 0; i < n; ++i) acc += net.density(d.x.row(i).transpose(), d.anchor_z(i)).mean();
    benchmark::DoNotOptimize(acc);
  }
  state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(BM_Forward)->Arg(256)->Arg(1024);

// Regularized objective with gradient accumulation.
static void BM_ForwardBackward(benchmark::State& state) {
  const Index n = state.range(0);
  const TrainData d = synthetic_rows(n, 8, 2);
  MoeNetwork net = MoeNetwork::initialize(MoeConfig{}, 8, 2);
  const IndexList rows = all_rows(n);
  const TrainConfig tc;
  for (auto _ : state) {
    net.params().zero_grad();
    benchmark::DoNotOptimize(regularized_objective(net, d, rows, tc, true).total());
  }
  state.SetItemsProcessed(state.iterations() * n);
}
BENCHMARK(BM_ForwardBackward)->Arg(256)->Arg(1024);

static void BM_GbdtFit(benchmark::State& state) {
  const TrainData d = synthetic_rows(state.range(0), 8, 3);
  GbdtConfig c;
  c.max_stages = 100;
  for (auto _ : state) benchmark::DoNotOptimize(fit_gbdt(d.x, d.y, c));
}
BENCHMARK(BM_GbdtFit)->Arg(500)->Arg(2000)->Unit(benchmark::kMillisecond);

static void BM_Crps(benchmark::State& state) {
  Rng rng(4);
  MixtureDensity d;
  for (int i = 0; i < state.range(0); ++i) d.components.push_back({1.0 / state.range(0), rng.normal(), rng.uniform(0.05, 1.0)});
  double y = 0.0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(crps_gaussian_mixture(d, y));
    y += 1e-3;
  }
}
BENCHMARK(BM_Crps)->Arg(6)->Arg(24);

BENCHMARK_MAIN();
