#include <benchmark/benchmark.h>

#include "attralign/controller.hpp"

namespace attralign {
namespace {

const MixtureSpec& toy() {
  static const MixtureSpec mix = circle_mixture(Vector{0.8, 0.2});
  return mix;
}

SolverConfig bench_solver(std::size_t iters) {
  SolverConfig cfg;
  cfg.rho = 5e-6;
  cfg.u_max = 1.0;
  cfg.tol = 0.0;
  cfg.max_iters = iters;
  return cfg;
}

// Args: batch M, steps K.
void BM_RolloutAnalytic(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  const auto k = static_cast<std::size_t>(state.range(1));
  const TimeGrid grid = TimeGrid::edm_uniform(80.0, k);
  const auto dyn = ControlledDynamics::for_grid(GenerativeModel::analytic(toy()), grid);
  Rng rng(1);
  const Matrix x0 = dyn.initial_state(sample_standard_normal(rng, m, 2));
  const ControlTrajectory u = ControlTrajectory::zeros(k, m, 2);
  for (auto _ : state) benchmark::DoNotOptimize(rollout(dyn, grid, x0, u));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(m));
}
BENCHMARK(BM_RolloutAnalytic)->Args({64, 40})->Args({64, 80})->Args({256, 40});

void BM_RolloutLearned(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  const TimeGrid grid = TimeGrid::edm_uniform(80.0, 40);
  MlpNet net = MlpNet::make(2, {64, 64}, 2, TimeEmbedding::raw_scalar(), HeadKind::score, 3);
  const auto dyn = ControlledDynamics::for_grid(GenerativeModel::learned_score(net, 4.0), grid);
  Rng rng(1);
  const Matrix x0 = dyn.initial_state(sample_standard_normal(rng, m, 2));
  const ControlTrajectory u = ControlTrajectory::zeros(40, m, 2);
  for (auto _ : state) benchmark::DoNotOptimize(rollout(dyn, grid, x0, u));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(m));
}
BENCHMARK(BM_RolloutLearned)->Arg(16)->Arg(64);

// One forward plus backward sweep per solver iteration; Args: batch M, iterations I.
void BM_SolveEmsa(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  const TimeGrid grid = TimeGrid::edm_uniform(80.0, 40);
  const auto dyn = ControlledDynamics::for_grid(GenerativeModel::analytic(toy()), grid);
  const AttributeOracle oracle = AttributeOracle::analytic_from_mixture(toy(), 2.0);
  const TargetSpec target = TargetSpec::single("class", {0.5, 0.5});
  const SolverConfig cfg = bench_solver(static_cast<std::size_t>(state.range(1)));
  Rng rng(2);
  const Matrix x0 = dyn.initial_state(sample_standard_normal(rng, m, 2));
  for (auto _ : state) benchmark::DoNotOptimize(solve_emsa(dyn, grid, oracle, target, cfg, x0));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(m));
}
BENCHMARK(BM_SolveEmsa)->Args({64, 1})->Args({64, 10})->Args({8, 10})->Unit(benchmark::kMillisecond);

void BM_MlpInputVjp(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  const MlpNet net = MlpNet::make(2, {64, 64}, 2, TimeEmbedding::raw_scalar(), HeadKind::score, 4);
  Rng rng(3);
  const Matrix x = sample_standard_normal(rng, m, 2);
  const Matrix v = sample_standard_normal(rng, m, 2);
  for (auto _ : state) benchmark::DoNotOptimize(net.input_vjp_batch(x, 0.5, v));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(m));
}
BENCHMARK(BM_MlpInputVjp)->Arg(1)->Arg(64);

void BM_TerminalCost(benchmark::State& state) {
  const AttributeOracle oracle = AttributeOracle::analytic_from_mixture(toy(), 2.0);
  const TargetSpec target = TargetSpec::single("class", {0.5, 0.5});
  Rng rng(4);
  const Matrix x = toy().sample(rng, 64);
  for (auto _ : state) benchmark::DoNotOptimize(terminal_cost(oracle, x, target));
}
BENCHMARK(BM_TerminalCost);

}  // namespace
}  // namespace attralign

BENCHMARK_MAIN();
