// Microbenchmarks of the runtime primitives: distributed sort, aggregation,
// and broadcast at a few machine/word scales.

#include <benchmark/benchmark.h>

#include <random>

#include "mpcdyn/dist.hpp"

using namespace mpcdyn;
using namespace mpcdyn::mpc;

namespace {

MpcConfig bench_config(std::size_t machines, std::size_t words) {
  MpcConfig cfg;
  cfg.n = 1024;
  cfg.alpha = 0.5;
  cfg.machines = machines;
  cfg.words_per_machine = words;
  cfg.message_cap = 4 * words;
  cfg.seed = 7;
  return cfg;
}

struct Rec {
  std::uint64_t key, tie, val;
};

}  // namespace

static void BM_SortDist(benchmark::State& state) {
  std::size_t machines = static_cast<std::size_t>(state.range(0));
  std::size_t per_machine = static_cast<std::size_t>(state.range(1));
  std::mt19937_64 rng(3);
  for (auto _ : state) {
    state.PauseTiming();
    Cluster c(bench_config(machines, 1 << 16));
    Dist<Rec> d(c);
    for (std::size_t m = 0; m < machines; ++m)
      for (std::size_t i = 0; i < per_machine; ++i) d.part(m).push_back({rng(), rng(), 0});
    state.ResumeTiming();
    sort_dist(c, d, [](const Rec& r) { return SortKey{r.key, r.tie}; });
    benchmark::DoNotOptimize(d.total_size());
  }
}
BENCHMARK(BM_SortDist)->Args({8, 2048})->Args({32, 2048})->Args({64, 4096});

static void BM_AggregateByKey(benchmark::State& state) {
  std::size_t machines = 16;
  std::size_t per_machine = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(5);
  for (auto _ : state) {
    state.PauseTiming();
    Cluster c(bench_config(machines, 1 << 16));
    Dist<Rec> d(c);
    for (std::size_t m = 0; m < machines; ++m)
      for (std::size_t i = 0; i < per_machine; ++i)
        d.part(m).push_back({rng() % 1024, 0, rng() % 100});
    state.ResumeTiming();
    aggregate_by_key(
        c, d, [](const Rec& r) { return SortKey{r.key, 0}; },
        [](const Rec& a, const Rec& b) { return Rec{a.key, 0, a.val + b.val}; });
    benchmark::DoNotOptimize(d.total_size());
  }
}
BENCHMARK(BM_AggregateByKey)->Arg(1024)->Arg(8192);

static void BM_Broadcast(benchmark::State& state) {
  std::size_t machines = static_cast<std::size_t>(state.range(0));
  Cluster c(bench_config(machines, 1 << 14));
  std::vector<std::uint64_t> payload(64, 42);
  for (auto _ : state) {
    auto have = broadcast(c, 0, payload);
    benchmark::DoNotOptimize(have.size());
  }
}
BENCHMARK(BM_Broadcast)->Arg(16)->Arg(128);

BENCHMARK_MAIN();
