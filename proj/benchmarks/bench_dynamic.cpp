// End-to-end benchmarks of the dynamic algorithms: top tree maintenance,
// batch MSF processing, the 2ECC rescan, and matching batches.

#include <benchmark/benchmark.h>

#include <random>

#include "mpcdyn/matching.hpp"
#include "mpcdyn/msf.hpp"
#include "mpcdyn/toptree.hpp"
#include "mpcdyn/twoecc.hpp"

using namespace mpcdyn;

namespace {

mpc::MpcConfig bench_config(std::size_t n) {
  mpc::MpcConfig cfg;
  cfg.n = n;
  cfg.alpha = 0.5;
  cfg.machines = 16;
  cfg.words_per_machine = 1 << 14;
  cfg.message_cap = 4 * cfg.words_per_machine;
  cfg.seed = 11;
  return cfg;
}

GraphSnapshot random_graph(std::size_t n, std::size_t m, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  GraphSnapshot g(n);
  std::uniform_real_distribution<double> wd(0.0, 1.0);
  while (g.m() < m) {
    VertexId u = static_cast<VertexId>(rng() % n), v = static_cast<VertexId>(rng() % n);
    if (u == v) continue;
    EdgeId eid = canonical_eid(u, v);
    if (g.has(eid)) continue;
    g.edges.emplace(eid, WeightedEdge(u, v, wd(rng)));
  }
  return g;
}

std::vector<WeightedEdge> random_tree(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> wd(0.0, 1.0);
  std::vector<WeightedEdge> out;
  for (VertexId v = 1; v < n; ++v)
    out.emplace_back(static_cast<VertexId>(rng() % v), v, wd(rng));
  return out;
}

}  // namespace

static void BM_TopTreeBuild(benchmark::State& state) {
  std::size_t n = static_cast<std::size_t>(state.range(0));
  auto edges = random_tree(n, 3);
  for (auto _ : state) {
    mpc::Cluster c(bench_config(n));
    TopForest f(c, n, 0.5);
    f.build(edges);
    benchmark::DoNotOptimize(f.max_rank());
  }
}
BENCHMARK(BM_TopTreeBuild)->Arg(512)->Arg(2048)->Unit(benchmark::kMillisecond);

static void BM_TopTreeLinkCut(benchmark::State& state) {
  std::size_t n = 2048;
  auto edges = random_tree(n, 5);
  mpc::Cluster c(bench_config(n));
  TopForest f(c, n, 0.5);
  f.build(edges);
  std::vector<EdgeId> cut;
  std::vector<WeightedEdge> relink;
  for (std::size_t i = 0; i < 16; ++i) {
    cut.push_back(edges[i * 37].eid);
    relink.push_back(edges[i * 37]);
  }
  for (auto _ : state) {
    f.batch_cut(cut);
    f.batch_link(relink);
    benchmark::DoNotOptimize(f.forest_edge_count());
  }
  state.SetLabel("16 cuts + 16 links per iteration");
}
BENCHMARK(BM_TopTreeLinkCut)->Unit(benchmark::kMillisecond);

static void BM_PathQueries(benchmark::State& state) {
  std::size_t n = 2048;
  auto edges = random_tree(n, 7);
  mpc::Cluster c(bench_config(n));
  TopForest f(c, n, 0.5);
  f.build(edges);
  EdgeAggregate maxagg;
  maxagg.identity = {0, kNoEdge};
  maxagg.leaf = [](const WeightedEdge& e) {
    return AggValue{mpc::key_of_double(e.weight), e.eid};
  };
  maxagg.combine = [](AggValue x, AggValue y) {
    if (x.b == kNoEdge) return y;
    if (y.b == kNoEdge) return x;
    return x.a >= y.a ? x : y;
  };
  std::mt19937_64 rng(9);
  std::vector<std::pair<VertexId, VertexId>> qs;
  for (int i = 0; i < 64; ++i)
    qs.push_back({static_cast<VertexId>(rng() % n), static_cast<VertexId>(rng() % n)});
  for (auto _ : state) {
    auto ans = f.batch_path_query(maxagg, qs);
    benchmark::DoNotOptimize(ans.size());
  }
  state.SetLabel("64 path-max queries per iteration");
}
BENCHMARK(BM_PathQueries)->Unit(benchmark::kMillisecond);

static void BM_MsfBatch(benchmark::State& state) {
  std::size_t n = static_cast<std::size_t>(state.range(0));
  auto g = random_graph(n, 4 * n, 13);
  mpc::Cluster c(bench_config(n));
  MsfDynamic msf(c, g);
  std::mt19937_64 rng(17);
  GraphSnapshot cursor = g;
  for (auto _ : state) {
    state.PauseTiming();
    Batch b;
    std::uniform_real_distribution<double> wd(0.0, 1.0);
    while (b.ops.size() < 16) {
      if (cursor.m() > 0 && rng() % 2 == 0) {
        auto it = cursor.edges.begin();
        std::advance(it, rng() % cursor.m());
        b.ops.push_back(UpdateOp::remove(it->second.u, it->second.v));
        cursor.edges.erase(it);
      } else {
        VertexId u = static_cast<VertexId>(rng() % n), v = static_cast<VertexId>(rng() % n);
        if (u == v || cursor.has(canonical_eid(u, v))) continue;
        auto op = UpdateOp::insert(u, v, wd(rng));
        cursor.edges.emplace(op.edge.eid, op.edge);
        b.ops.push_back(op);
      }
    }
    state.ResumeTiming();
    auto script = msf.process_batch(b);
    benchmark::DoNotOptimize(script.ops.size());
  }
  state.SetLabel("16 mixed updates per batch");
}
BENCHMARK(BM_MsfBatch)->Arg(1024)->Arg(4096)->Unit(benchmark::kMillisecond);

static void BM_TwoEccBatch(benchmark::State& state) {
  std::size_t n = 512;
  auto g = random_graph(n, 1024, 19);
  mpc::Cluster c(bench_config(n));
  TwoEccDynamic ecc(c, g);
  std::mt19937_64 rng(23);
  GraphSnapshot cursor = g;
  for (auto _ : state) {
    state.PauseTiming();
    Batch b;
    while (b.ops.size() < 8) {
      if (cursor.m() > 0 && rng() % 2 == 0) {
        auto it = cursor.edges.begin();
        std::advance(it, rng() % cursor.m());
        b.ops.push_back(UpdateOp::remove(it->second.u, it->second.v));
        cursor.edges.erase(it);
      } else {
        VertexId u = static_cast<VertexId>(rng() % n), v = static_cast<VertexId>(rng() % n);
        if (u == v || cursor.has(canonical_eid(u, v))) continue;
        auto op = UpdateOp::insert(u, v, 1.0);
        cursor.edges.emplace(op.edge.eid, op.edge);
        b.ops.push_back(op);
      }
    }
    state.ResumeTiming();
    auto delta = ecc.process_batch(b);
    benchmark::DoNotOptimize(delta.bridges_added.size());
  }
  state.SetLabel("8 updates + full bridge rescan per batch");
}
BENCHMARK(BM_TwoEccBatch)->Unit(benchmark::kMillisecond);

static void BM_MatchingBatch(benchmark::State& state) {
  std::size_t n = 1024;
  auto g = random_graph(n, 4096, 29);
  mpc::Cluster c(bench_config(n));
  MatchingDynamic mm(c, g);
  std::mt19937_64 rng(31);
  GraphSnapshot cursor = g;
  for (auto _ : state) {
    state.PauseTiming();
    Batch b;
    while (b.ops.size() < 32) {
      if (cursor.m() > 0 && rng() % 2 == 0) {
        auto it = cursor.edges.begin();
        std::advance(it, rng() % cursor.m());
        b.ops.push_back(UpdateOp::remove(it->second.u, it->second.v));
        cursor.edges.erase(it);
      } else {
        VertexId u = static_cast<VertexId>(rng() % n), v = static_cast<VertexId>(rng() % n);
        if (u == v || cursor.has(canonical_eid(u, v))) continue;
        auto op = UpdateOp::insert(u, v, 1.0);
        cursor.edges.emplace(op.edge.eid, op.edge);
        b.ops.push_back(op);
      }
    }
    state.ResumeTiming();
    auto script = mm.process_batch(b);
    benchmark::DoNotOptimize(script.size());
  }
  state.SetLabel("32 mixed updates per batch");
}
BENCHMARK(BM_MatchingBatch)->Unit(benchmark::kMillisecond);
