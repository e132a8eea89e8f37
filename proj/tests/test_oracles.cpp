#include <random>

#include "doctest.h"
#include "mpcdyn/graph.hpp"
#include "mpcdyn/oracles.hpp"

using namespace mpcdyn;
using namespace mpcdyn::oracles;

namespace {

GraphSnapshot random_graph(std::size_t n, std::size_t m, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  GraphSnapshot g(n);
  std::uniform_int_distribution<VertexId> vd(0, static_cast<VertexId>(n - 1));
  std::uniform_real_distribution<double> wd(0.0, 1.0);
  while (g.m() < m) {
    VertexId u = vd(rng), v = vd(rng);
    if (u == v) continue;
    EdgeId eid = canonical_eid(u, v);
    if (g.has(eid)) continue;
    g.edges.emplace(eid, WeightedEdge(u, v, wd(rng)));
  }
  return g;
}

GraphSnapshot triangle() {
  GraphSnapshot g(3);
  for (auto [u, v, w] : {std::tuple{0, 1, 1.0}, {1, 2, 2.0}, {0, 2, 3.0}})
    g.edges.emplace(canonical_eid(u, v), WeightedEdge(u, v, w));
  return g;
}

}  // namespace

TEST_CASE("oracle_msf basics") {
  CHECK(oracle_msf(GraphSnapshot(5)).empty());
  auto f = oracle_msf(triangle());
  CHECK(f == std::set<EdgeId>{canonical_eid(0, 1), canonical_eid(1, 2)});
}

TEST_CASE("oracle_msf agrees with Prim on random graphs") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    auto g = random_graph(1000, 3000, seed);
    CHECK(oracle_msf(g) == oracle_msf_prim(g));
  }
}

TEST_CASE("IncrementalMsf tracks oracle_msf across single updates") {
  std::mt19937_64 rng(9);
  auto g = random_graph(64, 120, 5);
  IncrementalMsf inc(g);
  std::uniform_int_distribution<VertexId> vd(0, 63);
  std::uniform_real_distribution<double> wd(0.0, 1.0);
  for (int step = 0; step < 200; ++step) {
    if (inc.graph().m() > 0 && rng() % 2 == 0) {
      auto it = inc.graph().edges.begin();
      std::advance(it, rng() % inc.graph().m());
      inc.remove(it->first);
    } else {
      VertexId u = vd(rng), v = vd(rng);
      if (u == v) continue;
      EdgeId eid = canonical_eid(u, v);
      if (inc.graph().has(eid)) continue;
      inc.insert(WeightedEdge(u, v, wd(rng)));
    }
    REQUIRE(inc.forest() == oracle_msf(inc.graph()));
  }
}

TEST_CASE("oracle_bridges") {
  SUBCASE("tree: every edge is a bridge") {
    GraphSnapshot g(5);
    for (VertexId v = 1; v < 5; ++v)
      g.edges.emplace(canonical_eid(0, v), WeightedEdge(0, v, 1.0));
    CHECK(oracle_bridges(g).size() == 4);
  }
  SUBCASE("cycle: no bridges") {
    GraphSnapshot g(4);
    for (VertexId v = 0; v < 4; ++v) {
      VertexId w = (v + 1) % 4;
      g.edges.emplace(canonical_eid(v, w), WeightedEdge(v, w, 1.0));
    }
    CHECK(oracle_bridges(g).empty());
  }
  SUBCASE("agrees with deletion brute force, n <= 64") {
    for (std::uint64_t seed : {11u, 12u, 13u, 14u}) {
      auto g = random_graph(48, 60, seed);
      CHECK(oracle_bridges(g) == oracle_bridges_by_deletion(g));
    }
  }
}

TEST_CASE("oracle_path_max") {
  GraphSnapshot path(3);
  path.edges.emplace(canonical_eid(0, 1), WeightedEdge(0, 1, 5.0));
  path.edges.emplace(canonical_eid(1, 2), WeightedEdge(1, 2, 7.0));
  CHECK(oracle_path_max(path, 0, 1)->weight == 5.0);
  CHECK(oracle_path_max(path, 0, 2)->weight == 7.0);
  CHECK(!oracle_path_max(path, 1, 1).has_value());

  GraphSnapshot split(4);
  split.edges.emplace(canonical_eid(0, 1), WeightedEdge(0, 1, 1.0));
  CHECK_THROWS_AS(oracle_path_max(split, 0, 3), Error);
}

TEST_CASE("oracle_path_max agrees with all-pairs DP on random trees") {
  for (std::uint64_t seed : {3u, 4u}) {
    std::mt19937_64 rng(seed);
    std::size_t n = 100;
    GraphSnapshot tree(n);
    std::uniform_real_distribution<double> wd(0.0, 1.0);
    for (VertexId v = 1; v < n; ++v) {
      VertexId p = static_cast<VertexId>(rng() % v);
      tree.edges.emplace(canonical_eid(p, v), WeightedEdge(p, v, wd(rng)));
    }
    // DP over vertices added in id order: pathmax[u][v]
    std::vector<std::vector<WeightedEdge>> adj(n);
    for (auto& [_, e] : tree.edges) {
      adj[e.u].push_back(e);
      adj[e.v].push_back(e);
    }
    std::vector<std::vector<double>> best(n, std::vector<double>(n, -1.0));
    for (VertexId s = 0; s < n; ++s) {
      // BFS carrying max edge weight
      std::vector<VertexId> order{s};
      std::vector<bool> seen(n, false);
      seen[s] = true;
      for (std::size_t i = 0; i < order.size(); ++i) {
        VertexId x = order[i];
        for (auto& e : adj[x]) {
          VertexId y = e.u == x ? e.v : e.u;
          if (!seen[y]) {
            seen[y] = true;
            best[s][y] = std::max(best[s][x], e.weight);
            order.push_back(y);
          }
        }
      }
    }
    for (int q = 0; q < 200; ++q) {
      VertexId u = static_cast<VertexId>(rng() % n), v = static_cast<VertexId>(rng() % n);
      if (u == v) continue;
      CHECK(oracle_path_max(tree, u, v)->weight == doctest::Approx(best[u][v]));
    }
  }
}

TEST_CASE("matching oracles") {
  GraphSnapshot g(4);
  CHECK(oracle_is_maximal_matching(g, {}));
  g.edges.emplace(canonical_eid(0, 1), WeightedEdge(0, 1, 1.0));
  CHECK(!oracle_is_maximal_matching(g, {}));
  CHECK(oracle_is_maximal_matching(g, {canonical_eid(0, 1)}));

  for (std::uint64_t seed : {21u, 22u}) {
    auto rg = random_graph(60, 150, seed);
    auto m = oracle_greedy_matching(rg);
    CHECK(oracle_is_matching(rg, m));
    CHECK(oracle_is_maximal_matching(rg, m));
  }
}
