#include <random>

#include "doctest.h"
#include "mpcdyn/oracles.hpp"
#include "mpcdyn/twoecc.hpp"

using namespace mpcdyn;
using mpc::Cluster;
using mpc::MpcConfig;

namespace {

MpcConfig ecc_config(std::size_t n, std::uint64_t seed = 1) {
  MpcConfig cfg;
  cfg.n = n;
  cfg.alpha = 0.5;
  cfg.machines = 8;
  cfg.words_per_machine = 16384;
  cfg.message_cap = 4 * cfg.words_per_machine;
  cfg.seed = seed;
  return cfg;
}

GraphSnapshot random_graph(std::size_t n, std::size_t m, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  GraphSnapshot g(n);
  std::uniform_int_distribution<VertexId> vd(0, static_cast<VertexId>(n - 1));
  while (g.m() < m) {
    VertexId u = vd(rng), v = vd(rng);
    if (u == v) continue;
    EdgeId eid = canonical_eid(u, v);
    if (g.has(eid)) continue;
    g.edges.emplace(eid, WeightedEdge(u, v, 1.0));
  }
  return g;
}

// label partitions agree as set partitions over the non-isolated vertices;
// the literal root label is scoped per connected component
void check_partition_matches(const GraphSnapshot& g, const TwoEccDynamic& ecc) {
  auto oracle_bridges = oracles::oracle_bridges(g);
  auto oracle_part = oracles::oracle_2ecc_partition(g, oracle_bridges);
  auto comp = oracles::oracle_components(g);
  auto labels = ecc.labels_host();
  std::map<std::pair<std::uint64_t, std::uint32_t>, std::set<VertexId>> by_label;
  for (auto [v, lbl] : labels) by_label[{lbl, comp[v]}].insert(v);
  std::map<std::uint32_t, std::set<VertexId>> oracle_by;
  std::set<VertexId> covered;
  for (auto [v, _] : labels) covered.insert(v);
  for (VertexId v : covered) oracle_by[oracle_part[v]].insert(v);
  std::set<std::set<VertexId>> a, b;
  for (auto& [_, s] : by_label) a.insert(s);
  for (auto& [_, s] : oracle_by) b.insert(s);
  CHECK(a == b);
}

}  // namespace

TEST_CASE("prime selection and modular arithmetic") {
  CHECK(smallest_prime_above(1) == 2);
  CHECK(smallest_prime_above(16) == 17);
  CHECK(smallest_prime_above(256 * 256 * 256 * 256ull) > 256ull * 256 * 256 * 256);
  CHECK(is_prime_u64(smallest_prime_above(68719476736ull)));
  CHECK(powmod(7, 0, 101) == 1);
  CHECK(powmod(7, 3, 101) == (343 % 101));
}

TEST_CASE("vertex_fingerprint") {
  SketchParams p;
  p.p = 101;
  p.z = 7;
  p.n = 16;

  SUBCASE("isolated vertex gives zero") {
    CHECK(vertex_fingerprint(3, {}, p) == 0);
  }
  SUBCASE("edge endpoints cancel") {
    WeightedEdge e(2, 5, 1.0);
    std::vector<WeightedEdge> inc{e};
    auto fa = vertex_fingerprint(2, inc, p);
    auto fb = vertex_fingerprint(5, inc, p);
    CHECK((fa + fb) % p.p == 0);
  }
  SUBCASE("fingerprints are linear over disjoint incident sets") {
    std::vector<WeightedEdge> a{WeightedEdge(4, 2, 1.0), WeightedEdge(4, 9, 1.0)};
    std::vector<WeightedEdge> b{WeightedEdge(1, 4, 1.0), WeightedEdge(4, 11, 1.0)};
    std::vector<WeightedEdge> both = a;
    both.insert(both.end(), b.begin(), b.end());
    CHECK(vertex_fingerprint(4, both, p) ==
          (vertex_fingerprint(4, a, p) + vertex_fingerprint(4, b, p)) % p.p);
  }
  SUBCASE("degree-3 vertex matches direct polynomial evaluation") {
    std::vector<WeightedEdge> inc{WeightedEdge(4, 2, 1.0), WeightedEdge(4, 9, 1.0),
                                  WeightedEdge(1, 4, 1.0)};
    std::uint64_t expect = 0;
    // +z^idx when 4 is the canonical low endpoint, -z^idx otherwise
    expect = (expect + p.p - powmod(7, 2 * 16 + 4, 101)) % p.p;  // (2,4): 4 high
    expect = (expect + powmod(7, 4 * 16 + 9, 101)) % p.p;        // (4,9): 4 low
    expect = (expect + p.p - powmod(7, 1 * 16 + 4, 101)) % p.p;  // (1,4): 4 high
    CHECK(vertex_fingerprint(4, inc, p) == expect);
  }
}

TEST_CASE("bridge scan") {
  SUBCASE("tree: every edge is a bridge") {
    GraphSnapshot g(6);
    for (VertexId v = 1; v < 6; ++v)
      g.edges.emplace(canonical_eid(v - 1, v), WeightedEdge(v - 1, v, 1.0));
    Cluster c(ecc_config(6));
    TwoEccDynamic ecc(c, g);
    CHECK(ecc.bridges().size() == 5);
  }
  SUBCASE("triangle: no bridges, all labeled root") {
    GraphSnapshot g(3);
    for (auto [u, v] : {std::pair{0, 1}, {1, 2}, {0, 2}})
      g.edges.emplace(canonical_eid(u, v), WeightedEdge(u, v, 1.0));
    Cluster c(ecc_config(3));
    TwoEccDynamic ecc(c, g);
    CHECK(ecc.bridges().empty());
    for (auto [v, lbl] : ecc.labels_host()) CHECK(lbl == kRootLabel);
  }
  SUBCASE("two triangles joined by one edge: exactly the joiner") {
    GraphSnapshot g(6);
    for (auto [u, v] : {std::pair{0, 1}, {1, 2}, {0, 2}, {3, 4}, {4, 5}, {3, 5}, {2, 3}})
      g.edges.emplace(canonical_eid(u, v), WeightedEdge(u, v, 1.0));
    Cluster c(ecc_config(6));
    TwoEccDynamic ecc(c, g);
    CHECK(ecc.bridges() == std::set<EdgeId>{canonical_eid(2, 3)});
    check_partition_matches(g, ecc);
  }
  SUBCASE("path of three vertices gets three distinct labels") {
    GraphSnapshot g(3);
    g.edges.emplace(canonical_eid(0, 1), WeightedEdge(0, 1, 1.0));
    g.edges.emplace(canonical_eid(1, 2), WeightedEdge(1, 2, 1.0));
    Cluster c(ecc_config(3));
    TwoEccDynamic ecc(c, g);
    auto labels = ecc.labels_host();
    REQUIRE(labels.size() == 3);
    std::set<std::uint64_t> distinct;
    for (auto [v, lbl] : labels) distinct.insert(lbl);
    CHECK(distinct.size() == 3);
  }
  SUBCASE("random graphs match the DFS low-link oracle") {
    for (std::uint64_t seed : {5u, 6u, 7u}) {
      auto g = random_graph(120, 150, seed);
      Cluster c(ecc_config(120, seed));
      TwoEccDynamic ecc(c, g);
      CHECK(ecc.bridges() == oracles::oracle_bridges(g));
      check_partition_matches(g, ecc);
    }
  }
}

TEST_CASE("twoecc on an empty graph") {
  Cluster c(ecc_config(8));
  TwoEccDynamic ecc(c, GraphSnapshot(8));
  CHECK(ecc.bridges().empty());
  CHECK(ecc.labels_host().empty());
  Batch b{{UpdateOp::insert(1, 2, 1.0)}};
  auto delta = ecc.process_batch(b);
  CHECK(delta.bridges_added.size() == 1);
  CHECK(ecc.bridges() == std::set<EdgeId>{canonical_eid(1, 2)});
}

TEST_CASE("twoecc batch processing") {
  SUBCASE("empty batch produces an empty delta") {
    auto g = random_graph(32, 40, 11);
    Cluster c(ecc_config(32));
    TwoEccDynamic ecc(c, g);
    auto delta = ecc.process_batch({});
    CHECK(delta.bridges_added.empty());
    CHECK(delta.bridges_removed.empty());
  }
  SUBCASE("insert closing the only cycle through a bridge removes it") {
    // path 0-1-2; adding 0-2 closes the cycle
    GraphSnapshot g(3);
    g.edges.emplace(canonical_eid(0, 1), WeightedEdge(0, 1, 1.0));
    g.edges.emplace(canonical_eid(1, 2), WeightedEdge(1, 2, 1.0));
    Cluster c(ecc_config(3));
    TwoEccDynamic ecc(c, g);
    REQUIRE(ecc.bridges().size() == 2);
    Batch b{{UpdateOp::insert(0, 2, 1.0)}};
    auto delta = ecc.process_batch(b);
    CHECK(ecc.bridges().empty());
    CHECK(delta.bridges_removed.size() == 2);
    CHECK(delta.bridges_added.empty());
  }
  SUBCASE("deleting one edge of a cycle pair makes the partner a bridge") {
    GraphSnapshot g(4);
    for (auto [u, v] : {std::pair{0, 1}, {1, 2}, {2, 3}, {0, 3}})
      g.edges.emplace(canonical_eid(u, v), WeightedEdge(u, v, 1.0));
    Cluster c(ecc_config(4));
    TwoEccDynamic ecc(c, g);
    REQUIRE(ecc.bridges().empty());
    Batch b{{UpdateOp::remove(2, 3)}};
    auto delta = ecc.process_batch(b);
    CHECK(ecc.bridges().size() == 3);
    CHECK(delta.bridges_added.size() == 3);
  }
  SUBCASE("randomized batches stay exact against the oracle") {
    std::size_t n = 64;
    auto g = random_graph(n, 90, 13);
    Cluster c(ecc_config(n, 13));
    TwoEccDynamic ecc(c, g);
    std::mt19937_64 rng(14);
    GraphSnapshot cursor = g;
    for (int round = 0; round < 6; ++round) {
      Batch b;
      for (int i = 0; i < 8; ++i) {
        std::uniform_int_distribution<VertexId> vd(0, static_cast<VertexId>(n - 1));
        for (;;) {
          if (cursor.m() > 0 && rng() % 2 == 0) {
            auto it = cursor.edges.begin();
            std::advance(it, rng() % cursor.m());
            b.ops.push_back(UpdateOp::remove(it->second.u, it->second.v));
            cursor.edges.erase(it);
            break;
          }
          VertexId u = vd(rng), v = vd(rng);
          if (u == v) continue;
          EdgeId eid = canonical_eid(u, v);
          if (cursor.has(eid)) continue;
          UpdateOp op = UpdateOp::insert(u, v, 1.0);
          cursor.edges.emplace(eid, op.edge);
          b.ops.push_back(op);
          break;
        }
      }
      ecc.process_batch(b);
      CHECK(ecc.bridges() == oracles::oracle_bridges(cursor));
      check_partition_matches(cursor, ecc);
    }
    CHECK(c.metrics().violations.empty());
  }
}
