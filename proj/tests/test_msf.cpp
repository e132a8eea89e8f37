#include <random>

#include "doctest.h"
#include "mpcdyn/msf.hpp"
#include "mpcdyn/oracles.hpp"

using namespace mpcdyn;
using mpc::Cluster;
using mpc::MpcConfig;

namespace {

MpcConfig msf_config(std::size_t n, double alpha = 0.5, std::uint64_t seed = 1) {
  MpcConfig cfg;
  cfg.n = n;
  cfg.alpha = alpha;
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

// a-b-c-d-a cycle with weights ab=1, bc=2, cd=3, da=4 (a=0 .. d=3)
GraphSnapshot square_cycle() {
  GraphSnapshot g(4);
  for (auto [u, v, w] :
       {std::tuple{0, 1, 1.0}, {1, 2, 2.0}, {2, 3, 3.0}, {0, 3, 4.0}})
    g.edges.emplace(canonical_eid(u, v), WeightedEdge(u, v, w));
  return g;
}

UpdateOp valid_random_op(std::mt19937_64& rng, GraphSnapshot& g) {
  std::uniform_int_distribution<VertexId> vd(0, static_cast<VertexId>(g.n - 1));
  std::uniform_real_distribution<double> wd(0.0, 1.0);
  for (;;) {
    if (g.m() > 0 && rng() % 2 == 0) {
      auto it = g.edges.begin();
      std::advance(it, rng() % g.m());
      UpdateOp op = UpdateOp::remove(it->second.u, it->second.v);
      g.edges.erase(it);
      return op;
    }
    VertexId u = vd(rng), v = vd(rng);
    if (u == v) continue;
    EdgeId eid = canonical_eid(u, v);
    if (g.has(eid)) continue;
    UpdateOp op = UpdateOp::insert(u, v, wd(rng));
    g.edges.emplace(eid, op.edge);
    return op;
  }
}

}  // namespace

TEST_CASE("msf preprocessing") {
  SUBCASE("empty graph gives an empty forest") {
    Cluster c(msf_config(8));
    MsfDynamic msf(c, GraphSnapshot(8));
    CHECK(msf.forest_edges_host().empty());
  }
  SUBCASE("triangle keeps the two lightest edges") {
    GraphSnapshot g(3);
    g.edges.emplace(canonical_eid(0, 1), WeightedEdge(0, 1, 1.0));
    g.edges.emplace(canonical_eid(1, 2), WeightedEdge(1, 2, 2.0));
    g.edges.emplace(canonical_eid(0, 2), WeightedEdge(0, 2, 3.0));
    Cluster c(msf_config(3));
    MsfDynamic msf(c, g);
    CHECK(msf.forest_edges_host() ==
          std::set<EdgeId>{canonical_eid(0, 1), canonical_eid(1, 2)});
  }
  SUBCASE("random graphs match the Kruskal oracle exactly") {
    for (std::uint64_t seed : {2u, 3u, 4u}) {
      auto g = random_graph(300, 900, seed);
      Cluster c(msf_config(300, 0.5, seed));
      MsfDynamic msf(c, g);
      CHECK(msf.forest_edges_host() == oracles::oracle_msf(g));
      msf.trees().host_dump().check_invariants();
    }
  }
}

TEST_CASE("replacement candidates") {
  SUBCASE("deleting a non-forest edge needs no replacement") {
    auto g = square_cycle();
    Cluster c(msf_config(4));
    MsfDynamic msf(c, g);
    // forest = {ab, bc, cd}; da is the non-forest edge
    auto r = msf.compute_replacement_candidates({canonical_eid(0, 3)});
    CHECK(r.empty());
  }
  SUBCASE("cycle a-b-c-d-a, delete cd -> R = {da}") {
    auto g = square_cycle();
    Cluster c(msf_config(4));
    MsfDynamic msf(c, g);
    auto r = msf.compute_replacement_candidates({canonical_eid(2, 3)});
    REQUIRE(r.size() == 1);
    CHECK(r[0].eid == canonical_eid(0, 3));
  }
  SUBCASE("deleting a whole component yields nothing") {
    GraphSnapshot g(4);
    g.edges.emplace(canonical_eid(0, 1), WeightedEdge(0, 1, 1.0));
    g.edges.emplace(canonical_eid(2, 3), WeightedEdge(2, 3, 1.0));
    Cluster c(msf_config(4));
    MsfDynamic msf(c, g);
    auto r = msf.compute_replacement_candidates({canonical_eid(0, 1)});
    CHECK(r.empty());
  }
  SUBCASE("random deletions agree with a Kruskal oracle on G - D") {
    auto g = random_graph(200, 700, 9);
    Cluster c(msf_config(200));
    MsfDynamic msf(c, g);
    auto forest = msf.forest_edges_host();
    std::mt19937_64 rng(10);
    std::vector<EdgeId> del;
    for (EdgeId eid : forest) {
      if (del.size() >= 12) break;
      if (rng() % 4 == 0) del.push_back(eid);
    }
    auto r = msf.compute_replacement_candidates(del);
    CHECK(r.size() <= del.size());
    // oracle: MSF of G-D must be covered by (F - D) + R
    GraphSnapshot gd = g;
    for (EdgeId eid : del) gd.edges.erase(eid);
    auto new_forest = oracles::oracle_msf(gd);
    std::set<EdgeId> cover;
    for (EdgeId eid : forest)
      if (!std::count(del.begin(), del.end(), eid)) cover.insert(eid);
    for (const auto& e : r) cover.insert(e.eid);
    for (EdgeId eid : new_forest) CHECK(cover.count(eid) == 1);
  }
}

TEST_CASE("msf batch processing: spec examples") {
  SUBCASE("empty batch") {
    auto g = square_cycle();
    Cluster c(msf_config(4));
    MsfDynamic msf(c, g);
    auto before = msf.forest_edges_host();
    auto script = msf.process_batch({});
    CHECK(script.ops.empty());
    CHECK(script.prefix.empty());
    CHECK(msf.forest_edges_host() == before);
  }
  SUBCASE("insert ac with weight 0.5 evicts bc") {
    auto g = square_cycle();
    Cluster c(msf_config(4));
    MsfDynamic msf(c, g);
    Batch b{{UpdateOp::insert(0, 2, 0.5)}};
    auto script = msf.process_batch(b);
    REQUIRE(script.ops.size() == 2);
    CHECK(script.ops[0].insert);
    CHECK(script.ops[0].edge.eid == canonical_eid(0, 2));
    CHECK(!script.ops[1].insert);
    CHECK(script.ops[1].edge.eid == canonical_eid(1, 2));
    REQUIRE(script.prefix.size() == 1);
    CHECK(script.prefix[0] == 2);
    CHECK(msf.forest_edges_host() == oracles::oracle_msf(apply_batch(g, b)));
  }
  SUBCASE("delete cd pulls in da") {
    auto g = square_cycle();
    Cluster c(msf_config(4));
    MsfDynamic msf(c, g);
    Batch b{{UpdateOp::remove(2, 3)}};
    auto script = msf.process_batch(b);
    REQUIRE(script.ops.size() == 2);
    CHECK(!script.ops[0].insert);
    CHECK(script.ops[0].edge.eid == canonical_eid(2, 3));
    CHECK(script.ops[1].insert);
    CHECK(script.ops[1].edge.eid == canonical_eid(0, 3));
    CHECK(script.prefix[0] == 2);
    CHECK(msf.forest_edges_host() == oracles::oracle_msf(apply_batch(g, b)));
  }
  SUBCASE("invalid op is rejected with its index") {
    auto g = square_cycle();
    Cluster c(msf_config(4));
    MsfDynamic msf(c, g);
    Batch b{{UpdateOp::insert(0, 1, 9.0)}};  // already present
    try {
      msf.process_batch(b);
      FAIL("expected InvalidOp");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::InvalidOp);
      CHECK(e.index() == 0);
    }
  }
}

TEST_CASE("msf prefix exactness on randomized batches") {
  for (std::uint64_t seed : {21u, 22u}) {
    std::size_t n = 96;
    auto g = random_graph(n, 240, seed);
    Cluster c(msf_config(n, 0.5, seed));
    MsfDynamic msf(c, g);
    oracles::IncrementalMsf oracle(g);
    std::mt19937_64 rng(seed * 7 + 1);
    GraphSnapshot cursor = g;

    for (int round = 0; round < 6; ++round) {
      Batch b;
      for (int i = 0; i < 10; ++i) b.ops.push_back(valid_random_op(rng, cursor));
      auto script = msf.process_batch(b);
      REQUIRE(script.prefix.size() == b.k());

      // replay the script prefix by prefix against the incremental oracle
      std::set<EdgeId> forest = oracle.forest();
      std::map<EdgeId, WeightedEdge> forest_edges;  // current script-side forest
      // reconstruct F from the oracle before the batch
      std::size_t applied = 0;
      for (std::size_t x = 0; x < b.k(); ++x) {
        if (b.ops[x].kind == OpKind::Insert)
          oracle.insert(b.ops[x].edge);
        else
          oracle.remove(b.ops[x].edge.eid);
        while (applied < script.prefix[x]) {
          const auto& op = script.ops[applied];
          if (op.insert)
            forest.insert(op.edge.eid);
          else
            forest.erase(op.edge.eid);
          ++applied;
        }
        REQUIRE(forest == oracle.forest());
      }
      CHECK(msf.forest_edges_host() == oracle.forest());
      CHECK(msf.last_stats().separator_size <= 4 * b.k());
      CHECK(msf.last_stats().replacements <= msf.last_stats().deletions);
      msf.trees().host_dump().check_invariants();
      (void)forest_edges;
    }
    CHECK(c.metrics().violations.empty());
  }
}

TEST_CASE("msf grows from an empty graph through batches") {
  std::size_t n = 24;
  Cluster c(msf_config(n));
  MsfDynamic msf(c, GraphSnapshot(n));
  GraphSnapshot cursor(n);
  oracles::IncrementalMsf oracle(cursor);

  // a path, a re-weight, and a few cuts, all through the batch machinery
  Batch grow;
  for (VertexId v = 0; v + 1 < 12; ++v) grow.ops.push_back(UpdateOp::insert(v, v + 1, 1.0 + v));
  Batch churn{{UpdateOp::remove(3, 4), UpdateOp::insert(3, 4, 0.25),
               UpdateOp::insert(0, 11, 0.5), UpdateOp::remove(5, 6)}};
  for (const Batch* b : {&grow, &churn}) {
    auto script = msf.process_batch(*b);
    REQUIRE(script.prefix.size() == b->k());
    for (const auto& op : b->ops) {
      if (op.kind == OpKind::Insert)
        oracle.insert(op.edge);
      else
        oracle.remove(op.edge.eid);
    }
    CHECK(msf.forest_edges_host() == oracle.forest());
    msf.trees().host_dump().check_invariants();
  }
}

TEST_CASE("msf final state matches a fresh preprocess") {
  std::size_t n = 64;
  auto g = random_graph(n, 160, 31);
  Cluster c(msf_config(n));
  MsfDynamic msf(c, g);
  std::mt19937_64 rng(32);
  GraphSnapshot cursor = g;
  Batch b;
  for (int i = 0; i < 12; ++i) b.ops.push_back(valid_random_op(rng, cursor));
  msf.process_batch(b);

  Cluster c2(msf_config(n));
  MsfDynamic fresh(c2, cursor);
  CHECK(msf.forest_edges_host() == fresh.forest_edges_host());
}
