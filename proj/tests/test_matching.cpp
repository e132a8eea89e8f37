#include <random>

#include "doctest.h"
#include "mpcdyn/matching.hpp"
#include "mpcdyn/oracles.hpp"

using namespace mpcdyn;
using mpc::Cluster;
using mpc::MpcConfig;

namespace {

MpcConfig mm_config(std::size_t n, std::uint64_t seed = 1) {
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

GraphSnapshot as_snapshot(std::size_t n, const std::vector<WeightedEdge>& es) {
  GraphSnapshot g(n);
  for (const auto& e : es) g.edges.emplace(e.eid, e);
  return g;
}

}  // namespace

TEST_CASE("matching bootstrap produces a maximal matching") {
  for (std::uint64_t seed : {3u, 4u}) {
    auto g = random_graph(80, 200, seed);
    Cluster c(mm_config(80, seed));
    MatchingDynamic mm(c, g);
    auto m = mm.matching_host();
    CHECK(oracles::oracle_is_maximal_matching(g, m));
  }
}

TEST_CASE("matching batch semantics") {
  SUBCASE("empty batch emits nothing") {
    auto g = random_graph(24, 40, 5);
    Cluster c(mm_config(24));
    MatchingDynamic mm(c, g);
    auto script = mm.process_batch({});
    CHECK(script.empty());
  }
  SUBCASE("deleting only unmatched edges keeps the matching") {
    GraphSnapshot g(4);
    g.edges.emplace(canonical_eid(0, 1), WeightedEdge(0, 1, 1.0));
    g.edges.emplace(canonical_eid(1, 2), WeightedEdge(1, 2, 1.0));
    g.edges.emplace(canonical_eid(2, 3), WeightedEdge(2, 3, 1.0));
    Cluster c(mm_config(4));
    MatchingDynamic mm(c, g);
    auto m0 = mm.matching_host();
    // find an unmatched edge to delete
    EdgeId victim = kNoEdge;
    for (auto& [eid, e] : g.edges)
      if (!m0.count(eid)) victim = eid;
    REQUIRE(victim != kNoEdge);
    Batch b{{UpdateOp::remove(eid_lo(victim), eid_hi(victim))}};
    auto script = mm.process_batch(b);
    CHECK(script.empty());
    CHECK(mm.matching_host() == m0);
  }
  SUBCASE("deleting a matched edge repairs maximality (M={ab}, bc present)") {
    GraphSnapshot g(3);
    g.edges.emplace(canonical_eid(0, 1), WeightedEdge(0, 1, 1.0));
    Cluster c(mm_config(3));
    MatchingDynamic mm(c, g);
    REQUIRE(mm.matching_host() == std::set<EdgeId>{canonical_eid(0, 1)});
    Batch grow{{UpdateOp::insert(1, 2, 1.0)}};
    mm.process_batch(grow);  // bc cannot extend: b is matched
    REQUIRE(mm.matching_host() == std::set<EdgeId>{canonical_eid(0, 1)});
    Batch b{{UpdateOp::remove(0, 1)}};
    auto script = mm.process_batch(b);
    REQUIRE(script.size() == 2);
    CHECK(!script[0].add);
    CHECK(script[0].edge.eid == canonical_eid(0, 1));
    CHECK(script[1].add);
    CHECK(script[1].edge.eid == canonical_eid(1, 2));
    CHECK(mm.matching_host() == std::set<EdgeId>{canonical_eid(1, 2)});
  }
  SUBCASE("insert between two unmatched isolated vertices joins the matching") {
    GraphSnapshot g(4);
    Cluster c(mm_config(4));
    MatchingDynamic mm(c, g);
    Batch b{{UpdateOp::insert(1, 3, 1.0)}};
    auto script = mm.process_batch(b);
    REQUIRE(script.size() == 1);
    CHECK(script[0].add);
    CHECK(mm.matching_host() == std::set<EdgeId>{canonical_eid(1, 3)});
  }
  SUBCASE("insert between matched vertices is not a candidate") {
    GraphSnapshot g(4);
    g.edges.emplace(canonical_eid(0, 1), WeightedEdge(0, 1, 1.0));
    g.edges.emplace(canonical_eid(2, 3), WeightedEdge(2, 3, 1.0));
    Cluster c(mm_config(4));
    MatchingDynamic mm(c, g);
    REQUIRE(mm.matching_host().size() == 2);
    Batch b{{UpdateOp::insert(1, 2, 1.0)}};
    auto script = mm.process_batch(b);
    CHECK(script.empty());
  }
  SUBCASE("invalid ops are rejected with their index") {
    GraphSnapshot g(4);
    g.edges.emplace(canonical_eid(0, 1), WeightedEdge(0, 1, 1.0));
    Cluster c(mm_config(4));
    MatchingDynamic mm(c, g);
    Batch b{{UpdateOp::remove(2, 3)}};
    try {
      mm.process_batch(b);
      FAIL("expected InvalidOp");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::InvalidOp);
      CHECK(e.index() == 0);
    }
  }
}

TEST_CASE("matching randomized batches keep validity, maximality and |U'| <= 3k") {
  std::size_t n = 96;
  auto g = random_graph(n, 300, 17);
  Cluster c(mm_config(n, 17));
  MatchingDynamic mm(c, g);
  std::mt19937_64 rng(18);
  GraphSnapshot cursor = g;
  for (int round = 0; round < 8; ++round) {
    Batch b;
    std::uniform_int_distribution<VertexId> vd(0, static_cast<VertexId>(n - 1));
    for (int i = 0; i < 12; ++i) {
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
    auto before = mm.matching_host();
    auto script = mm.process_batch(b);
    CHECK(script.size() <= 3 * b.k());
    auto m = mm.matching_host();
    CHECK(oracles::oracle_is_matching(cursor, m));
    CHECK(oracles::oracle_is_maximal_matching(cursor, m));

    // cover bound: everything that could extend M' is covered by the <= 2k
    // update endpoints
    {
      std::set<EdgeId> mprime = before;
      std::set<VertexId> cover;
      for (const auto& op : b.ops) {
        if (op.kind == OpKind::Delete) mprime.erase(op.edge.eid);
        cover.insert(op.edge.u);
        cover.insert(op.edge.v);
      }
      CHECK(cover.size() <= 2 * b.k());
      std::set<VertexId> used;
      for (EdgeId eid : mprime) {
        used.insert(eid_lo(eid));
        used.insert(eid_hi(eid));
      }
      for (const auto& [eid, e] : cursor.edges) {
        if (used.count(e.u) || used.count(e.v)) continue;
        bool covered = cover.count(e.u) || cover.count(e.v);
        CHECK(covered);
      }
    }
    // script ops are individually valid in order
    std::set<VertexId> matched_now;
    for (auto& [eid, e] : cursor.edges) (void)eid;
    std::set<EdgeId> replay;
    for (const auto& op : script) {
      if (op.add) {
        CHECK(!replay.count(op.edge.eid));
        replay.insert(op.edge.eid);
      } else {
        replay.erase(op.edge.eid);
      }
    }
    (void)matched_now;
  }
  CHECK(c.metrics().violations.empty());
}

TEST_CASE("phases engage when the residual outgrows the local-finish budget") {
  // dense neighborhoods around the update endpoints + a small machine budget
  // force the stage machinery through the real batch path
  std::size_t n = 600;
  std::size_t hubs = 12;
  GraphSnapshot g(n);
  // hub i is matched to partner i; everything else is fodder around the hubs
  for (std::size_t h = 0; h < hubs; ++h) {
    VertexId hub = static_cast<VertexId>(h);
    VertexId partner = static_cast<VertexId>(hubs + h);
    g.edges.emplace(canonical_eid(hub, partner), WeightedEdge(hub, partner, 1.0));
    for (VertexId leaf = static_cast<VertexId>(2 * hubs + h * 45);
         leaf < 2 * hubs + (h + 1) * 45; ++leaf)
      g.edges.emplace(canonical_eid(hub, leaf), WeightedEdge(hub, leaf, 1.0));
  }
  mpc::MpcConfig cfg;
  cfg.n = n;
  cfg.alpha = 0.5;
  cfg.machines = 8;
  cfg.words_per_machine = 2400;  // local finish only below ~400 candidate edges
  cfg.message_cap = 4 * cfg.words_per_machine;
  cfg.seed = 3;
  mpc::Cluster c(cfg);
  MatchingDynamic mm(c, g);
  REQUIRE(oracles::oracle_is_maximal_matching(g, mm.matching_host()));

  // free every hub at once: candidates = all hub-leaf edges (~540 > 106)
  Batch b;
  auto matched = mm.matching_host();
  for (std::size_t h = 0; h < hubs; ++h) {
    VertexId hub = static_cast<VertexId>(h);
    for (auto& [eid, e] : g.edges)
      if (matched.count(eid) && (e.u == hub || e.v == hub))
        b.ops.push_back(UpdateOp::remove(e.u, e.v));
  }
  REQUIRE(!b.ops.empty());
  auto cursor = apply_batch(g, b);
  auto script = mm.process_batch(b);
  CHECK(mm.last_stats().phases >= 1);
  CHECK(script.size() <= 3 * std::max<std::size_t>(b.k(), 1));
  CHECK(oracles::oracle_is_matching(cursor, mm.matching_host()));
  CHECK(oracles::oracle_is_maximal_matching(cursor, mm.matching_host()));
}

TEST_CASE("degree reduction phase on synthetic cover instances") {
  // star-heavy instance: cover vertices with degree exactly delta
  std::size_t delta = 64;
  std::size_t covers = 6;
  std::vector<WeightedEdge> edges;
  std::vector<VertexId> cover;
  VertexId next = 0;
  std::vector<VertexId> centers;
  for (std::size_t s = 0; s < covers; ++s) {
    centers.push_back(next);
    cover.push_back(next);
    next++;
  }
  VertexId leaf = static_cast<VertexId>(covers);
  std::mt19937_64 rng(7);
  for (std::size_t s = 0; s < covers; ++s)
    for (std::size_t d = 0; d < delta; ++d)
      edges.emplace_back(centers[s], leaf++, 1.0);
  std::size_t n = leaf;

  Cluster c(mm_config(n, 7));
  MatchingDynamic mm(c, as_snapshot(n, {}));
  int reduced = 0, trials = 20;
  for (int t = 0; t < trials; ++t) {
    auto ps = mm.run_single_phase(edges, cover, 1000 + t);
    CHECK(ps.max_cover_degree_before == delta);
    double bound = 2.0 * std::pow(static_cast<double>(delta), 0.999);
    if (static_cast<double>(ps.max_cover_degree_after) <= bound) reduced++;
  }
  CHECK(reduced >= trials * 9 / 10);
}
