#include <random>
#include <set>

#include "doctest.h"
#include "mpcdyn/graph.hpp"

using namespace mpcdyn;

TEST_CASE("canonical_eid is symmetric and injective") {
  CHECK(canonical_eid(3, 7) == canonical_eid(7, 3));
  CHECK(canonical_eid(0, 1) != canonical_eid(0, 2));
  CHECK_THROWS_AS(canonical_eid(4, 4), Error);

  // exhaustive collision scan for n = 50
  std::set<EdgeId> seen;
  for (VertexId u = 0; u < 50; ++u)
    for (VertexId v = u + 1; v < 50; ++v) CHECK(seen.insert(canonical_eid(u, v)).second);
}

TEST_CASE("WeightedEdge stores canonically and orders by (weight, eid)") {
  WeightedEdge e(7, 3, 1.5);
  CHECK(e.u == 3);
  CHECK(e.v == 7);
  WeightedEdge a(0, 1, 1.0), b(0, 2, 1.0), c(1, 2, 0.5);
  CHECK(c < a);
  CHECK(a < b);  // equal weight, eid breaks the tie
}

TEST_CASE("apply_batch basics") {
  GraphSnapshot g(4);

  SUBCASE("single insert on empty graph") {
    Batch b{{UpdateOp::insert(0, 1, 3.0)}};
    auto g2 = apply_batch(g, b);
    CHECK(g2.m() == 1);
    CHECK(g2.has(canonical_eid(0, 1)));
  }

  SUBCASE("insert then delete is the inverse") {
    auto g2 = apply_batch(g, Batch{{UpdateOp::insert(0, 1, 3.0)}});
    auto g3 = apply_batch(g2, Batch{{UpdateOp::remove(0, 1)}});
    CHECK(g3.m() == 0);
  }

  SUBCASE("delete+insert re-weights an edge within one batch") {
    GraphSnapshot tri(3);
    tri = apply_batch(tri, Batch{{UpdateOp::insert(0, 1, 1.0), UpdateOp::insert(1, 2, 2.0),
                                  UpdateOp::insert(0, 2, 3.0)}});
    auto out = apply_batch(tri, Batch{{UpdateOp::remove(0, 1), UpdateOp::insert(0, 1, 9.0)}});
    CHECK(out.m() == 3);
    CHECK(out.edges.at(canonical_eid(0, 1)).weight == 9.0);
  }

  SUBCASE("invalid ops name the index") {
    Batch bad{{UpdateOp::insert(0, 1, 1.0), UpdateOp::remove(2, 3)}};
    try {
      apply_batch(g, bad);
      FAIL("expected InvalidOp");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::InvalidOp);
      CHECK(e.index() == 1);
    }
    CHECK(validate_batch(g, bad) == 1);
  }

  SUBCASE("duplicate insert rejected") {
    auto g2 = apply_batch(g, Batch{{UpdateOp::insert(0, 1, 3.0)}});
    CHECK_THROWS_AS(apply_batch(g2, Batch{{UpdateOp::insert(1, 0, 5.0)}}), Error);
  }
}

TEST_CASE("apply_batch is associative over batch concatenation") {
  std::mt19937_64 rng(42);
  for (int trial = 0; trial < 20; ++trial) {
    GraphSnapshot g(12);
    Batch all;
    GraphSnapshot cursor = g;
    for (int i = 0; i < 30; ++i) {
      // generate a valid op against the running state
      std::uniform_int_distribution<VertexId> vd(0, 11);
      VertexId u = vd(rng), v = vd(rng);
      if (u == v) continue;
      EdgeId eid = canonical_eid(u, v);
      UpdateOp op = cursor.has(eid)
                        ? UpdateOp::remove(u, v)
                        : UpdateOp::insert(u, v, std::uniform_real_distribution<>(0, 1)(rng));
      all.ops.push_back(op);
      cursor = apply_batch(cursor, Batch{{op}});
    }
    std::uniform_int_distribution<std::size_t> cut(0, all.ops.size());
    std::size_t mid = cut(rng);
    Batch b1, b2;
    b1.ops.assign(all.ops.begin(), all.ops.begin() + mid);
    b2.ops.assign(all.ops.begin() + mid, all.ops.end());
    auto lhs = apply_batch(apply_batch(g, b1), b2);
    auto rhs = apply_batch(g, all);
    CHECK(lhs.edges.size() == rhs.edges.size());
    for (const auto& [eid, e] : rhs.edges) {
      REQUIRE(lhs.has(eid));
      CHECK(lhs.edges.at(eid).weight == e.weight);
    }
  }
}
