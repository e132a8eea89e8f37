#include <map>
#include <cstring>
#include <queue>
#include <random>

#include "doctest.h"
#include "mpcdyn/oracles.hpp"
#include "mpcdyn/toptree.hpp"

using namespace mpcdyn;
using mpc::Cluster;
using mpc::MpcConfig;

namespace {

MpcConfig forest_config(std::size_t n, double alpha = 0.5, std::uint64_t seed = 1) {
  MpcConfig cfg;
  cfg.n = n;
  cfg.alpha = alpha;
  cfg.machines = 8;
  cfg.words_per_machine = 16384;
  cfg.message_cap = 4 * cfg.words_per_machine;
  cfg.seed = seed;
  return cfg;
}

std::vector<WeightedEdge> path_edges(std::size_t n, double w0 = 1.0) {
  std::vector<WeightedEdge> out;
  for (VertexId v = 0; v + 1 < n; ++v)
    out.emplace_back(v, v + 1, w0 + v);
  return out;
}

std::vector<WeightedEdge> star_edges(std::size_t leaves) {
  std::vector<WeightedEdge> out;
  for (VertexId v = 1; v <= leaves; ++v) out.emplace_back(0, v, 1.0 + v);
  return out;
}

std::vector<WeightedEdge> random_tree(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> wd(0.0, 1.0);
  std::vector<WeightedEdge> out;
  for (VertexId v = 1; v < n; ++v)
    out.emplace_back(static_cast<VertexId>(rng() % v), v, wd(rng));
  return out;
}

GraphSnapshot as_graph(std::size_t n, const std::vector<WeightedEdge>& es) {
  GraphSnapshot g(n);
  for (const auto& e : es) g.edges.emplace(e.eid, e);
  return g;
}

EdgeAggregate count_agg() {
  EdgeAggregate a;
  a.identity = {0, 0};
  a.leaf = [](const WeightedEdge&) { return AggValue{1, 0}; };
  a.combine = [](AggValue x, AggValue y) { return AggValue{x.a + y.a, 0}; };
  return a;
}

EdgeAggregate sum_agg() {
  EdgeAggregate a;
  a.identity = {0, 0};
  a.leaf = [](const WeightedEdge& e) {
    AggValue v;
    v.a = mpc::key_of_double(e.weight);
    double d = e.weight;
    std::memcpy(&v.a, &d, 8);
    return v;
  };
  a.combine = [](AggValue x, AggValue y) {
    double a2, b2;
    std::memcpy(&a2, &x.a, 8);
    std::memcpy(&b2, &y.a, 8);
    double s = a2 + b2;
    AggValue v;
    std::memcpy(&v.a, &s, 8);
    return v;
  };
  return a;
}

double as_double(AggValue v) {
  double d;
  std::memcpy(&d, &v.a, 8);
  return d;
}

EdgeAggregate max_agg() {
  // (weight, eid) maximum; identity = "none"
  EdgeAggregate a;
  a.identity = {0, kNoEdge};
  a.leaf = [](const WeightedEdge& e) { return AggValue{mpc::key_of_double(e.weight), e.eid}; };
  a.combine = [](AggValue x, AggValue y) {
    if (x.b == kNoEdge) return y;
    if (y.b == kNoEdge) return x;
    if (x.a != y.a) return x.a > y.a ? x : y;
    return x.b > y.b ? x : y;
  };
  return a;
}

EdgeAggregate xor_agg() {
  EdgeAggregate a;
  a.identity = {0, 0};
  a.leaf = [](const WeightedEdge& e) { return AggValue{e.eid, 0}; };
  a.combine = [](AggValue x, AggValue y) { return AggValue{x.a ^ y.a, 0}; };
  return a;
}

}  // namespace

TEST_CASE("build: single edge gives one leaf under one root") {
  Cluster c(forest_config(4));
  TopForest f(c, 4, 0.5);
  f.build({WeightedEdge(0, 1, 1.0)});
  auto h = f.host_dump();
  REQUIRE(h.nodes.size() == 2);
  h.check_invariants();
  int leaves = 0, roots = 0;
  for (auto& [id, nd] : h.nodes) {
    if (nd.is_leaf()) ++leaves;
    if (nd.parent == kNoNode) {
      ++roots;
      CHECK(nd.rank == 1);
    }
  }
  CHECK(leaves == 1);
  CHECK(roots == 1);
}

TEST_CASE("build: path of 200 vertices satisfies all invariants") {
  Cluster c(forest_config(200));
  TopForest f(c, 200, 0.5);
  f.build(path_edges(200));
  auto h = f.host_dump();
  h.check_invariants();
  // one tree: exactly one root, covering all 199 edges
  std::vector<std::uint64_t> roots;
  for (auto& [id, nd] : h.nodes)
    if (nd.parent == kNoNode) roots.push_back(id);
  REQUIRE(roots.size() == 1);
  CHECK(h.cluster_edges(roots[0]).size() == 199);
}

TEST_CASE("build: star K_{1,500} keeps boundary counts within c*b") {
  Cluster c(forest_config(501));
  TopForest f(c, 501, 0.5);
  f.build(star_edges(500));
  auto h = f.host_dump();
  h.check_invariants();  // includes the child-boundary <= c*b lemma bound
}

TEST_CASE("build: random trees across alphas hold invariants") {
  for (double alpha : {0.5, 1.0 / 3.0}) {
    for (std::uint64_t seed : {7u, 8u}) {
      Cluster c(forest_config(300, alpha, seed));
      TopForest f(c, 300, alpha);
      f.build(random_tree(300, seed));
      f.host_dump().check_invariants();
    }
  }
}

TEST_CASE("build rejects cycles") {
  Cluster c(forest_config(8));
  TopForest f(c, 8, 0.5);
  std::vector<WeightedEdge> cyc = {WeightedEdge(0, 1, 1), WeightedEdge(1, 2, 2),
                                   WeightedEdge(0, 2, 3)};
  CHECK_THROWS_AS(f.build(cyc), Error);
}

TEST_CASE("batch_link and batch_cut against a union-find oracle") {
  std::mt19937_64 rng(42);
  std::size_t n = 260;
  Cluster c(forest_config(n));
  TopForest f(c, n, 0.5);
  GraphSnapshot forest(n);

  for (int round = 0; round < 12; ++round) {
    // random links that keep the structure a forest
    std::vector<WeightedEdge> links;
    {
      auto comp = oracles::oracle_components(forest);
      oracles::UnionFind uf(n);
      for (auto& [eid, e] : forest.edges) uf.unite(e.u, e.v);
      for (int t = 0; t < 40 && links.size() < 16; ++t) {
        VertexId u = static_cast<VertexId>(rng() % n), v = static_cast<VertexId>(rng() % n);
        if (u == v || uf.find(u) == uf.find(v)) continue;
        uf.unite(u, v);
        links.emplace_back(u, v, std::uniform_real_distribution<>(0, 1)(rng));
      }
      (void)comp;
    }
    f.batch_link(links);
    for (const auto& e : links) forest.edges.emplace(e.eid, e);
    f.host_dump().check_invariants();

    // random cuts
    std::vector<EdgeId> cuts;
    for (auto& [eid, e] : forest.edges) {
      if (cuts.size() >= 8) break;
      if (rng() % 3 == 0) cuts.push_back(eid);
    }
    f.batch_cut(cuts);
    for (EdgeId eid : cuts) forest.edges.erase(eid);
    f.host_dump().check_invariants();

    // component oracle agreement
    auto expect = oracles::oracle_components(forest);
    std::vector<VertexId> queries;
    for (VertexId v = 0; v < n; ++v) queries.push_back(v);
    auto got = f.component_of(queries);
    for (VertexId v = 0; v < n; ++v) CHECK(got[v] == expect[v]);
  }
}

TEST_CASE("link validation") {
  Cluster c(forest_config(10));
  TopForest f(c, 10, 0.5);
  f.build(path_edges(5));

  SUBCASE("edge inside one tree is rejected") {
    CHECK_THROWS_AS(f.batch_link({WeightedEdge(0, 3, 9.0)}), Error);
  }
  SUBCASE("in-batch cycle is rejected") {
    std::vector<WeightedEdge> b = {WeightedEdge(6, 7, 1), WeightedEdge(7, 8, 1),
                                   WeightedEdge(6, 8, 1)};
    CHECK_THROWS_AS(f.batch_link(b), Error);
  }
  SUBCASE("joining 17 trees with 16 links gives one balanced tree") {
    Cluster c2(forest_config(600));
    TopForest f2(c2, 600, 0.5);
    std::vector<WeightedEdge> all;
    // 17 disjoint paths of 32 vertices
    for (int t = 0; t < 17; ++t)
      for (int i = 0; i < 31; ++i) {
        VertexId base = static_cast<VertexId>(t * 32);
        all.emplace_back(base + i, base + i + 1, 0.5 + i + t);
      }
    f2.build(all);
    std::vector<WeightedEdge> joins;
    std::mt19937_64 rng(5);
    for (int t = 0; t + 1 < 17; ++t) {
      VertexId u = static_cast<VertexId>(t * 32 + rng() % 32);
      VertexId v = static_cast<VertexId>((t + 1) * 32 + rng() % 32);
      joins.emplace_back(u, v, 100.0 + t);
    }
    f2.batch_link(joins);
    auto h = f2.host_dump();
    h.check_invariants();
    auto got = f2.component_of({0, 100, 543});
    CHECK(got[0] == got[1]);
    CHECK(got[1] == got[2]);
  }
}

TEST_CASE("cut validation") {
  Cluster c(forest_config(10));
  TopForest f(c, 10, 0.5);
  f.build({WeightedEdge(0, 1, 1.0)});

  SUBCASE("cut the only edge leaves two singletons") {
    f.batch_cut({canonical_eid(0, 1)});
    auto h = f.host_dump();
    CHECK(h.nodes.empty());
    auto got = f.component_of({0, 1});
    CHECK(got[0] == 0);
    CHECK(got[1] == 1);
  }
  SUBCASE("cutting an absent edge names the index") {
    try {
      f.batch_cut({canonical_eid(4, 5)});
      FAIL("expected EdgeAbsent");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::EdgeAbsent);
    }
  }
  SUBCASE("cut then link restores the same underlying forest") {
    Cluster c2(forest_config(64));
    TopForest f2(c2, 64, 0.5);
    auto edges = random_tree(64, 9);
    f2.build(edges);
    std::vector<EdgeId> cut{edges[5].eid, edges[20].eid, edges[40].eid};
    f2.batch_cut(cut);
    f2.batch_link({edges[5], edges[20], edges[40]});
    auto h = f2.host_dump();
    h.check_invariants();
    std::set<EdgeId> have;
    for (auto& [id, nd] : h.nodes)
      if (nd.is_leaf()) have.insert(nd.edge.eid);
    std::set<EdgeId> want;
    for (auto& e : edges) want.insert(e.eid);
    CHECK(have == want);
  }
}

TEST_CASE("subtree aggregates") {
  SUBCASE("edge count on a path a-b-c rooted at a") {
    Cluster c(forest_config(3));
    TopForest f(c, 3, 0.5);
    f.build({WeightedEdge(0, 1, 5.0), WeightedEdge(1, 2, 7.0)});
    mpc::KeyedDist<AggValue> out(c);
    f.subtree_aggregate(count_agg(), out);
    CHECK(out.find(0)->a == 2);
    CHECK(out.find(1)->a == 1);
    CHECK(out.find(2)->a == 0);
  }
  SUBCASE("xor of eids on a single-edge tree") {
    Cluster c(forest_config(4));
    TopForest f(c, 4, 0.5);
    WeightedEdge e(2, 3, 1.0);
    f.build({e});
    mpc::KeyedDist<AggValue> out(c);
    f.subtree_aggregate(xor_agg(), out);
    CHECK(out.find(2)->a == e.eid);  // root side (min vertex roots the tree)
    CHECK(out.find(3)->a == 0);
  }
  SUBCASE("weight sums across a random 400-vertex tree match the DFS oracle") {
    std::size_t n = 400;
    Cluster c(forest_config(n));
    TopForest f(c, n, 0.5);
    auto edges = random_tree(n, 17);
    f.build(edges);
    mpc::KeyedDist<AggValue> out(c);
    f.subtree_aggregate(sum_agg(), out);
    auto expect = oracles::oracle_subtree_weight_sum(as_graph(n, edges));
    for (VertexId v = 0; v < n; ++v) {
      REQUIRE(out.find(v) != nullptr);
      CHECK(as_double(*out.find(v)) == doctest::Approx(expect[v]).epsilon(1e-9));
    }
  }
}

TEST_CASE("path queries") {
  SUBCASE("(v, v) answers the identity") {
    Cluster c(forest_config(8));
    TopForest f(c, 8, 0.5);
    f.build(path_edges(8));
    auto ans = f.batch_path_query(max_agg(), {{3, 3}});
    CHECK(ans[0].b == kNoEdge);
  }
  SUBCASE("path-max on weights 5, 7") {
    Cluster c(forest_config(3));
    TopForest f(c, 3, 0.5);
    f.build({WeightedEdge(0, 1, 5.0), WeightedEdge(1, 2, 7.0)});
    auto ans = f.batch_path_query(max_agg(), {{0, 2}, {0, 1}});
    CHECK(ans[0].b == canonical_eid(1, 2));
    CHECK(ans[1].b == canonical_eid(0, 1));
  }
  SUBCASE("cross-component query names the index") {
    Cluster c(forest_config(8));
    TopForest f(c, 8, 0.5);
    f.build({WeightedEdge(0, 1, 1.0), WeightedEdge(2, 3, 1.0)});
    try {
      f.batch_path_query(max_agg(), {{0, 1}, {0, 2}});
      FAIL("expected DifferentComponents");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::DifferentComponents);
      CHECK(e.index() == 1);
    }
  }
  SUBCASE("64 random path-max queries on a 500-vertex weighted tree") {
    std::size_t n = 500;
    Cluster c(forest_config(n));
    TopForest f(c, n, 0.5);
    auto edges = random_tree(n, 23);
    f.build(edges);
    auto g = as_graph(n, edges);
    std::mt19937_64 rng(31);
    std::vector<std::pair<VertexId, VertexId>> qs;
    for (int i = 0; i < 64; ++i)
      qs.push_back({static_cast<VertexId>(rng() % n), static_cast<VertexId>(rng() % n)});
    auto ans = f.batch_path_query(max_agg(), qs);
    for (std::size_t i = 0; i < qs.size(); ++i) {
      auto expect = oracles::oracle_path_max(g, qs[i].first, qs[i].second);
      if (!expect) {
        CHECK(ans[i].b == kNoEdge);
      } else {
        CHECK(ans[i].b == expect->eid);
      }
    }
  }
}

TEST_CASE("separator sets") {
  SUBCASE("singleton target set is empty") {
    Cluster c(forest_config(8));
    TopForest f(c, 8, 0.5);
    f.build(path_edges(8));
    auto res = f.separator_set({3});
    CHECK(res.separator_edges.empty());
  }
  SUBCASE("path 1-2-3 with weights 5,7 and targets {1,3}") {
    Cluster c(forest_config(4));
    TopForest f(c, 4, 0.5);
    f.build({WeightedEdge(1, 2, 5.0), WeightedEdge(2, 3, 7.0)});
    auto res = f.separator_set({1, 3});
    REQUIRE(res.separator_edges.size() == 1);
    CHECK(res.separator_edges[0].eid == canonical_eid(2, 3));
  }
  SUBCASE("star with weights 1,2,3 and the three leaves as targets") {
    Cluster c(forest_config(4));
    TopForest f(c, 4, 0.5);
    // center 0, leaves 1, 2, 3
    f.build({WeightedEdge(0, 1, 1.0), WeightedEdge(0, 2, 2.0), WeightedEdge(0, 3, 3.0)});
    auto res = f.separator_set({1, 2, 3});
    REQUIRE(res.separator_edges.size() == 2);
    std::set<EdgeId> got;
    for (auto& e : res.separator_edges) got.insert(e.eid);
    CHECK(got == std::set<EdgeId>{canonical_eid(0, 2), canonical_eid(0, 3)});
  }
  SUBCASE("random tree targets match the all-pairs path-max oracle") {
    std::size_t n = 300;
    Cluster c(forest_config(n));
    TopForest f(c, n, 0.5);
    auto edges = random_tree(n, 77);
    f.build(edges);
    auto g = as_graph(n, edges);
    std::mt19937_64 rng(78);
    std::vector<VertexId> targets;
    for (int i = 0; i < 12; ++i) targets.push_back(static_cast<VertexId>(rng() % n));
    std::sort(targets.begin(), targets.end());
    targets.erase(std::unique(targets.begin(), targets.end()), targets.end());
    auto res = f.separator_set(targets);
    std::set<EdgeId> expect;
    for (std::size_t i = 0; i < targets.size(); ++i)
      for (std::size_t j = i + 1; j < targets.size(); ++j) {
        auto pm = oracles::oracle_path_max(g, targets[i], targets[j]);
        if (pm) expect.insert(pm->eid);
      }
    std::set<EdgeId> got;
    for (auto& e : res.separator_edges) got.insert(e.eid);
    CHECK(got == expect);
    CHECK(res.separator_edges.size() <= 4 * targets.size());
  }
}

TEST_CASE("root path aggregate: nearest marked edge above") {
  std::size_t n = 200;
  Cluster c(forest_config(n));
  TopForest f(c, n, 0.5);
  auto edges = random_tree(n, 55);
  f.build(edges);
  std::mt19937_64 rng(56);
  std::set<EdgeId> marks;
  for (const auto& e : edges)
    if (rng() % 4 == 0) marks.insert(e.eid);

  RootPathAggregate agg;
  agg.identity = {kNoEdge, 0};
  agg.edge = [&](const WeightedEdge& e) {
    return marks.count(e.eid) ? AggValue{e.eid, 0} : AggValue{kNoEdge, 0};
  };
  agg.combine = [](AggValue top, AggValue bottom) { return bottom.a != kNoEdge ? bottom : top; };
  mpc::KeyedDist<AggValue> out(c);
  f.root_path_aggregate(agg, out);

  // oracle: walk from the root (component min) down
  auto g = as_graph(n, edges);
  std::vector<std::vector<WeightedEdge>> adj(n);
  for (auto& [eid, e] : g.edges) {
    adj[e.u].push_back(e);
    adj[e.v].push_back(e);
  }
  auto comp = oracles::oracle_components(g);
  std::vector<EdgeId> expect(n, kNoEdge);
  std::vector<bool> seen(n, false);
  for (VertexId root = 0; root < n; ++root) {
    if (comp[root] != root || seen[root]) continue;
    std::queue<std::pair<VertexId, EdgeId>> q;
    q.push({root, kNoEdge});
    seen[root] = true;
    while (!q.empty()) {
      auto [v, nearest] = q.front();
      q.pop();
      expect[v] = nearest;
      for (auto& e : adj[v]) {
        VertexId w = e.u == v ? e.v : e.u;
        if (!seen[w]) {
          seen[w] = true;
          q.push({w, marks.count(e.eid) ? e.eid : nearest});
        }
      }
    }
  }
  for (VertexId v = 0; v < n; ++v) {
    REQUIRE(out.find(v) != nullptr);
    CHECK(out.find(v)->a == expect[v]);
  }
}

TEST_CASE("rebalance is idempotent on a balanced forest") {
  std::size_t n = 300;
  Cluster c(forest_config(n));
  TopForest f(c, n, 0.5);
  f.build(random_tree(n, 41));
  auto before = f.host_dump();
  before.check_invariants();
  f.rebalance_now();
  auto after = f.host_dump();
  after.check_invariants();
  // underlying forest unchanged (cluster repartition is allowed)
  std::set<EdgeId> a, b;
  for (auto& [id, nd] : before.nodes)
    if (nd.is_leaf()) a.insert(nd.edge.eid);
  for (auto& [id, nd] : after.nodes)
    if (nd.is_leaf()) b.insert(nd.edge.eid);
  CHECK(a == b);
}

TEST_CASE("debug dump lists one line per node") {
  Cluster c(forest_config(8));
  TopForest f(c, 8, 0.5);
  f.build(path_edges(5));
  auto h = f.host_dump();
  auto text = h.dump_text();
  CHECK(std::count(text.begin(), text.end(), '\n') == static_cast<long>(h.nodes.size()));
  // id rank parent root_vertex [children] [boundary]
  CHECK(text.find('[') != std::string::npos);
}

TEST_CASE("randomized soak holds every invariant after every operation") {
  std::mt19937_64 rng(99);
  std::size_t n = 128;
  Cluster c(forest_config(n));
  TopForest f(c, n, 0.5);
  GraphSnapshot forest(n);
  for (int step = 0; step < 30; ++step) {
    if (forest.m() < n / 2 || rng() % 2 == 0) {
      std::vector<WeightedEdge> links;
      oracles::UnionFind uf(n);
      for (auto& [eid, e] : forest.edges) uf.unite(e.u, e.v);
      for (int t = 0; t < 30 && links.size() < 6; ++t) {
        VertexId u = static_cast<VertexId>(rng() % n), v = static_cast<VertexId>(rng() % n);
        if (u == v || uf.find(u) == uf.find(v)) continue;
        uf.unite(u, v);
        links.emplace_back(u, v, std::uniform_real_distribution<>(0, 1)(rng));
      }
      f.batch_link(links);
      for (auto& e : links) forest.edges.emplace(e.eid, e);
    } else {
      std::vector<EdgeId> cuts;
      for (auto& [eid, e] : forest.edges) {
        if (cuts.size() >= 5) break;
        if (rng() % 4 == 0) cuts.push_back(eid);
      }
      f.batch_cut(cuts);
      for (EdgeId eid : cuts) forest.edges.erase(eid);
    }
    f.host_dump().check_invariants();
  }
  CHECK(c.metrics().violations.empty());
}
