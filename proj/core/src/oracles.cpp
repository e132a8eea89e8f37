#include "mpcdyn/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>

namespace mpcdyn::oracles {

namespace {

std::vector<std::vector<WeightedEdge>> adjacency(const GraphSnapshot& g) {
  std::vector<std::vector<WeightedEdge>> adj(g.n);
  for (const auto& [_, e] : g.edges) {
    adj[e.u].push_back(e);
    adj[e.v].push_back(e);
  }
  return adj;
}

VertexId other(const WeightedEdge& e, VertexId v) { return e.u == v ? e.v : e.u; }

}  // namespace

std::set<EdgeId> oracle_msf(const GraphSnapshot& g) {
  std::vector<WeightedEdge> edges = g.edge_list();
  std::sort(edges.begin(), edges.end());
  UnionFind uf(g.n);
  std::set<EdgeId> forest;
  for (const auto& e : edges)
    if (uf.unite(e.u, e.v)) forest.insert(e.eid);
  return forest;
}

std::set<EdgeId> oracle_msf_prim(const GraphSnapshot& g) {
  auto adj = adjacency(g);
  std::vector<bool> visited(g.n, false);
  std::set<EdgeId> forest;
  using Item = std::pair<WeightedEdge, VertexId>;  // candidate edge, vertex it reaches
  auto cmp = [](const Item& a, const Item& b) { return b.first < a.first; };
  for (VertexId start = 0; start < g.n; ++start) {
    if (visited[start]) continue;
    visited[start] = true;
    std::priority_queue<Item, std::vector<Item>, decltype(cmp)> pq(cmp);
    for (const auto& e : adj[start]) pq.push({e, other(e, start)});
    while (!pq.empty()) {
      auto [e, v] = pq.top();
      pq.pop();
      if (visited[v]) continue;
      visited[v] = true;
      forest.insert(e.eid);
      for (const auto& f : adj[v])
        if (!visited[other(f, v)]) pq.push({f, other(f, v)});
    }
  }
  return forest;
}

IncrementalMsf::IncrementalMsf(const GraphSnapshot& g)
    : g_(g), forest_(oracle_msf(g)), fadj_(g.n) {
  for (EdgeId f : forest_) {
    const auto& fe = g_.edges.at(f);
    fadj_[fe.u].push_back(fe);
    fadj_[fe.v].push_back(fe);
  }
}

void IncrementalMsf::forest_add(const WeightedEdge& e) {
  forest_.insert(e.eid);
  fadj_[e.u].push_back(e);
  fadj_[e.v].push_back(e);
}

void IncrementalMsf::forest_drop(const WeightedEdge& e) {
  forest_.erase(e.eid);
  auto strip = [&](VertexId v) {
    auto& lst = fadj_[v];
    lst.erase(std::remove_if(lst.begin(), lst.end(),
                             [&](const WeightedEdge& f) { return f.eid == e.eid; }),
              lst.end());
  };
  strip(e.u);
  strip(e.v);
}

void IncrementalMsf::insert(const WeightedEdge& e) {
  if (g_.has(e.eid)) throw Error(ErrorCode::InvalidOp, "oracle insert of present edge");
  g_.edges.emplace(e.eid, e);
  // New MSF is contained in F + e: find the heaviest edge on the forest cycle
  // closed by e, evict it if heavier than e.
  std::vector<EdgeId> via(g_.n, kNoEdge);
  std::vector<bool> seen(g_.n, false);
  std::queue<VertexId> q;
  q.push(e.u);
  seen[e.u] = true;
  while (!q.empty() && !seen[e.v]) {
    VertexId x = q.front();
    q.pop();
    for (const auto& fe : fadj_[x]) {
      VertexId y = other(fe, x);
      if (!seen[y]) {
        seen[y] = true;
        via[y] = fe.eid;
        q.push(y);
      }
    }
  }
  if (!seen[e.v]) {
    forest_add(e);  // joins two components
    return;
  }
  WeightedEdge heaviest = e;
  for (VertexId x = e.v; via[x] != kNoEdge;) {
    const auto& fe = g_.edges.at(via[x]);
    if (heaviest < fe) heaviest = fe;
    x = other(fe, x);
  }
  if (heaviest.eid != e.eid) {
    forest_drop(heaviest);
    forest_add(e);
  }
}

void IncrementalMsf::remove(EdgeId eid) {
  auto it = g_.edges.find(eid);
  if (it == g_.edges.end()) throw Error(ErrorCode::InvalidOp, "oracle delete of absent edge");
  WeightedEdge e = it->second;
  g_.edges.erase(it);
  if (!forest_.count(eid)) return;
  forest_drop(e);
  // Replacement = lightest remaining edge crossing the two halves of F - e.
  std::vector<bool> side(g_.n, false);
  std::queue<VertexId> q;
  q.push(e.u);
  side[e.u] = true;
  while (!q.empty()) {
    VertexId x = q.front();
    q.pop();
    for (const auto& fe : fadj_[x]) {
      VertexId y = other(fe, x);
      if (!side[y]) {
        side[y] = true;
        q.push(y);
      }
    }
  }
  const WeightedEdge* best = nullptr;
  for (const auto& [_, f] : g_.edges)
    if (side[f.u] != side[f.v])
      if (!best || f < *best) best = &f;
  if (best) forest_add(*best);
}

std::set<EdgeId> oracle_bridges(const GraphSnapshot& g) {
  auto adj = adjacency(g);
  std::vector<std::uint32_t> disc(g.n, 0), low(g.n, 0);
  std::vector<bool> visited(g.n, false);
  std::set<EdgeId> bridges;
  std::uint32_t timer = 1;

  struct Frame {
    VertexId v;
    EdgeId parent_eid;
    std::size_t next;
  };
  std::vector<Frame> stack;
  for (VertexId root = 0; root < g.n; ++root) {
    if (visited[root]) continue;
    visited[root] = true;
    disc[root] = low[root] = timer++;
    stack.push_back({root, kNoEdge, 0});
    while (!stack.empty()) {
      Frame& fr = stack.back();
      if (fr.next < adj[fr.v].size()) {
        const WeightedEdge& e = adj[fr.v][fr.next++];
        if (e.eid == fr.parent_eid) continue;  // parallel edges cannot occur (simple graph)
        VertexId w = other(e, fr.v);
        if (!visited[w]) {
          visited[w] = true;
          disc[w] = low[w] = timer++;
          stack.push_back({w, e.eid, 0});
        } else {
          low[fr.v] = std::min(low[fr.v], disc[w]);
        }
      } else {
        Frame done = fr;
        stack.pop_back();
        if (!stack.empty()) {
          Frame& up = stack.back();
          low[up.v] = std::min(low[up.v], low[done.v]);
          if (low[done.v] > disc[up.v]) bridges.insert(done.parent_eid);
        }
      }
    }
  }
  return bridges;
}

std::set<EdgeId> oracle_bridges_by_deletion(const GraphSnapshot& g) {
  std::set<EdgeId> bridges;
  for (const auto& [eid, e] : g.edges) {
    UnionFind uf(g.n);
    for (const auto& [fid, f] : g.edges)
      if (fid != eid) uf.unite(f.u, f.v);
    if (uf.find(e.u) != uf.find(e.v)) bridges.insert(eid);
  }
  return bridges;
}

std::vector<std::uint32_t> oracle_2ecc_partition(const GraphSnapshot& g,
                                                 const std::set<EdgeId>& bridges) {
  UnionFind uf(g.n);
  for (const auto& [eid, e] : g.edges)
    if (!bridges.count(eid)) uf.unite(e.u, e.v);
  std::vector<std::uint32_t> label(g.n);
  std::vector<std::uint32_t> min_of(g.n, ~std::uint32_t{0});
  for (VertexId v = 0; v < g.n; ++v) min_of[uf.find(v)] = std::min(min_of[uf.find(v)], v);
  for (VertexId v = 0; v < g.n; ++v) label[v] = min_of[uf.find(v)];
  return label;
}

std::optional<WeightedEdge> oracle_path_max(const GraphSnapshot& forest, VertexId u, VertexId v) {
  if (u == v) return std::nullopt;
  auto adj = adjacency(forest);
  std::vector<EdgeId> via(forest.n, kNoEdge);
  std::vector<bool> seen(forest.n, false);
  std::queue<VertexId> q;
  q.push(u);
  seen[u] = true;
  while (!q.empty() && !seen[v]) {
    VertexId x = q.front();
    q.pop();
    for (const auto& e : adj[x]) {
      VertexId y = other(e, x);
      if (!seen[y]) {
        seen[y] = true;
        via[y] = e.eid;
        q.push(y);
      }
    }
  }
  if (!seen[v]) throw Error(ErrorCode::DifferentComponents, "path query across components");
  std::optional<WeightedEdge> best;
  for (VertexId x = v; via[x] != kNoEdge;) {
    const auto& e = forest.edges.at(via[x]);
    if (!best || *best < e) best = e;
    x = other(e, x);
  }
  return best;
}

namespace {

// Rooted DFS over each component (root = min vertex id); calls leaf-to-root
// accumulation with per-subtree values.
template <class Value, class FromEdge, class Combine>
std::vector<Value> subtree_fold(const GraphSnapshot& forest, Value zero, FromEdge from_edge,
                                Combine combine) {
  auto adj = adjacency(forest);
  std::vector<Value> acc(forest.n, zero);
  std::vector<bool> visited(forest.n, false);
  struct Frame {
    VertexId v;
    EdgeId parent_eid;
    std::size_t next;
  };
  std::vector<Frame> stack;
  for (VertexId root = 0; root < forest.n; ++root) {
    if (visited[root]) continue;
    visited[root] = true;
    stack.push_back({root, kNoEdge, 0});
    while (!stack.empty()) {
      Frame& fr = stack.back();
      if (fr.next < adj[fr.v].size()) {
        const WeightedEdge& e = adj[fr.v][fr.next++];
        if (e.eid == fr.parent_eid) continue;
        VertexId w = other(e, fr.v);
        if (!visited[w]) {
          visited[w] = true;
          stack.push_back({w, e.eid, 0});
        }
      } else {
        Frame done = fr;
        stack.pop_back();
        if (!stack.empty()) {
          Frame& up = stack.back();
          const WeightedEdge& pe = forest.edges.at(done.parent_eid);
          acc[up.v] = combine(acc[up.v], combine(acc[done.v], from_edge(pe)));
        }
      }
    }
  }
  return acc;
}

}  // namespace

std::vector<double> oracle_subtree_weight_sum(const GraphSnapshot& forest) {
  return subtree_fold<double>(
      forest, 0.0, [](const WeightedEdge& e) { return e.weight; },
      [](double a, double b) { return a + b; });
}

std::vector<std::uint64_t> oracle_subtree_edge_count(const GraphSnapshot& forest) {
  return subtree_fold<std::uint64_t>(
      forest, 0, [](const WeightedEdge&) { return std::uint64_t{1}; },
      [](std::uint64_t a, std::uint64_t b) { return a + b; });
}

bool oracle_is_matching(const GraphSnapshot& g, const std::set<EdgeId>& m) {
  std::vector<bool> used(g.n, false);
  for (EdgeId eid : m) {
    auto it = g.edges.find(eid);
    if (it == g.edges.end()) return false;
    if (used[it->second.u] || used[it->second.v]) return false;
    used[it->second.u] = used[it->second.v] = true;
  }
  return true;
}

bool oracle_is_maximal_matching(const GraphSnapshot& g, const std::set<EdgeId>& m) {
  if (!oracle_is_matching(g, m)) return false;
  std::vector<bool> used(g.n, false);
  for (EdgeId eid : m) {
    const auto& e = g.edges.at(eid);
    used[e.u] = used[e.v] = true;
  }
  for (const auto& [_, e] : g.edges)
    if (!used[e.u] && !used[e.v]) return false;
  return true;
}

std::set<EdgeId> oracle_greedy_matching(const GraphSnapshot& g) {
  std::vector<EdgeId> eids;
  eids.reserve(g.edges.size());
  for (const auto& [eid, _] : g.edges) eids.push_back(eid);
  std::sort(eids.begin(), eids.end());
  std::vector<bool> used(g.n, false);
  std::set<EdgeId> m;
  for (EdgeId eid : eids) {
    const auto& e = g.edges.at(eid);
    if (!used[e.u] && !used[e.v]) {
      used[e.u] = used[e.v] = true;
      m.insert(eid);
    }
  }
  return m;
}

std::vector<std::uint32_t> oracle_components(const GraphSnapshot& g) {
  UnionFind uf(g.n);
  for (const auto& [_, e] : g.edges) uf.unite(e.u, e.v);
  std::vector<std::uint32_t> min_of(g.n, ~std::uint32_t{0});
  for (VertexId v = 0; v < g.n; ++v) min_of[uf.find(v)] = std::min(min_of[uf.find(v)], v);
  std::vector<std::uint32_t> label(g.n);
  for (VertexId v = 0; v < g.n; ++v) label[v] = min_of[uf.find(v)];
  return label;
}

}  // namespace mpcdyn::oracles
