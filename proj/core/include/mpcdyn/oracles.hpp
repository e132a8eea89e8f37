#pragma once

// Sequential reference implementations used by tests and `verify`.
// Deliberately simple; none of them touch the simulator.

#include <cstdint>
#include <optional>
#include <set>
#include <vector>

#include "mpcdyn/graph.hpp"

namespace mpcdyn::oracles {

struct UnionFind {
  std::vector<std::uint32_t> parent;
  std::vector<std::uint32_t> size;

  explicit UnionFind(std::size_t n) : parent(n), size(n, 1) {
    for (std::size_t i = 0; i < n; ++i) parent[i] = static_cast<std::uint32_t>(i);
  }
  std::uint32_t find(std::uint32_t x) {
    while (parent[x] != x) {
      parent[x] = parent[parent[x]];
      x = parent[x];
    }
    return x;
  }
  bool unite(std::uint32_t a, std::uint32_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return false;
    if (size[a] < size[b]) std::swap(a, b);
    parent[b] = a;
    size[a] += size[b];
    return true;
  }
};

// Unique MSF under (weight, eid) order. Kruskal.
std::set<EdgeId> oracle_msf(const GraphSnapshot& g);

// Second, independent route: Prim from every unvisited vertex.
std::set<EdgeId> oracle_msf_prim(const GraphSnapshot& g);

// Maintains an exact MSF across single-edge updates. Used to keep the
// per-prefix acceptance checks affordable; agreement with oracle_msf is
// itself asserted by tests and by sampled cross-checks.
class IncrementalMsf {
 public:
  explicit IncrementalMsf(const GraphSnapshot& g);

  void insert(const WeightedEdge& e);
  void remove(EdgeId eid);

  const GraphSnapshot& graph() const { return g_; }
  const std::set<EdgeId>& forest() const { return forest_; }

 private:
  void forest_add(const WeightedEdge& e);
  void forest_drop(const WeightedEdge& e);

  GraphSnapshot g_;
  std::set<EdgeId> forest_;
  std::vector<std::vector<WeightedEdge>> fadj_;  // forest adjacency
};

// Bridges via DFS low-link (iterative).
std::set<EdgeId> oracle_bridges(const GraphSnapshot& g);

// Brute-force bridge check: e is a bridge iff removing it disconnects its
// endpoints. O(m^2); cross-check for small n.
std::set<EdgeId> oracle_bridges_by_deletion(const GraphSnapshot& g);

// 2ECC partition: per-vertex component label after deleting `bridges`.
std::vector<std::uint32_t> oracle_2ecc_partition(const GraphSnapshot& g,
                                                 const std::set<EdgeId>& bridges);

// Heaviest edge on the unique u..v path of a forest; nullopt when u == v,
// throws DifferentComponents when no path exists.
std::optional<WeightedEdge> oracle_path_max(const GraphSnapshot& forest, VertexId u, VertexId v);

// Sum of edge weights in the subtree of every vertex, forest rooted at the
// minimum vertex id of each component.
std::vector<double> oracle_subtree_weight_sum(const GraphSnapshot& forest);

// Number of edges in the subtree of every vertex, same rooting rule.
std::vector<std::uint64_t> oracle_subtree_edge_count(const GraphSnapshot& forest);

bool oracle_is_matching(const GraphSnapshot& g, const std::set<EdgeId>& m);
bool oracle_is_maximal_matching(const GraphSnapshot& g, const std::set<EdgeId>& m);

// Greedy maximal matching in eid order (deterministic reference).
std::set<EdgeId> oracle_greedy_matching(const GraphSnapshot& g);

// Per-vertex component labels (label = min vertex id in component).
std::vector<std::uint32_t> oracle_components(const GraphSnapshot& g);

}  // namespace mpcdyn::oracles
