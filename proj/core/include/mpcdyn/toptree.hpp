#pragma once

// Batch-parallel b-ary top trees over a maintained forest, b = ceil(n^(alpha/2)).
// Every node is a connected cluster of underlying-tree edges; rank-0 nodes are
// single edges and all rank-0 nodes of one tree sit at equal depth. Internal
// non-root nodes keep arity in [b, c*b]; transient states stay below c'*b.
//
// All operations run as passes over the MPC cluster: per-level child-packet
// gathers, local decisions at the owning machine, and update messages.

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <unordered_map>

#include "mpcdyn/dist.hpp"
#include "mpcdyn/keyed.hpp"

namespace mpcdyn {

constexpr std::uint64_t kNoNode = ~std::uint64_t{0};

// arity multipliers: balanced upper bound c*b, transient ceiling c'*b
constexpr std::uint32_t kArityC = 4;
constexpr std::uint32_t kArityCPrime = 16;

// #forest edges at `v` inside the owning cluster; the vertex is a boundary
// vertex while cnt stays below the vertex's forest degree.
struct BoundaryPair {
  VertexId v;
  std::uint32_t cnt;
};

struct TopNode {
  std::uint64_t id = kNoNode;
  std::uint64_t parent = kNoNode;
  std::int32_t rank = 0;
  VertexId root_vertex = 0;  // boundary vertex toward the parent's root; tree root at top
  VertexId cluster_min = 0;  // minimum vertex id inside the cluster
  std::vector<std::uint64_t> children;  // empty iff rank == 0
  std::vector<BoundaryPair> boundary;   // own boundary vertices, sorted by v
  WeightedEdge edge;                    // valid iff rank == 0

  bool is_leaf() const { return rank == 0; }
  std::uint64_t resident_words() const { return 8 + children.size() + boundary.size(); }
  const BoundaryPair* find_boundary(VertexId v) const {
    for (const auto& bp : boundary)
      if (bp.v == v) return &bp;
    return nullptr;
  }
};

// Two-word aggregate value; layouts are aggregate-specific.
struct AggValue {
  std::uint64_t a = 0;
  std::uint64_t b = 0;
  friend bool operator==(const AggValue& x, const AggValue& y) {
    return x.a == y.a && x.b == y.b;
  }
};

// Distributive aggregate over edge sets: per-edge eval + disjoint merge.
struct EdgeAggregate {
  AggValue identity;
  std::function<AggValue(const WeightedEdge&)> leaf;
  std::function<AggValue(AggValue, AggValue)> combine;  // associative + commutative
};

// Fold along root->v paths; combine(top_part, bottom_part) is associative but
// ordered by path direction.
struct RootPathAggregate {
  AggValue identity;
  std::function<AggValue(const WeightedEdge&)> edge;
  std::function<AggValue(AggValue, AggValue)> combine;
};

struct CompressedEdge {
  VertexId x, y;           // endpoints in the compressed tree
  WeightedEdge max_edge;   // heaviest underlying forest edge on the x..y path
};

struct SeparatorResult {
  std::vector<WeightedEdge> separator_edges;  // the set S, deduplicated
  std::vector<CompressedEdge> tree;           // compressed tree over the targets
};

// Host-side mirror for the invariant scanner, test oracles, and the debug dump.
struct HostTopTree {
  std::unordered_map<std::uint64_t, TopNode> nodes;
  std::unordered_map<VertexId, std::uint64_t> anchors;  // vertex -> min-eid leaf
  std::unordered_map<VertexId, std::uint32_t> degrees;
  std::size_t n = 0;
  double alpha = 0.5;
  std::uint32_t b = 2;

  std::string dump_text() const;  // one line per node: id rank parent root_vertex [children] [boundary]
  // Exhaustive structural scan; throws Error(PreconditionViolated) with a
  // description when an invariant fails.
  void check_invariants() const;
  std::set<EdgeId> cluster_edges(std::uint64_t node_id) const;
};

class TopForest {
 public:
  TopForest(mpc::Cluster& c, std::size_t n, double alpha);
  ~TopForest();

  std::uint32_t fanout_b() const { return b_; }
  std::size_t vertex_count() const { return n_; }
  std::int32_t max_rank() const { return max_rank_; }
  mpc::Cluster& cluster() { return *cluster_; }

  // Builds balanced top trees for a forest given as host edges (used by
  // preprocessing). Rejects inputs with cycles.
  void build(const std::vector<WeightedEdge>& forest_edges);

  // Inserts edges that must keep the structure acyclic. Rejects cycle-creating
  // edges with WouldCreateCycle (index of the offending edge).
  void batch_link(const std::vector<WeightedEdge>& edges);

  // Deletes existing forest edges; EdgeAbsent names the missing edge.
  void batch_cut(const std::vector<EdgeId>& eids);

  // Restores the arity invariants on an almost-balanced forest. Public
  // operations call this themselves; standalone reuse keeps the underlying
  // forest unchanged (cluster repartition aside) and is idempotent.
  void rebalance_now() {
    rebalance();
    orient();
  }

  bool has_edge(EdgeId eid) const;
  std::size_t forest_edge_count() const { return leaf_of_eid_.total_size(); }

  // Per-query component representative (component min vertex); isolated
  // vertices answer themselves. O(depth) rounds for the whole batch.
  std::vector<VertexId> component_of(const std::vector<VertexId>& queries);

  // Refreshes `out`: vertex -> component min vertex, for every non-isolated
  // vertex. Top-down push, O(depth) rounds.
  void component_labels(mpc::KeyedDist<VertexId>& out);

  // f over the edge set of every vertex's subtree (trees rooted at their
  // component min vertex). Fills `out` for every vertex of the forest.
  void subtree_aggregate(const EdgeAggregate& agg, mpc::KeyedDist<AggValue>& out);

  // Sum-like fold of per-vertex values over every subtree. `combine` must be
  // associative and commutative; vertices missing from `vals` contribute the
  // identity.
  void subtree_vertex_aggregate(const mpc::KeyedDist<AggValue>& vals, AggValue identity,
                                const std::function<AggValue(AggValue, AggValue)>& combine,
                                mpc::KeyedDist<AggValue>& out);

  // Directional fold along the root->v path for every vertex.
  void root_path_aggregate(const RootPathAggregate& agg, mpc::KeyedDist<AggValue>& out);

  // f over the unique u..v path per query; throws DifferentComponents with the
  // query index when endpoints are disconnected. (v, v) answers the identity.
  std::vector<AggValue> batch_path_query(const EdgeAggregate& agg,
                                         const std::vector<std::pair<VertexId, VertexId>>& queries);

  // The separator machinery: compressed tree over `targets` per component and
  // the set of heaviest path edges between target pairs.
  SeparatorResult separator_set(const std::vector<VertexId>& targets);

  HostTopTree host_dump() const;

 private:
  // summary of one child, gathered at its parent's owner during passes
  struct ChildPacket {
    std::uint64_t child = kNoNode;
    std::uint64_t parent = kNoNode;
    std::int32_t rank = 0;
    VertexId root_vertex = 0;
    VertexId cluster_min = 0;
    std::uint32_t arity = 0;
    std::vector<BoundaryPair> boundary;
    std::vector<AggValue> bvals;  // pass-specific per-boundary payloads
    AggValue val;                 // pass-specific payload
    WeightedEdge edge;

    std::uint64_t resident_words() const { return 12 + boundary.size() + 2 * bvals.size(); }
  };

  // per-machine parent -> gathered child packets, accounted as scratch while alive
  struct PacketMaps {
    std::vector<std::unordered_map<std::uint64_t, std::vector<ChildPacket>>> by_parent;
    mpc::Cluster* c = nullptr;
    std::vector<std::uint64_t> words;

    PacketMaps() = default;
    PacketMaps(PacketMaps&& o) noexcept
        : by_parent(std::move(o.by_parent)), c(o.c), words(std::move(o.words)) {
      o.c = nullptr;
    }
    PacketMaps& operator=(PacketMaps&&) = delete;
    ~PacketMaps() {
      if (!c) return;
      for (std::size_t m = 0; m < words.size(); ++m)
        c->add_scratch(m, -static_cast<std::int64_t>(words[m]));
    }
  };

  std::uint64_t alloc_node_id(std::size_t machine);
  std::uint32_t node_owner(std::uint64_t id) const;
  TopNode* node_at(std::uint64_t id);
  const TopNode* node_at(std::uint64_t id) const;
  void put_node(TopNode n);
  void erase_node(std::uint64_t id);
  void node_words_changed(std::uint64_t id);

  // sorted ids of nodes with the given rank, per machine (deterministic scan)
  std::vector<std::vector<std::uint64_t>> ids_at_rank(std::int32_t rank) const;
  std::vector<std::vector<std::uint64_t>> root_ids() const;

  // batched parent-pointer walks; steps<0 walks to the top root
  struct WalkResult {
    std::uint64_t qid;
    std::uint64_t node;
    std::int32_t rank;
    VertexId cluster_min;
  };
  std::vector<WalkResult> walk_up(const std::vector<std::pair<std::uint64_t, std::uint64_t>>& from,
                                  std::int32_t steps);

  void link_chunk(const std::vector<WeightedEdge>& edges);
  void cut_chunk(const std::vector<EdgeId>& eids);
  void rebalance();
  // rebuilds the children of the given nodes from their grandchildren;
  // dissolves hub-shaped child structures no child-level split can break
  void dissolve_regroup(const std::vector<std::vector<std::uint64_t>>& parents);
  void orient();
  void refresh_boundaries_up(std::vector<std::uint64_t> start_nodes);
  std::int32_t recompute_max_rank();

  // resolve each vertex to its min-eid incident leaf (kNoNode when isolated)
  std::vector<std::uint64_t> anchor_leaves(const std::vector<VertexId>& vs);

  struct PacketMaps;  // per-machine parent -> child packets, scratch-accounted
  PacketMaps request_child_packets(const std::vector<std::vector<std::uint64_t>>& parents);
  // per-machine vertex -> forest degree for the requested vertices
  std::vector<std::unordered_map<VertexId, std::uint32_t>> probe_degrees(
      const std::vector<std::vector<VertexId>>& wanted);
  TopNode make_internal(std::uint64_t id, std::uint64_t parent, std::int32_t rank,
                        const std::vector<const ChildPacket*>& members,
                        const std::unordered_map<VertexId, std::uint32_t>& deg) const;

  class NodeStore;

  mpc::Cluster* cluster_;
  std::size_t n_;
  double alpha_;
  std::uint32_t b_;
  std::int32_t max_rank_ = 0;
  std::unique_ptr<NodeStore> nodes_;
  mpc::KeyedDist<std::vector<EdgeId>> incident_;  // vertex -> sorted incident forest eids
  mpc::KeyedDist<std::uint64_t> leaf_of_eid_;     // eid -> leaf node id
  std::vector<std::uint64_t> next_node_;          // per-machine id counters
};

// --- local (single-machine) decision helpers, unit-tested directly ---------

struct CarveItem {
  std::uint64_t id;
  std::uint32_t size;  // weight of the item (1 or child arity)
  std::vector<VertexId> shared;  // vertices this item exposes to siblings
};

// Partitions items, connected via shared vertices, into connected groups with
// total size in [b, c*b] (a single smaller group when everything is small).
// Requires the item graph to be connected.
std::vector<std::vector<std::uint64_t>> carve_connected_groups(const std::vector<CarveItem>& items,
                                                               std::uint32_t b);

// Connected components of items under shared-vertex adjacency.
std::vector<std::vector<std::uint64_t>> shared_vertex_components(const std::vector<CarveItem>& items);

// Splices degree-2 non-kept junctions out of a tree of max-labeled edges and
// drops non-kept leaves. Exact under the (weight, eid) total order.
std::vector<CompressedEdge> compress_steiner(std::vector<CompressedEdge> edges,
                                             const std::set<VertexId>& keep);

}  // namespace mpcdyn
