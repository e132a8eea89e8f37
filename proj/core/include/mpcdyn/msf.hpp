#pragma once

// Batch-dynamic minimum spanning forest: processes a batch of edge updates by
// finding replacement candidates for deletions, a separator set for the
// inserts' cycle checks, and replaying the update sequence on a contracted
// instance that fits one machine. Emits a script whose prefixes realize every
// intermediate forest.

#include <set>

#include "mpcdyn/graph.hpp"
#include "mpcdyn/toptree.hpp"

namespace mpcdyn {

struct MsfScriptOp {
  bool insert;  // F+ / F-
  WeightedEdge edge;
};

struct MsfUpdateScript {
  std::vector<MsfScriptOp> ops;     // U'
  std::vector<std::size_t> prefix;  // y_x per input update
};

struct MsfBatchStats {
  std::size_t deletions = 0;           // |D|
  std::size_t forest_deletions = 0;    // |D intersect F|
  std::size_t replacements = 0;        // |R|
  std::size_t separator_size = 0;      // |S|
  std::size_t replay_pieces = 0;       // contracted super-vertices
  std::size_t replay_edges = 0;
};

class MsfDynamic {
 public:
  struct StoredEdge {
    WeightedEdge edge;
    bool in_forest = false;
  };

  // Builds the unique (weight, eid)-minimum spanning forest of `initial` and
  // its top trees. When `unit_weights` is set, stored weights are forced to
  // zero so the forest is tie-broken purely by eid (the 2ECC configuration).
  MsfDynamic(mpc::Cluster& c, const GraphSnapshot& initial, bool unit_weights = false);

  MsfUpdateScript process_batch(const Batch& batch);
  const MsfBatchStats& last_stats() const { return stats_; }

  // Replacement candidates: minimum spanning edges of the contracted graph
  // whose vertices are the F - D pieces touched by the deletions. Pure.
  std::vector<WeightedEdge> compute_replacement_candidates(const std::vector<EdgeId>& deleted);

  // Heaviest-path-edge separator over the target vertices.
  SeparatorResult compute_separator_set(const std::vector<VertexId>& targets) {
    return trees_.separator_set(targets);
  }

  TopForest& trees() { return trees_; }
  mpc::Cluster& cluster() { return *cluster_; }
  std::size_t vertex_count() const { return n_; }
  std::size_t edge_count() const { return edges_.total_size(); }

  // host views for tests and the CLI verifier
  std::set<EdgeId> forest_edges_host() const;
  std::vector<WeightedEdge> graph_edges_host() const;

  const mpc::KeyedDist<StoredEdge>& edge_table() const { return edges_; }

 private:
  void preprocess(const GraphSnapshot& initial);
  MsfUpdateScript process_chunk(const std::vector<UpdateOp>& ops);
  // vertex -> piece key of F minus the marked forest edges
  void piece_labels(const std::vector<EdgeId>& marks, mpc::KeyedDist<std::uint64_t>& out);

  mpc::Cluster* cluster_;
  std::size_t n_;
  bool unit_weights_;
  TopForest trees_;
  mpc::KeyedDist<StoredEdge> edges_;  // eid -> stored edge
  MsfBatchStats stats_;
};

}  // namespace mpcdyn
