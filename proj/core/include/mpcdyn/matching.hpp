#pragma once

// Batch-dynamic maximal matching: a batch reduces to a maximal-matching
// instance whose candidate edges are covered by the 2k update endpoints.
// Cover-bounded degree-reduction phases (vertex grouping + edge sampling,
// then a high-degree sweep) shrink the residual until one machine finishes
// greedily.

#include <map>
#include <memory>
#include <set>

#include "mpcdyn/graph.hpp"
#include "mpcdyn/dist.hpp"
#include "mpcdyn/keyed.hpp"

namespace mpcdyn {

struct MatchingOptions {
  double delta = 0.2;  // admitted batch size: S^(1-delta) / 4
  // exponents as printed in the phase analysis; clamped to >= 1 at desk scale
  double group_exp = 0.1;        // x = Delta^group_exp vertex groups
  double sample_exp = 0.85;      // stage-1 edge sampling 1/Delta^sample_exp
  double high_exp = 0.99;        // stage-1 high-degree threshold
  double stage2_exp = 0.999;     // stage-2 participation threshold
  double stage2_sample_exp = 0.99;  // stage-2 sampling 1/Delta^stage2_sample_exp
  std::size_t local_finish_edges = 0;  // 0 = S/2
  int max_phases = 64;
};

struct MatchingScriptOp {
  bool add;  // M+ / M-
  WeightedEdge edge;
};

struct MatchingBatchStats {
  std::size_t cover_size = 0;
  std::size_t candidates = 0;
  std::size_t phases = 0;
  std::size_t script_ops = 0;
};

class MatchingDynamic {
 public:
  MatchingDynamic(mpc::Cluster& c, const GraphSnapshot& initial, MatchingOptions opt = {});

  std::vector<MatchingScriptOp> process_batch(const Batch& batch);
  const MatchingBatchStats& last_stats() const { return stats_; }

  std::set<EdgeId> matching_host() const;
  std::vector<WeightedEdge> graph_edges_host() const;
  std::size_t admitted_batch_size() const;

  // One degree-reduction phase (stage 1 + stage 2) over an explicit residual
  // instance whose edges all touch the cover. Returns the surviving residual
  // and degree statistics; used standalone by the statistical checks.
  struct PhaseStats {
    std::size_t matched = 0;
    std::size_t residual_before = 0, residual_after = 0;
    std::uint64_t max_cover_degree_before = 0, max_cover_degree_after = 0;
    std::size_t stage1_instances = 1;
  };
  PhaseStats run_single_phase(const std::vector<WeightedEdge>& residual,
                              const std::vector<VertexId>& cover, std::uint64_t seed);

 private:
  struct StoredEdge {
    WeightedEdge edge;
    bool matched = false;
  };

  void bootstrap(const GraphSnapshot& initial);
  std::vector<MatchingScriptOp> process_chunk(const std::vector<UpdateOp>& ops);

  // phase plumbing over the member residual state
  std::uint64_t max_cover_degree();
  void drop_matched_incident();
  std::vector<std::pair<VertexId, VertexId>> stage1(std::uint64_t delta, std::uint64_t seed);
  std::vector<std::pair<VertexId, VertexId>> stage2(std::uint64_t delta, std::uint64_t seed);
  void extend_cover(std::uint64_t delta);
  std::vector<std::pair<VertexId, VertexId>> local_finish(std::uint64_t seed);
  void apply_matches(const std::vector<std::pair<VertexId, VertexId>>& pairs,
                     std::vector<MatchingScriptOp>* script);

  mpc::Cluster* cluster_;
  std::size_t n_;
  MatchingOptions opt_;
  MatchingBatchStats stats_;
  std::uint64_t batch_counter_ = 0;
  mpc::KeyedDist<StoredEdge> edges_;   // eid -> edge + matched flag
  mpc::KeyedDist<EdgeId> matched_of_;  // vertex -> its matched edge
  // per-batch residual state
  std::unique_ptr<mpc::Dist<WeightedEdge>> residual_;
  mpc::KeyedDist<std::uint8_t> cover_;
};

}  // namespace mpcdyn
