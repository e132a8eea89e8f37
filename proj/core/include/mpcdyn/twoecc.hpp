#pragma once

// Batch-dynamic 2-edge-connected components: a spanning forest maintained by
// the dynamic MSF machinery (unit weights), bridges detected by comparing
// per-subtree fingerprints of the full edge set against the forest-only ones,
// and a labeling that names each vertex's block by the bridge above it.

#include <span>

#include "mpcdyn/msf.hpp"

namespace mpcdyn {

// residues mod p of z^idx polynomial evaluations
using Fingerprint = std::uint64_t;

struct SketchParams {
  std::uint64_t p = 0;  // prime > n^4
  std::uint64_t z = 0;  // uniform in [1, p)
  std::uint64_t n = 0;  // coordinate stride: idx(u, v) = u * n + v

  std::uint64_t idx(VertexId u, VertexId v) const {
    return static_cast<std::uint64_t>(u) * n + v;
  }
};

std::uint64_t mulmod(std::uint64_t a, std::uint64_t b, std::uint64_t p);
std::uint64_t powmod(std::uint64_t base, std::uint64_t exp, std::uint64_t p);
bool is_prime_u64(std::uint64_t x);
std::uint64_t smallest_prime_above(std::uint64_t x);

// Signed encoding of the edges at one vertex: +z^idx for edges where v is the
// canonical lower endpoint, -z^idx otherwise. Linear in edge updates.
Fingerprint vertex_fingerprint(VertexId v, std::span<const WeightedEdge> incident,
                               const SketchParams& params);

constexpr std::uint64_t kRootLabel = kNoEdge;

struct TwoEccDelta {
  std::vector<EdgeId> bridges_added;
  std::vector<EdgeId> bridges_removed;
};

class TwoEccDynamic {
 public:
  TwoEccDynamic(mpc::Cluster& c, const GraphSnapshot& initial);

  // Applies the updates through the forest maintainer, draws fresh sketch
  // parameters, rescans bridges, and relabels. Returns the bridge delta.
  TwoEccDelta process_batch(const Batch& batch);

  const std::set<EdgeId>& bridges() const { return bridges_; }
  // vertex -> bridge eid above its block, or kRootLabel
  std::vector<std::pair<VertexId, std::uint64_t>> labels_host() const;

  const SketchParams& params() const { return params_; }
  MsfDynamic& forest() { return msf_; }
  mpc::Cluster& cluster() { return *cluster_; }

 private:
  void rescan();

  mpc::Cluster* cluster_;
  std::size_t n_;
  MsfDynamic msf_;
  SketchParams params_;
  std::uint64_t batch_counter_ = 0;
  std::set<EdgeId> bridges_;
  mpc::KeyedDist<AggValue> labels_;  // vertex -> {label eid | kRootLabel}
};

}  // namespace mpcdyn
