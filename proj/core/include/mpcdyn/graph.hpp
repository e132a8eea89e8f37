#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace mpcdyn {

using VertexId = std::uint32_t;
using EdgeId = std::uint64_t;

constexpr EdgeId kNoEdge = ~EdgeId{0};

enum class ErrorCode {
  SelfLoop,
  InvalidOp,
  EdgeAbsent,
  WouldCreateCycle,
  NotAForest,
  DifferentComponents,
  BatchTooLarge,
  CapacityExceeded,
  MemoryViolation,
  MessageCapViolation,
  PreconditionViolated,
  InvalidSpec,
  ParseError,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, std::string msg, std::int64_t index = -1)
      : std::runtime_error(std::move(msg)), code_(code), index_(index) {}

  ErrorCode code() const { return code_; }
  // index of the offending op / query / machine, -1 when not applicable
  std::int64_t index() const { return index_; }

 private:
  ErrorCode code_;
  std::int64_t index_;
};

// Canonical edge identifier: symmetric in (u, v), injective for n < 2^32.
inline EdgeId canonical_eid(VertexId u, VertexId v) {
  if (u == v) throw Error(ErrorCode::SelfLoop, "self-loop edge (" + std::to_string(u) + ")");
  VertexId lo = u < v ? u : v;
  VertexId hi = u < v ? v : u;
  return (static_cast<EdgeId>(lo) << 32) | hi;
}

inline VertexId eid_lo(EdgeId e) { return static_cast<VertexId>(e >> 32); }
inline VertexId eid_hi(EdgeId e) { return static_cast<VertexId>(e & 0xffffffffu); }

struct WeightedEdge {
  VertexId u = 0;  // stored canonically, u < v
  VertexId v = 0;
  double weight = 0.0;
  EdgeId eid = kNoEdge;

  WeightedEdge() = default;
  WeightedEdge(VertexId a, VertexId b, double w)
      : u(a < b ? a : b), v(a < b ? b : a), weight(w), eid(canonical_eid(a, b)) {}

  // (weight, eid) lexicographic order: a strict total order over any edge set.
  friend bool operator<(const WeightedEdge& a, const WeightedEdge& b) {
    if (a.weight != b.weight) return a.weight < b.weight;
    return a.eid < b.eid;
  }
  friend bool operator==(const WeightedEdge& a, const WeightedEdge& b) {
    return a.eid == b.eid && a.weight == b.weight;
  }
};

enum class OpKind : std::uint8_t { Insert, Delete };

struct UpdateOp {
  OpKind kind = OpKind::Insert;
  WeightedEdge edge;

  static UpdateOp insert(VertexId u, VertexId v, double w) {
    return UpdateOp{OpKind::Insert, WeightedEdge(u, v, w)};
  }
  static UpdateOp remove(VertexId u, VertexId v) {
    return UpdateOp{OpKind::Delete, WeightedEdge(u, v, 0.0)};
  }
};

struct Batch {
  std::vector<UpdateOp> ops;

  std::size_t k() const { return ops.size(); }
};

// Host-side graph: dense vertex ids in [0, n), simple, edges keyed by eid.
struct GraphSnapshot {
  std::size_t n = 0;
  std::unordered_map<EdgeId, WeightedEdge> edges;

  GraphSnapshot() = default;
  explicit GraphSnapshot(std::size_t n_) : n(n_) {}

  std::size_t m() const { return edges.size(); }
  bool has(EdgeId e) const { return edges.count(e) != 0; }

  std::vector<WeightedEdge> edge_list() const {
    std::vector<WeightedEdge> out;
    out.reserve(edges.size());
    for (const auto& [_, e] : edges) out.push_back(e);
    return out;
  }
};

// Applies all k ops in order; each op must be valid against the running
// prefix state. Throws InvalidOp with the offending op index.
GraphSnapshot apply_batch(const GraphSnapshot& g, const Batch& b);

// Validates without copying the graph; returns the offending index or -1.
std::int64_t validate_batch(const GraphSnapshot& g, const Batch& b);

}  // namespace mpcdyn
