#include "mpcdyn/graph.hpp"

namespace mpcdyn {

namespace {

void check_vertex(const GraphSnapshot& g, VertexId v, std::size_t index) {
  if (v >= g.n)
    throw Error(ErrorCode::InvalidOp,
                "op " + std::to_string(index) + ": vertex " + std::to_string(v) +
                    " out of range [0," + std::to_string(g.n) + ")",
                static_cast<std::int64_t>(index));
}

}  // namespace

GraphSnapshot apply_batch(const GraphSnapshot& g, const Batch& b) {
  GraphSnapshot out = g;
  for (std::size_t i = 0; i < b.ops.size(); ++i) {
    const UpdateOp& op = b.ops[i];
    check_vertex(out, op.edge.u, i);
    check_vertex(out, op.edge.v, i);
    if (op.kind == OpKind::Insert) {
      if (out.edges.count(op.edge.eid))
        throw Error(ErrorCode::InvalidOp,
                    "op " + std::to_string(i) + ": insert of present edge",
                    static_cast<std::int64_t>(i));
      out.edges.emplace(op.edge.eid, op.edge);
    } else {
      auto it = out.edges.find(op.edge.eid);
      if (it == out.edges.end())
        throw Error(ErrorCode::InvalidOp,
                    "op " + std::to_string(i) + ": delete of absent edge",
                    static_cast<std::int64_t>(i));
      out.edges.erase(it);
    }
  }
  return out;
}

std::int64_t validate_batch(const GraphSnapshot& g, const Batch& b) {
  // Tracks only the delta so large graphs are not copied.
  std::unordered_map<EdgeId, bool> delta;  // eid -> present after prefix
  for (std::size_t i = 0; i < b.ops.size(); ++i) {
    const UpdateOp& op = b.ops[i];
    if (op.edge.u >= g.n || op.edge.v >= g.n) return static_cast<std::int64_t>(i);
    auto it = delta.find(op.edge.eid);
    bool present = it != delta.end() ? it->second : g.has(op.edge.eid);
    if (op.kind == OpKind::Insert) {
      if (present) return static_cast<std::int64_t>(i);
      delta[op.edge.eid] = true;
    } else {
      if (!present) return static_cast<std::int64_t>(i);
      delta[op.edge.eid] = false;
    }
  }
  return -1;
}

}  // namespace mpcdyn
