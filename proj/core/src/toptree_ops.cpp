// Structural mutations of the top forest: batch link, batch cut, rebalancing,
// orientation, boundary refresh, and the Boruvka-style build.

#include <algorithm>
#include <cmath>
#include <queue>

#include "toptree_internal.hpp"

namespace mpcdyn {

using mpc::Cluster;
using mpc::exchange;
using mpc::KeyedDist;
using mpc::make_outs;
using mpc::Outs;
using mpc::ScratchGuard;

namespace {

constexpr std::size_t kLinkChunk = 512;
constexpr std::uint64_t kSingletonBit = 1ull << 63;

struct SetParentMsg {
  std::uint64_t node;
  std::uint64_t parent;
};

struct AddChildMsg {
  std::uint64_t parent;
  std::uint64_t child;
};

struct IncMsg {
  std::uint64_t vertex;
  EdgeId eid;
  std::int32_t delta;  // +1 insert, -1 erase
};

struct ChildUpdateMsg {
  std::uint64_t parent;
  std::uint64_t old_child;
  std::vector<std::uint64_t> repl;  // empty = removal
  std::uint64_t resident_words() const { return 3 + repl.size(); }
};

struct MiniDsu {
  std::vector<std::uint32_t> p;
  explicit MiniDsu(std::size_t n) : p(n) {
    for (std::size_t i = 0; i < n; ++i) p[i] = static_cast<std::uint32_t>(i);
  }
  std::uint32_t find(std::uint32_t x) {
    while (p[x] != x) {
      p[x] = p[p[x]];
      x = p[x];
    }
    return x;
  }
  void unite(std::uint32_t a, std::uint32_t b) { p[find(a)] = find(b); }
};

}  // namespace

TopForest::PacketMaps TopForest::request_child_packets(
    const std::vector<std::vector<std::uint64_t>>& parents) {
  std::size_t M = cluster_->machines();
  struct Req {
    std::uint64_t child, parent;
  };
  auto outs = make_outs<Req>(*cluster_);
  for (std::size_t m = 0; m < M; ++m)
    for (std::uint64_t pid : parents[m]) {
      const TopNode* nd = nodes_->find(pid);
      if (!nd) throw Error(ErrorCode::PreconditionViolated, "packet request for dead node");
      for (std::uint64_t ch : nd->children)
        outs[m].push_back({node_owner(ch), Req{ch, pid}});
    }
  auto in = exchange(*cluster_, std::move(outs));
  auto back = make_outs<ChildPacket>(*cluster_);
  for (std::size_t m = 0; m < M; ++m)
    for (const auto& env : in[m]) {
      const TopNode* nd = nodes_->find(env.value.child);
      if (!nd) throw Error(ErrorCode::PreconditionViolated, "packet request hit dead child");
      ChildPacket pk;
      pk.child = nd->id;
      pk.parent = env.value.parent;
      pk.rank = nd->rank;
      pk.root_vertex = nd->root_vertex;
      pk.cluster_min = nd->cluster_min;
      pk.arity = static_cast<std::uint32_t>(nd->children.size());
      pk.boundary = nd->boundary;
      pk.edge = nd->edge;
      back[m].push_back({node_owner(env.value.parent), std::move(pk)});
    }
  auto rin = exchange(*cluster_, std::move(back));
  PacketMaps maps;
  maps.c = cluster_;
  maps.by_parent.resize(M);
  maps.words.assign(M, 0);
  for (std::size_t m = 0; m < M; ++m) {
    for (auto& env : rin[m]) {
      maps.words[m] += env.value.resident_words();
      maps.by_parent[m][env.value.parent].push_back(std::move(env.value));
    }
    cluster_->add_scratch(m, static_cast<std::int64_t>(maps.words[m]));
    for (auto& [pid, v] : maps.by_parent[m])
      std::sort(v.begin(), v.end(),
                [](const ChildPacket& a, const ChildPacket& b) { return a.child < b.child; });
  }
  return maps;
}

std::vector<std::unordered_map<VertexId, std::uint32_t>> TopForest::probe_degrees(
    const std::vector<std::vector<VertexId>>& wanted) {
  std::size_t M = cluster_->machines();
  std::vector<std::vector<std::pair<std::uint64_t, std::uint64_t>>> reqs(M);
  for (std::size_t m = 0; m < M; ++m) {
    auto vs = wanted[m];
    std::sort(vs.begin(), vs.end());
    vs.erase(std::unique(vs.begin(), vs.end()), vs.end());
    for (VertexId v : vs) reqs[m].push_back({v, v});
  }
  struct DegAns {
    std::uint64_t vertex;
    std::uint32_t deg;
  };
  auto res = mpc::keyed_probe<std::vector<EdgeId>, DegAns>(
      *cluster_, incident_, reqs,
      [](std::uint64_t key, std::uint64_t, const std::vector<EdgeId>* v) {
        return DegAns{key, v ? static_cast<std::uint32_t>(v->size()) : 0};
      });
  std::vector<std::unordered_map<VertexId, std::uint32_t>> out(M);
  for (std::size_t m = 0; m < M; ++m)
    for (const auto& a : res[m]) out[m][static_cast<VertexId>(a.vertex)] = a.deg;
  return out;
}

// internal node from gathered member packets; boundary = summed incident
// counts filtered by forest degree, cluster_min = member minimum
TopNode TopForest::make_internal(std::uint64_t id, std::uint64_t parent, std::int32_t rank,
                                 const std::vector<const ChildPacket*>& members,
                                 const std::unordered_map<VertexId, std::uint32_t>& deg) const {
  TopNode nd;
  nd.id = id;
  nd.parent = parent;
  nd.rank = rank;
  std::map<VertexId, std::uint32_t> cnt;
  nd.cluster_min = ~VertexId{0};
  for (const ChildPacket* pk : members) {
    nd.children.push_back(pk->child);
    nd.cluster_min = std::min(nd.cluster_min, pk->cluster_min);
    for (const auto& bp : pk->boundary) cnt[bp.v] += bp.cnt;
  }
  std::sort(nd.children.begin(), nd.children.end());
  for (const auto& [v, c] : cnt) {
    auto it = deg.find(v);
    std::uint32_t d = it == deg.end() ? 0 : it->second;
    if (c < d) nd.boundary.push_back({v, c});
  }
  nd.root_vertex = nd.cluster_min;  // oriented later
  return nd;
}

std::vector<std::uint64_t> TopForest::anchor_leaves(const std::vector<VertexId>& vs) {
  std::size_t M = cluster_->machines();
  // min incident eid per vertex
  std::vector<std::vector<std::pair<std::uint64_t, std::uint64_t>>> reqs(M);
  for (std::size_t i = 0; i < vs.size(); ++i) reqs[i % M].push_back({vs[i], i});
  struct MinAns {
    std::uint64_t tag;
    EdgeId eid;
  };
  auto res = mpc::keyed_probe<std::vector<EdgeId>, MinAns>(
      *cluster_, incident_, reqs,
      [](std::uint64_t, std::uint64_t tag, const std::vector<EdgeId>* v) {
        return MinAns{tag, v && !v->empty() ? v->front() : kNoEdge};
      });
  std::vector<EdgeId> min_eid(vs.size(), kNoEdge);
  for (std::size_t m = 0; m < M; ++m)
    for (const auto& a : res[m]) min_eid[a.tag] = a.eid;
  // leaf id per eid
  std::vector<std::vector<std::pair<std::uint64_t, std::uint64_t>>> reqs2(M);
  for (std::size_t i = 0; i < vs.size(); ++i)
    if (min_eid[i] != kNoEdge) reqs2[i % M].push_back({min_eid[i], i});
  struct LeafAns {
    std::uint64_t tag;
    std::uint64_t leaf;
  };
  auto res2 = mpc::keyed_probe<std::uint64_t, LeafAns>(
      *cluster_, leaf_of_eid_, reqs2,
      [](std::uint64_t, std::uint64_t tag, const std::uint64_t* v) {
        return LeafAns{tag, v ? *v : kNoNode};
      });
  std::vector<std::uint64_t> out(vs.size(), kNoNode);
  for (std::size_t m = 0; m < M; ++m)
    for (const auto& a : res2[m]) out[a.tag] = a.leaf;
  return out;
}

// ---------------------------------------------------------------------------
// boundary/cluster_min refresh along ancestor chains (bottom-up)
// ---------------------------------------------------------------------------

void TopForest::refresh_boundaries_up(std::vector<std::uint64_t> start_nodes) {
  std::size_t M = cluster_->machines();
  std::sort(start_nodes.begin(), start_nodes.end());
  start_nodes.erase(std::unique(start_nodes.begin(), start_nodes.end()), start_nodes.end());
  // parents of the start leaves
  std::vector<std::uint64_t> current;
  for (std::uint64_t id : start_nodes) {
    const TopNode* nd = nodes_->find(id);
    if (nd && nd->parent != kNoNode) current.push_back(nd->parent);
  }
  int guard = 0;
  while (!current.empty()) {
    if (++guard > 64) throw Error(ErrorCode::PreconditionViolated, "refresh chain too long");
    std::sort(current.begin(), current.end());
    current.erase(std::unique(current.begin(), current.end()), current.end());
    std::vector<std::vector<std::uint64_t>> per_machine(M);
    for (std::uint64_t id : current) per_machine[node_owner(id)].push_back(id);
    auto maps = request_child_packets(per_machine);
    // degree lookups for boundary candidates
    std::vector<std::vector<VertexId>> want(M);
    for (std::size_t m = 0; m < M; ++m)
      for (const auto& [pid, pks] : maps.by_parent[m])
        for (const auto& pk : pks)
          for (const auto& bp : pk.boundary) want[m].push_back(bp.v);
    auto degs = probe_degrees(want);
    std::vector<std::uint64_t> next;
    for (std::size_t m = 0; m < M; ++m) {
      std::vector<std::uint64_t> pids;
      for (const auto& [pid, _] : maps.by_parent[m]) pids.push_back(pid);
      std::sort(pids.begin(), pids.end());
      for (std::uint64_t pid : pids) {
        const auto& pks = maps.by_parent[m].at(pid);
        const TopNode* old = nodes_->find(pid);
        std::vector<const ChildPacket*> members;
        for (const auto& pk : pks) members.push_back(&pk);
        TopNode fresh = make_internal(pid, old->parent, old->rank, members, degs[m]);
        fresh.root_vertex = old->root_vertex;
        if (old->parent != kNoNode) next.push_back(old->parent);
        put_node(std::move(fresh));
      }
    }
    current = std::move(next);
  }
}

// ---------------------------------------------------------------------------
// batch link
// ---------------------------------------------------------------------------

namespace {

struct LeafDirective {
  WeightedEdge edge;
  std::uint64_t leaf_id = kNoNode;
  // resolved parent node (rank 1); kNoNode until resolution
  std::uint64_t parent = kNoNode;
  VertexId attach_vertex = 0;
  bool parent_from_anchor = false;  // else chained to another directive / fresh root
};

struct MergeDirective {
  std::uint64_t root = kNoNode;  // root of the merging tree
  std::int32_t rank = 0;
  EdgeId via = kNoEdge;         // leaf whose chain hosts the attach point
  std::uint64_t grow = kNoNode;  // new root id when ranks tie with the target
  std::uint64_t grow_partner = kNoNode;  // target-tree root the new root also adopts
  std::uint64_t cursor = kNoNode;
  std::int32_t cursor_rank = 0;
  bool done = false;
};

}  // namespace

void TopForest::link_chunk(const std::vector<WeightedEdge>& edges) {
  if (edges.empty()) return;
  std::size_t M = cluster_->machines();

  // presence / duplicate validation
  {
    std::set<EdgeId> seen;
    std::vector<std::vector<std::pair<std::uint64_t, std::uint64_t>>> reqs(M);
    for (std::size_t i = 0; i < edges.size(); ++i) {
      if (!seen.insert(edges[i].eid).second)
        throw Error(ErrorCode::WouldCreateCycle, "duplicate edge in link batch",
                    static_cast<std::int64_t>(i));
      reqs[i % M].push_back({edges[i].eid, i});
    }
    struct Ans {
      std::uint64_t tag;
      std::uint64_t present;
    };
    auto res = mpc::keyed_probe<std::uint64_t, Ans>(
        *cluster_, leaf_of_eid_, reqs,
        [](std::uint64_t, std::uint64_t tag, const std::uint64_t* v) {
          return Ans{tag, v ? 1ull : 0ull};
        });
    for (std::size_t m = 0; m < M; ++m)
      for (const auto& a : res[m])
        if (a.present)
          throw Error(ErrorCode::WouldCreateCycle, "edge already in the forest",
                      static_cast<std::int64_t>(a.tag));
  }

  // endpoint set and their components
  std::vector<VertexId> verts;
  for (const auto& e : edges) {
    verts.push_back(e.u);
    verts.push_back(e.v);
  }
  std::sort(verts.begin(), verts.end());
  verts.erase(std::unique(verts.begin(), verts.end()), verts.end());
  auto anchors = anchor_leaves(verts);

  std::vector<std::pair<std::uint64_t, std::uint64_t>> walk_from;
  for (std::size_t i = 0; i < verts.size(); ++i)
    if (anchors[i] != kNoNode) walk_from.push_back({i, anchors[i]});
  auto walked = walk_up(walk_from, -1);

  std::unordered_map<VertexId, std::uint64_t> comp_key;   // vertex -> tree root | singleton
  std::unordered_map<std::uint64_t, std::int32_t> key_rank;
  for (std::size_t i = 0; i < verts.size(); ++i) comp_key[verts[i]] = kSingletonBit | verts[i];
  for (const auto& w : walked) {
    comp_key[verts[w.qid]] = w.node;
    key_rank[w.node] = w.rank;
  }

  // the plan runs on machine 0's share of memory
  ScratchGuard plan_scratch(*cluster_, 0);
  plan_scratch.set(edges.size() * 6 + verts.size() * 3);

  // union-find over component keys
  std::unordered_map<std::uint64_t, std::uint64_t> uf;
  std::function<std::uint64_t(std::uint64_t)> find = [&](std::uint64_t x) {
    while (uf[x] != x) {
      uf[x] = uf[uf[x]];
      x = uf[x];
    }
    return x;
  };
  for (const auto& [v, k] : comp_key)
    if (!uf.count(k)) uf[k] = k;
  for (std::size_t i = 0; i < edges.size(); ++i) {
    std::uint64_t a = find(comp_key[edges[i].u]), b2 = find(comp_key[edges[i].v]);
    if (a == b2)
      throw Error(ErrorCode::WouldCreateCycle, "edge closes a cycle",
                  static_cast<std::int64_t>(i));
    uf[a] = b2;
  }

  // group edges and keys into link components
  std::unordered_map<std::uint64_t, std::vector<std::size_t>> comp_edges;
  std::unordered_map<std::uint64_t, std::vector<std::uint64_t>> comp_keys;
  for (std::size_t i = 0; i < edges.size(); ++i)
    comp_edges[find(comp_key[edges[i].u])].push_back(i);
  for (const auto& [v, k] : comp_key) comp_keys[find(k)].push_back(k);
  for (auto& [c, ks] : comp_keys) {
    std::sort(ks.begin(), ks.end());
    ks.erase(std::unique(ks.begin(), ks.end()), ks.end());
  }

  std::vector<LeafDirective> leaves(edges.size());
  std::vector<MergeDirective> merges;

  for (auto& [comp, eidx] : comp_edges) {
    std::sort(eidx.begin(), eidx.end());
    // target: tree key of maximum rank (tie: min id); fresh seed otherwise
    std::uint64_t target = kNoNode;
    std::int32_t target_rank = 0;
    for (std::uint64_t k : comp_keys[comp]) {
      if (k & kSingletonBit) continue;
      std::int32_t r = key_rank[k];
      if (target == kNoNode || r > target_rank || (r == target_rank && k < target)) {
        target = k;
        target_rank = r;
      }
    }
    std::uint64_t fresh_root = kNoNode;
    std::uint64_t start_key;
    if (target == kNoNode) {
      fresh_root = alloc_node_id(0);
      start_key = comp_key[edges[eidx.front()].u];
    } else {
      start_key = target;
    }

    // BFS over the component's link edges from the start key
    std::unordered_map<std::uint64_t, std::vector<std::size_t>> at_key;
    for (std::size_t ei : eidx) {
      at_key[comp_key[edges[ei].u]].push_back(ei);
      at_key[comp_key[edges[ei].v]].push_back(ei);
    }
    // reached key -> the leaf directive that reached it (kNoEdge for start)
    std::unordered_map<std::uint64_t, std::size_t> reached;  // key -> edge idx + 1 (0 = start)
    std::uint64_t grow_id = kNoNode;
    reached[start_key] = 0;
    std::queue<std::uint64_t> q;
    q.push(start_key);
    while (!q.empty()) {
      std::uint64_t k = q.front();
      q.pop();
      auto it = at_key.find(k);
      if (it == at_key.end()) continue;
      for (std::size_t ei : it->second) {
        const WeightedEdge& e = edges[ei];
        std::uint64_t ku = comp_key[e.u], kv = comp_key[e.v];
        std::uint64_t other = ku == k ? kv : ku;
        if (reached.count(other)) {
          if (leaves[ei].leaf_id != kNoNode || reached[other] == ei + 1 || reached[k] == ei + 1)
            continue;  // already routed via this edge
          continue;    // both sides reached through other edges: cycle was excluded above
        }
        VertexId attach = ku == k ? e.u : e.v;
        LeafDirective& ld = leaves[ei];
        ld.edge = e;
        ld.leaf_id = alloc_node_id(0);
        ld.attach_vertex = attach;
        if (!(k & kSingletonBit)) {
          ld.parent_from_anchor = true;  // attach side inside an existing tree
        } else if (reached[k] == 0) {
          ld.parent = fresh_root;  // fresh seed
        } else {
          ld.parent = leaves[reached[k] - 1].leaf_id;  // chained: same parent as pred, fixed below
          ld.parent_from_anchor = false;
        }
        reached[other] = ei + 1;
        q.push(other);
        if (!(other & kSingletonBit) && other != target) {
          MergeDirective md;
          md.root = other;
          md.rank = key_rank[other];
          md.via = e.eid;
          if (md.rank == target_rank) {
            if (grow_id == kNoNode) grow_id = alloc_node_id(0);
            md.grow = grow_id;
            md.grow_partner = target;
          }
          merges.push_back(md);
        }
      }
    }
    if (fresh_root != kNoNode) {
      TopNode f;
      f.id = fresh_root;
      f.rank = 1;
      f.parent = kNoNode;
      put_node(std::move(f));  // children attached below; refreshed afterwards
    }
  }

  // resolve chained leaf parents: a leaf chained to a predecessor shares the
  // predecessor's (eventual) parent
  {
    std::unordered_map<std::uint64_t, std::size_t> by_leaf;
    for (std::size_t i = 0; i < leaves.size(); ++i) by_leaf[leaves[i].leaf_id] = i;
    for (auto& ld : leaves) {
      if (ld.parent_from_anchor || ld.parent == kNoNode) continue;
      std::uint64_t p = ld.parent;
      while (by_leaf.count(p)) {
        const LeafDirective& pred = leaves[by_leaf.at(p)];
        if (pred.parent_from_anchor || pred.parent == kNoNode) break;
        p = pred.parent;
      }
      ld.parent = p;  // either a fresh root id or a predecessor marked from_anchor
    }
  }

  // anchor-side parents: parent(min-leaf(attach_vertex))
  {
    std::unordered_map<VertexId, std::uint64_t> anchor_of;
    for (std::size_t i = 0; i < verts.size(); ++i) anchor_of[verts[i]] = anchors[i];
    std::vector<std::pair<std::uint64_t, std::uint64_t>> from;
    for (std::size_t i = 0; i < leaves.size(); ++i)
      if (leaves[i].parent_from_anchor) from.push_back({i, anchor_of.at(leaves[i].attach_vertex)});
    auto res = walk_up(from, 1);
    for (const auto& w : res) leaves[w.qid].parent = w.node;
  }
  // leaves chained to an anchor-resolved predecessor
  {
    std::unordered_map<std::uint64_t, std::size_t> by_leaf;
    for (std::size_t i = 0; i < leaves.size(); ++i) by_leaf[leaves[i].leaf_id] = i;
    for (auto& ld : leaves)
      if (!ld.parent_from_anchor && by_leaf.count(ld.parent))
        ld.parent = leaves[by_leaf.at(ld.parent)].parent;
  }

  // --- execution ---
  // incident lists + leaf index + leaf nodes + parent child lists
  {
    auto outs = make_outs<IncMsg>(*cluster_);
    for (const auto& e : edges) {
      outs[0].push_back({incident_.owner(e.u), IncMsg{e.u, e.eid, +1}});
      outs[0].push_back({incident_.owner(e.v), IncMsg{e.v, e.eid, +1}});
    }
    auto in = exchange(*cluster_, std::move(outs));
    for (std::size_t m = 0; m < M; ++m)
      for (const auto& env : in[m]) {
        auto* lst = incident_.find(env.value.vertex);
        if (!lst) {
          incident_.put(env.value.vertex, {env.value.eid});
        } else {
          lst->insert(std::lower_bound(lst->begin(), lst->end(), env.value.eid), env.value.eid);
          incident_.touch(env.value.vertex);
        }
      }
  }
  {
    struct LeafMsg {
      WeightedEdge edge;
      std::uint64_t leaf, parent;
    };
    auto outs = make_outs<LeafMsg>(*cluster_);
    auto outs2 = make_outs<AddChildMsg>(*cluster_);
    struct EidMsg {
      EdgeId eid;
      std::uint64_t leaf;
    };
    auto outs3 = make_outs<EidMsg>(*cluster_);
    for (const auto& ld : leaves) {
      outs[0].push_back({node_owner(ld.leaf_id), LeafMsg{ld.edge, ld.leaf_id, ld.parent}});
      outs2[0].push_back({node_owner(ld.parent), AddChildMsg{ld.parent, ld.leaf_id}});
      outs3[0].push_back({leaf_of_eid_.owner(ld.edge.eid), EidMsg{ld.edge.eid, ld.leaf_id}});
    }
    auto in = exchange(*cluster_, std::move(outs));
    for (std::size_t m = 0; m < M; ++m)
      for (const auto& env : in[m]) {
        TopNode leaf;
        leaf.id = env.value.leaf;
        leaf.parent = env.value.parent;
        leaf.rank = 0;
        leaf.edge = env.value.edge;
        leaf.cluster_min = std::min(leaf.edge.u, leaf.edge.v);
        leaf.root_vertex = leaf.cluster_min;
        leaf.boundary = {{leaf.edge.u, 1}, {leaf.edge.v, 1}};
        if (leaf.boundary[0].v > leaf.boundary[1].v) std::swap(leaf.boundary[0], leaf.boundary[1]);
        put_node(std::move(leaf));
      }
    auto in2 = exchange(*cluster_, std::move(outs2));
    for (std::size_t m = 0; m < M; ++m)
      for (const auto& env : in2[m]) {
        TopNode* nd = node_at(env.value.parent);
        if (!nd) throw Error(ErrorCode::PreconditionViolated, "attach to dead parent");
        nd->children.insert(std::lower_bound(nd->children.begin(), nd->children.end(),
                                             env.value.child),
                            env.value.child);
        node_words_changed(nd->id);
      }
    auto in3 = exchange(*cluster_, std::move(outs3));
    for (std::size_t m = 0; m < M; ++m)
      for (const auto& env : in3[m]) leaf_of_eid_.put(env.value.eid, env.value.leaf);
  }

  // merge loop: cursors climb the target-side chains level by level
  {
    // cursor init: the leaf that carries each merge
    std::unordered_map<EdgeId, std::uint64_t> leaf_by_eid;
    for (const auto& ld : leaves) leaf_by_eid[ld.edge.eid] = ld.leaf_id;
    for (auto& md : merges) {
      md.cursor = leaf_by_eid.at(md.via);
      md.cursor_rank = 0;
    }
    int guard = 0;
    std::set<std::uint64_t> grow_created;
    while (true) {
      bool pending = false;
      for (const auto& md : merges)
        if (!md.done) pending = true;
      if (!pending) break;
      if (++guard > 4 * (max_rank_ + 4) + 16)
        throw Error(ErrorCode::PreconditionViolated, "merge loop stalled");

      // advance cursors one parent step where possible
      std::vector<std::pair<std::uint64_t, std::uint64_t>> from;
      for (std::size_t i = 0; i < merges.size(); ++i)
        if (!merges[i].done && merges[i].cursor_rank < merges[i].rank + 1)
          from.push_back({i, merges[i].cursor});
      auto stepped = walk_up(from, 1);
      for (const auto& w : stepped) {
        merges[w.qid].cursor = w.node;
        merges[w.qid].cursor_rank = w.rank;
      }

      // attach or grow the due directives
      auto outs = make_outs<AddChildMsg>(*cluster_);
      auto pouts = make_outs<SetParentMsg>(*cluster_);
      struct GrowMsg {
        std::uint64_t id;
        std::int32_t rank;
      };
      auto gouts = make_outs<GrowMsg>(*cluster_);
      for (auto& md : merges) {
        if (md.done) continue;
        if (md.grow == kNoNode) {
          if (md.cursor_rank == md.rank + 1) {
            outs[0].push_back({node_owner(md.cursor), AddChildMsg{md.cursor, md.root}});
            pouts[0].push_back({node_owner(md.root), SetParentMsg{md.root, md.cursor}});
            md.done = true;
          }
        } else if (grow_created.count(md.grow)) {
          outs[0].push_back({node_owner(md.grow), AddChildMsg{md.grow, md.root}});
          pouts[0].push_back({node_owner(md.root), SetParentMsg{md.root, md.grow}});
          md.done = true;
        } else if (md.cursor_rank == md.rank && node_at(md.cursor) &&
                   node_at(md.cursor)->parent == kNoNode) {
          // rank tie: adopt both the target root and this tree under a new root
          grow_created.insert(md.grow);
          gouts[0].push_back({node_owner(md.grow), GrowMsg{md.grow, md.rank + 1}});
          outs[0].push_back({node_owner(md.grow), AddChildMsg{md.grow, md.grow_partner}});
          pouts[0].push_back(
              {node_owner(md.grow_partner), SetParentMsg{md.grow_partner, md.grow}});
          outs[0].push_back({node_owner(md.grow), AddChildMsg{md.grow, md.root}});
          pouts[0].push_back({node_owner(md.root), SetParentMsg{md.root, md.grow}});
          md.done = true;
        }
      }
      auto gin = exchange(*cluster_, std::move(gouts));
      for (std::size_t m = 0; m < M; ++m)
        for (const auto& env : gin[m]) {
          TopNode nr;
          nr.id = env.value.id;
          nr.rank = env.value.rank;
          nr.parent = kNoNode;
          put_node(std::move(nr));
        }
      auto ain = exchange(*cluster_, std::move(outs));
      for (std::size_t m = 0; m < M; ++m)
        for (const auto& env : ain[m]) {
          TopNode* nd = node_at(env.value.parent);
          if (!nd) throw Error(ErrorCode::PreconditionViolated, "merge attach to dead node");
          nd->children.insert(std::lower_bound(nd->children.begin(), nd->children.end(),
                                               env.value.child),
                              env.value.child);
          node_words_changed(nd->id);
        }
      auto pin = exchange(*cluster_, std::move(pouts));
      for (std::size_t m = 0; m < M; ++m)
        for (const auto& env : pin[m]) {
          TopNode* nd = node_at(env.value.node);
          if (!nd) throw Error(ErrorCode::PreconditionViolated, "reparent of dead node");
          nd->parent = env.value.parent;
        }
    }
  }

  // refresh: chains from the new leaves plus every endpoint's pre-link anchor
  std::vector<std::uint64_t> starts;
  for (const auto& ld : leaves) starts.push_back(ld.leaf_id);
  for (std::size_t i = 0; i < verts.size(); ++i)
    if (anchors[i] != kNoNode) starts.push_back(anchors[i]);
  refresh_boundaries_up(std::move(starts));
  recompute_max_rank();
}

void TopForest::batch_link(const std::vector<WeightedEdge>& edges) {
  for (std::size_t off = 0; off < edges.size(); off += kLinkChunk) {
    std::vector<WeightedEdge> chunk(
        edges.begin() + off,
        edges.begin() + std::min(edges.size(), off + kLinkChunk));
    link_chunk(chunk);
    rebalance();
  }
  if (!edges.empty()) orient();
}

// ---------------------------------------------------------------------------
// batch cut
// ---------------------------------------------------------------------------

void TopForest::cut_chunk(const std::vector<EdgeId>& eids) {
  if (eids.empty()) return;
  std::size_t M = cluster_->machines();

  // resolve leaves; absent edges (or duplicates) are reported by index
  std::vector<std::uint64_t> leaf_ids(eids.size(), kNoNode);
  {
    std::set<EdgeId> seen;
    std::vector<std::vector<std::pair<std::uint64_t, std::uint64_t>>> reqs(M);
    for (std::size_t i = 0; i < eids.size(); ++i) {
      if (!seen.insert(eids[i]).second)
        throw Error(ErrorCode::EdgeAbsent, "edge cut twice in one batch",
                    static_cast<std::int64_t>(i));
      reqs[i % M].push_back({eids[i], i});
    }
    struct Ans {
      std::uint64_t tag, leaf;
    };
    auto res = mpc::keyed_probe<std::uint64_t, Ans>(
        *cluster_, leaf_of_eid_, reqs,
        [](std::uint64_t, std::uint64_t tag, const std::uint64_t* v) {
          return Ans{tag, v ? *v : kNoNode};
        });
    for (std::size_t m = 0; m < M; ++m)
      for (const auto& a : res[m]) leaf_ids[a.tag] = a.leaf;
    for (std::size_t i = 0; i < eids.size(); ++i)
      if (leaf_ids[i] == kNoNode)
        throw Error(ErrorCode::EdgeAbsent, "cut of absent edge", static_cast<std::int64_t>(i));
  }

  // incident list and index maintenance
  {
    auto outs = make_outs<IncMsg>(*cluster_);
    for (EdgeId e : eids) {
      outs[0].push_back({incident_.owner(eid_lo(e)), IncMsg{eid_lo(e), e, -1}});
      outs[0].push_back({incident_.owner(eid_hi(e)), IncMsg{eid_hi(e), e, -1}});
    }
    auto in = exchange(*cluster_, std::move(outs));
    for (std::size_t m = 0; m < M; ++m)
      for (const auto& env : in[m]) {
        auto* lst = incident_.find(env.value.vertex);
        if (lst) {
          lst->erase(std::remove(lst->begin(), lst->end(), env.value.eid), lst->end());
          if (lst->empty())
            incident_.erase(env.value.vertex);
          else
            incident_.touch(env.value.vertex);
        }
      }
  }

  // erase leaves, seed parent updates
  std::vector<std::vector<ChildUpdateMsg>> pending(M);
  {
    struct EraseMsg {
      std::uint64_t leaf;
      EdgeId eid;
    };
    auto outs = make_outs<EraseMsg>(*cluster_);
    for (std::size_t i = 0; i < eids.size(); ++i)
      outs[0].push_back({node_owner(leaf_ids[i]), EraseMsg{leaf_ids[i], eids[i]}});
    auto in = exchange(*cluster_, std::move(outs));
    auto outs2 = make_outs<ChildUpdateMsg>(*cluster_);
    struct EidErase {
      EdgeId eid;
    };
    auto outs3 = make_outs<EidErase>(*cluster_);
    for (std::size_t m = 0; m < M; ++m)
      for (const auto& env : in[m]) {
        const TopNode* leaf = node_at(env.value.leaf);
        if (!leaf) throw Error(ErrorCode::PreconditionViolated, "cut leaf vanished");
        if (leaf->parent != kNoNode)
          outs2[m].push_back(
              {node_owner(leaf->parent), ChildUpdateMsg{leaf->parent, env.value.leaf, {}}});
        erase_node(env.value.leaf);
        outs3[m].push_back({leaf_of_eid_.owner(env.value.eid), EidErase{env.value.eid}});
      }
    auto in2 = exchange(*cluster_, std::move(outs2));
    for (std::size_t m = 0; m < M; ++m)
      for (auto& env : in2[m]) pending[m].push_back(std::move(env.value));
    auto in3 = exchange(*cluster_, std::move(outs3));
    for (std::size_t m = 0; m < M; ++m)
      for (const auto& env : in3[m]) leaf_of_eid_.erase(env.value.eid);
  }

  // bottom-up split loop
  std::int32_t top = max_rank_;
  for (std::int32_t r = 1; r <= top; ++r) {
    // apply updates to this level's parents
    std::vector<std::vector<std::uint64_t>> affected(M);
    for (std::size_t m = 0; m < M; ++m) {
      for (const auto& up : pending[m]) {
        TopNode* nd = node_at(up.parent);
        if (!nd || nd->rank != r)
          throw Error(ErrorCode::PreconditionViolated, "child update misrouted");
        auto& ch = nd->children;
        ch.erase(std::remove(ch.begin(), ch.end(), up.old_child), ch.end());
        for (std::uint64_t nw : up.repl)
          ch.insert(std::lower_bound(ch.begin(), ch.end(), nw), nw);
        node_words_changed(nd->id);
        affected[m].push_back(up.parent);
      }
      std::sort(affected[m].begin(), affected[m].end());
      affected[m].erase(std::unique(affected[m].begin(), affected[m].end()), affected[m].end());
      pending[m].clear();
    }

    // dead parents report upward without a gather
    std::vector<std::vector<std::uint64_t>> alive(M);
    auto up_outs = make_outs<ChildUpdateMsg>(*cluster_);
    for (std::size_t m = 0; m < M; ++m)
      for (std::uint64_t pid : affected[m]) {
        TopNode* nd = node_at(pid);
        if (nd->children.empty()) {
          if (nd->parent != kNoNode)
            up_outs[m].push_back({node_owner(nd->parent), ChildUpdateMsg{nd->parent, pid, {}}});
          erase_node(pid);
        } else {
          alive[m].push_back(pid);
        }
      }

    // recompute survivors; split into connected parts
    auto maps = request_child_packets(alive);
    std::vector<std::vector<VertexId>> want(M);
    for (std::size_t m = 0; m < M; ++m)
      for (const auto& [pid, pks] : maps.by_parent[m])
        for (const auto& pk : pks)
          for (const auto& bp : pk.boundary) want[m].push_back(bp.v);
    auto degs = probe_degrees(want);

    auto sp_outs = make_outs<SetParentMsg>(*cluster_);
    for (std::size_t m = 0; m < M; ++m) {
      for (std::uint64_t pid : alive[m]) {
        auto& pks = maps.by_parent[m].at(pid);
        std::uint64_t grandparent = node_at(pid)->parent;
        std::vector<CarveItem> items;
        std::unordered_map<std::uint64_t, const ChildPacket*> by_id;
        for (const auto& pk : pks) {
          CarveItem it;
          it.id = pk.child;
          it.size = 1;
          for (const auto& bp : pk.boundary) it.shared.push_back(bp.v);
          items.push_back(std::move(it));
          by_id[pk.child] = &pk;
        }
        auto comps = shared_vertex_components(items);
        // the component holding the smallest child keeps the node id
        std::size_t keep = 0;
        for (std::size_t ci = 1; ci < comps.size(); ++ci)
          if (*std::min_element(comps[ci].begin(), comps[ci].end()) <
              *std::min_element(comps[keep].begin(), comps[keep].end()))
            keep = ci;
        std::vector<std::uint64_t> repl;
        for (std::size_t ci = 0; ci < comps.size(); ++ci) {
          std::uint64_t id = ci == keep ? pid : alloc_node_id(m);
          std::vector<const ChildPacket*> members;
          for (std::uint64_t cid : comps[ci]) members.push_back(by_id.at(cid));
          std::sort(members.begin(), members.end(),
                    [](const ChildPacket* a, const ChildPacket* b) { return a->child < b->child; });
          TopNode part = make_internal(id, grandparent, r, members, degs[m]);
          if (ci != keep)
            for (std::uint64_t cid : comps[ci])
              sp_outs[m].push_back({node_owner(cid), SetParentMsg{cid, id}});
          repl.push_back(id);
          put_node(std::move(part));
        }
        if (grandparent != kNoNode) {
          // replacement list doubles as a change notification upward
          ChildUpdateMsg up{grandparent, pid, repl};
          up_outs[m].push_back({node_owner(grandparent), std::move(up)});
        }
      }
    }
    auto spin = exchange(*cluster_, std::move(sp_outs));
    for (std::size_t m = 0; m < M; ++m)
      for (const auto& env : spin[m]) {
        TopNode* nd = node_at(env.value.node);
        if (nd) nd->parent = env.value.parent;
      }
    auto upin = exchange(*cluster_, std::move(up_outs));
    for (std::size_t m = 0; m < M; ++m)
      for (auto& env : upin[m]) pending[m].push_back(std::move(env.value));
  }

  // membership refresh along the endpoints' surviving chains
  std::vector<VertexId> endpoints;
  for (EdgeId e : eids) {
    endpoints.push_back(eid_lo(e));
    endpoints.push_back(eid_hi(e));
  }
  std::sort(endpoints.begin(), endpoints.end());
  endpoints.erase(std::unique(endpoints.begin(), endpoints.end()), endpoints.end());
  auto anchors = anchor_leaves(endpoints);
  std::vector<std::uint64_t> starts;
  for (std::uint64_t a : anchors)
    if (a != kNoNode) starts.push_back(a);
  refresh_boundaries_up(std::move(starts));
  recompute_max_rank();
}

void TopForest::batch_cut(const std::vector<EdgeId>& eids) {
  for (std::size_t off = 0; off < eids.size(); off += kLinkChunk) {
    std::vector<EdgeId> chunk(eids.begin() + off,
                              eids.begin() + std::min(eids.size(), off + kLinkChunk));
    cut_chunk(chunk);
    rebalance();
  }
  if (!eids.empty()) orient();
}

// ---------------------------------------------------------------------------
// rebalance
// ---------------------------------------------------------------------------

void TopForest::rebalance() {
  std::size_t M = cluster_->machines();
  std::uint32_t cb = kArityC * b_;
  // phase 1 (underload regrouping) and phase 2 (overload splitting) can feed
  // each other at the margins; sweep until the whole forest is clean
  for (int sweep = 0;; ++sweep) {
    if (sweep > 12) throw Error(ErrorCode::PreconditionViolated, "rebalance did not converge");
    recompute_max_rank();

  // phase 1, bottom-up: remove underloaded nodes by regrouping grandchildren
  for (std::int32_t r = 2; r <= max_rank_ + 1; ++r) {
    // needy nodes report to their parents
    auto needy = nodes_->scan_ids([&](const TopNode& nd) {
      return nd.rank == r - 1 && nd.parent != kNoNode && !nd.is_leaf() &&
             nd.children.size() < b_;
    });
    struct NeedMsg {
      std::uint64_t parent, child;
    };
    auto outs = make_outs<NeedMsg>(*cluster_);
    for (std::size_t m = 0; m < M; ++m)
      for (std::uint64_t id : needy[m])
        outs[m].push_back({node_owner(node_at(id)->parent), NeedMsg{node_at(id)->parent, id}});
    auto in = exchange(*cluster_, std::move(outs));
    std::vector<std::vector<std::uint64_t>> parents(M);
    for (std::size_t m = 0; m < M; ++m) {
      for (const auto& env : in[m]) parents[m].push_back(env.value.parent);
      std::sort(parents[m].begin(), parents[m].end());
      parents[m].erase(std::unique(parents[m].begin(), parents[m].end()), parents[m].end());
    }

    auto maps = request_child_packets(parents);

    // per parent: choose merge groups = components of needy + one partner each
    struct Regroup {
      std::uint64_t parent;
      std::vector<std::uint64_t> members;  // children to dissolve
    };
    std::vector<std::vector<Regroup>> plans(M);
    for (std::size_t m = 0; m < M; ++m)
      for (std::uint64_t pid : parents[m]) {
        auto& pks = maps.by_parent[m].at(pid);
        std::unordered_map<std::uint64_t, const ChildPacket*> by_id;
        std::vector<CarveItem> items;
        for (const auto& pk : pks) {
          by_id[pk.child] = &pk;
          CarveItem it;
          it.id = pk.child;
          it.size = 1;
          for (const auto& bp : pk.boundary) it.shared.push_back(bp.v);
          items.push_back(std::move(it));
        }
        // adjacency among children via shared vertices
        std::unordered_map<VertexId, std::vector<std::uint64_t>> at_v;
        for (const auto& it : items)
          for (VertexId v : it.shared) at_v[v].push_back(it.id);
        MiniDsu uf(items.size());
        std::unordered_map<std::uint64_t, std::uint32_t> idx;
        for (std::size_t i = 0; i < items.size(); ++i) idx[items[i].id] = i;
        std::set<std::uint64_t> affected_children;
        for (const auto& pk : pks) {
          if (pk.rank < 1 || pk.arity >= b_) continue;
          affected_children.insert(pk.child);
          // partner: adjacent child with the largest arity, tie min id
          std::uint64_t best = kNoNode;
          std::uint32_t best_ar = 0;
          for (const auto& bp : pk.boundary)
            for (std::uint64_t nb : at_v[bp.v]) {
              if (nb == pk.child) continue;
              const ChildPacket* q = by_id.at(nb);
              if (best == kNoNode || q->arity > best_ar || (q->arity == best_ar && nb < best)) {
                best = nb;
                best_ar = q->arity;
              }
            }
          if (best != kNoNode) {
            affected_children.insert(best);
            uf.unite(idx[pk.child], idx[best]);
          }
        }
        if (affected_children.empty()) continue;
        std::unordered_map<std::uint32_t, Regroup> groups;
        for (std::uint64_t cid : affected_children) {
          std::uint32_t root = uf.find(idx[cid]);
          auto& g = groups[root];
          g.parent = pid;
          g.members.push_back(cid);
        }
        for (auto& [_, g] : groups) {
          std::sort(g.members.begin(), g.members.end());
          plans[m].push_back(std::move(g));
        }
      }

    // gather grandchildren of all regroup members
    std::vector<std::vector<std::uint64_t>> member_ids(M);
    for (std::size_t m = 0; m < M; ++m)
      for (const auto& g : plans[m])
        for (std::uint64_t cid : g.members)
          member_ids[node_owner(cid)].push_back(cid);
    for (auto& v : member_ids) std::sort(v.begin(), v.end());
    // members live on their own machines; request via their owners
    auto gmaps = request_child_packets(member_ids);
    // route grandchild packets to the plan owner (parent's machine)
    struct GPacket {
      std::uint64_t group_parent;
      ChildPacket pk;
      std::uint64_t resident_words() const { return 1 + pk.resident_words(); }
    };
    auto gouts = make_outs<GPacket>(*cluster_);
    // map member -> (plan machine, parent)
    std::unordered_map<std::uint64_t, std::pair<std::uint32_t, std::uint64_t>> member_home;
    for (std::size_t m = 0; m < M; ++m)
      for (const auto& g : plans[m])
        for (std::uint64_t cid : g.members)
          member_home[cid] = {static_cast<std::uint32_t>(m), g.parent};
    for (std::size_t m = 0; m < M; ++m)
      for (auto& [mid, pks] : gmaps.by_parent[m])
        for (auto& pk : pks) {
          auto [home, gp] = member_home.at(mid);
          gouts[m].push_back({home, GPacket{gp, pk}});
        }
    auto gin = exchange(*cluster_, std::move(gouts));
    std::vector<std::unordered_map<std::uint64_t, std::vector<ChildPacket>>> grand(M);
    for (std::size_t m = 0; m < M; ++m)
      for (auto& env : gin[m])
        grand[m][env.value.group_parent].push_back(std::move(env.value.pk));

    // degrees for grandchild boundary vertices
    std::vector<std::vector<VertexId>> want(M);
    for (std::size_t m = 0; m < M; ++m)
      for (const auto& [gp, pks] : grand[m])
        for (const auto& pk : pks)
          for (const auto& bp : pk.boundary) want[m].push_back(bp.v);
    auto degs = probe_degrees(want);

    auto sp_outs = make_outs<SetParentMsg>(*cluster_);
    for (std::size_t m = 0; m < M; ++m) {
      for (auto& g : plans[m]) {
        // grandchildren of this group's members
        std::vector<const ChildPacket*> pool;
        std::set<std::uint64_t> member_set(g.members.begin(), g.members.end());
        auto git = grand[m].find(g.parent);
        if (git == grand[m].end()) continue;
        std::unordered_map<std::uint64_t, const ChildPacket*> by_id;
        for (const auto& pk : git->second)
          if (member_set.count(pk.parent)) {
            pool.push_back(&pk);
            by_id[pk.child] = &pk;
          }
        if (pool.empty()) continue;
        std::sort(pool.begin(), pool.end(),
                  [](const ChildPacket* a, const ChildPacket* b) { return a->child < b->child; });
        std::vector<CarveItem> items;
        for (const ChildPacket* pk : pool) {
          CarveItem it;
          it.id = pk->child;
          it.size = 1;
          for (const auto& bp : pk->boundary) it.shared.push_back(bp.v);
          items.push_back(std::move(it));
        }
        auto groups = carve_connected_groups(items, b_);
        TopNode* parent = node_at(g.parent);
        auto& ch = parent->children;
        for (std::uint64_t cid : g.members) {
          ch.erase(std::remove(ch.begin(), ch.end(), cid), ch.end());
          erase_node(cid);
        }
        for (const auto& grp : groups) {
          std::uint64_t id = alloc_node_id(m);
          std::vector<const ChildPacket*> members;
          for (std::uint64_t gc : grp) members.push_back(by_id.at(gc));
          TopNode node = make_internal(id, g.parent, r - 1, members, degs[m]);
          for (std::uint64_t gc : grp)
            sp_outs[m].push_back({node_owner(gc), SetParentMsg{gc, id}});
          ch.insert(std::lower_bound(ch.begin(), ch.end(), id), id);
          put_node(std::move(node));
        }
        node_words_changed(g.parent);
      }
    }
    auto spin = exchange(*cluster_, std::move(sp_outs));
    for (std::size_t m = 0; m < M; ++m)
      for (const auto& env : spin[m]) {
        TopNode* nd = node_at(env.value.node);
        if (nd) nd->parent = env.value.parent;
      }
  }

  // phase 2, pipelined: split overloaded nodes until the whole forest is clean
  int guard = 0;
  for (;;) {
    auto over = nodes_->scan_ids(
        [&](const TopNode& nd) { return !nd.is_leaf() && nd.children.size() > cb; });
    std::size_t total = 0;
    for (auto& v : over) total += v.size();
    if (total == 0) break;
    if (++guard > 4 * (max_rank_ + 4) + 16) {
      std::string detail = "overload splitting stalled:";
      for (std::size_t m = 0; m < M; ++m)
        for (std::uint64_t pid : over[m]) {
          const TopNode* nd = node_at(pid);
          detail += " node " + std::to_string(pid) + " rank " + std::to_string(nd->rank) +
                    " arity " + std::to_string(nd->children.size());
        }
      throw Error(ErrorCode::PreconditionViolated, detail);
    }

    auto maps = request_child_packets(over);
    std::vector<std::vector<VertexId>> want(M);
    for (std::size_t m = 0; m < M; ++m)
      for (const auto& [pid, pks] : maps.by_parent[m])
        for (const auto& pk : pks)
          for (const auto& bp : pk.boundary) want[m].push_back(bp.v);
    auto degs = probe_degrees(want);

    auto sp_outs = make_outs<SetParentMsg>(*cluster_);
    auto up_outs = make_outs<ChildUpdateMsg>(*cluster_);
    std::vector<std::vector<std::uint64_t>> dissolve(M);
    for (std::size_t m = 0; m < M; ++m)
      for (std::uint64_t pid : over[m]) {
        auto& pks = maps.by_parent[m].at(pid);
        TopNode* old = node_at(pid);
        std::unordered_map<std::uint64_t, const ChildPacket*> by_id;
        std::vector<CarveItem> items;
        for (const auto& pk : pks) {
          by_id[pk.child] = &pk;
          CarveItem it;
          it.id = pk.child;
          it.size = 1;
          for (const auto& bp : pk.boundary) it.shared.push_back(bp.v);
          items.push_back(std::move(it));
        }
        auto groups = carve_connected_groups(items, b_);
        bool stuck = groups.size() <= 1;
        for (const auto& grp : groups)
          if (grp.size() > cb) stuck = true;
        if (stuck) {
          // hub-shaped child structure: no child-level split exists; rebuild
          // this node's children from its grandchildren instead
          dissolve[m].push_back(pid);
          continue;
        }
        std::vector<std::uint64_t> repl;
        std::int32_t r = old->rank;
        std::uint64_t parent = old->parent;
        bool was_root = parent == kNoNode;
        for (std::size_t gi = 0; gi < groups.size(); ++gi) {
          std::uint64_t id = gi == 0 ? pid : alloc_node_id(m);
          std::vector<const ChildPacket*> members;
          for (std::uint64_t cid : groups[gi]) members.push_back(by_id.at(cid));
          std::sort(members.begin(), members.end(),
                    [](const ChildPacket* a, const ChildPacket* b) { return a->child < b->child; });
          TopNode part = make_internal(id, parent, r, members, degs[m]);
          if (gi != 0)
            for (std::uint64_t cid : groups[gi])
              sp_outs[m].push_back({node_owner(cid), SetParentMsg{cid, id}});
          repl.push_back(id);
          put_node(std::move(part));
        }
        if (was_root) {
          // grow a new root above the split parts
          std::uint64_t nr = alloc_node_id(m);
          TopNode root;
          root.id = nr;
          root.rank = r + 1;
          root.parent = kNoNode;
          root.children = repl;
          std::sort(root.children.begin(), root.children.end());
          root.cluster_min = ~VertexId{0};
          for (std::uint64_t cid : repl) {
            const TopNode* part = node_at(cid);
            root.cluster_min = std::min(root.cluster_min, part->cluster_min);
            sp_outs[m].push_back({node_owner(cid), SetParentMsg{cid, nr}});
          }
          root.root_vertex = root.cluster_min;
          put_node(std::move(root));
        } else {
          up_outs[m].push_back({node_owner(parent), ChildUpdateMsg{parent, pid, repl}});
        }
      }
    auto spin = exchange(*cluster_, std::move(sp_outs));
    for (std::size_t m = 0; m < M; ++m)
      for (const auto& env : spin[m]) {
        TopNode* nd = node_at(env.value.node);
        if (nd) nd->parent = env.value.parent;
      }
    auto upin = exchange(*cluster_, std::move(up_outs));
    for (std::size_t m = 0; m < M; ++m)
      for (const auto& env : upin[m]) {
        TopNode* nd = node_at(env.value.parent);
        if (!nd) continue;
        auto& ch = nd->children;
        ch.erase(std::remove(ch.begin(), ch.end(), env.value.old_child), ch.end());
        for (std::uint64_t nw : env.value.repl)
          ch.insert(std::lower_bound(ch.begin(), ch.end(), nw), nw);
        node_words_changed(nd->id);
      }
    dissolve_regroup(dissolve);
    recompute_max_rank();
  }

  // collapse chains of single-child roots
  for (;;) {
    auto silly = nodes_->scan_ids([](const TopNode& nd) {
      return nd.parent == kNoNode && nd.rank > 1 && nd.children.size() == 1;
    });
    std::size_t total = 0;
    for (auto& v : silly) total += v.size();
    if (total == 0) break;
    auto outs = make_outs<SetParentMsg>(*cluster_);
    for (std::size_t m = 0; m < M; ++m)
      for (std::uint64_t id : silly[m]) {
        std::uint64_t child = node_at(id)->children.front();
        outs[m].push_back({node_owner(child), SetParentMsg{child, kNoNode}});
        erase_node(id);
      }
    auto in = exchange(*cluster_, std::move(outs));
    for (std::size_t m = 0; m < M; ++m)
      for (const auto& env : in[m]) {
        TopNode* nd = node_at(env.value.node);
        if (nd) nd->parent = kNoNode;
      }
  }

  // clean when no internal node is under- or overloaded
  auto dirty = nodes_->scan_ids([&](const TopNode& nd) {
    if (nd.is_leaf()) return false;
    if (nd.children.size() > cb) return true;
    return nd.parent != kNoNode && nd.children.size() < b_;
  });
  std::size_t bad = 0;
  for (auto& v : dirty) bad += v.size();
  if (bad == 0) break;
  }
  recompute_max_rank();
}

void TopForest::dissolve_regroup(const std::vector<std::vector<std::uint64_t>>& parents) {
  std::size_t M = cluster_->machines();
  std::size_t total = 0;
  for (const auto& v : parents) total += v.size();
  if (total == 0) return;

  // children lists of the nodes being dissolved
  std::vector<std::vector<std::uint64_t>> member_ids(M);
  std::unordered_map<std::uint64_t, std::pair<std::uint32_t, std::uint64_t>> member_home;
  for (std::size_t m = 0; m < M; ++m)
    for (std::uint64_t pid : parents[m]) {
      const TopNode* nd = node_at(pid);
      if (!nd || nd->rank < 2)
        throw Error(ErrorCode::PreconditionViolated, "dissolve needs internal children");
      for (std::uint64_t cid : nd->children) {
        member_ids[node_owner(cid)].push_back(cid);
        member_home[cid] = {static_cast<std::uint32_t>(m), pid};
      }
    }
  for (auto& v : member_ids) std::sort(v.begin(), v.end());
  auto gmaps = request_child_packets(member_ids);

  struct GPacket {
    std::uint64_t group_parent;
    ChildPacket pk;
    std::uint64_t resident_words() const { return 1 + pk.resident_words(); }
  };
  auto gouts = make_outs<GPacket>(*cluster_);
  for (std::size_t m = 0; m < M; ++m)
    for (auto& [mid, pks] : gmaps.by_parent[m])
      for (auto& pk : pks) {
        auto [home, gp] = member_home.at(mid);
        gouts[m].push_back({home, GPacket{gp, pk}});
      }
  auto gin = exchange(*cluster_, std::move(gouts));
  std::vector<std::unordered_map<std::uint64_t, std::vector<ChildPacket>>> grand(M);
  for (std::size_t m = 0; m < M; ++m)
    for (auto& env : gin[m])
      grand[m][env.value.group_parent].push_back(std::move(env.value.pk));

  std::vector<std::vector<VertexId>> want(M);
  for (std::size_t m = 0; m < M; ++m)
    for (const auto& [gp, pks] : grand[m])
      for (const auto& pk : pks)
        for (const auto& bp : pk.boundary) want[m].push_back(bp.v);
  auto degs = probe_degrees(want);

  auto sp_outs = make_outs<SetParentMsg>(*cluster_);
  for (std::size_t m = 0; m < M; ++m)
    for (std::uint64_t pid : parents[m]) {
      auto git = grand[m].find(pid);
      if (git == grand[m].end()) continue;
      auto& pool = git->second;
      std::sort(pool.begin(), pool.end(),
                [](const ChildPacket& a, const ChildPacket& b) { return a.child < b.child; });
      std::unordered_map<std::uint64_t, const ChildPacket*> by_id;
      std::vector<CarveItem> items;
      for (const auto& pk : pool) {
        by_id[pk.child] = &pk;
        CarveItem it;
        it.id = pk.child;
        it.size = 1;
        for (const auto& bp : pk.boundary) it.shared.push_back(bp.v);
        items.push_back(std::move(it));
      }
      auto groups = carve_connected_groups(items, b_);
      TopNode* parent = node_at(pid);
      std::int32_t child_rank = parent->rank - 1;
      for (std::uint64_t cid : parent->children) erase_node(cid);
      parent->children.clear();
      for (const auto& grp : groups) {
        std::uint64_t id = alloc_node_id(m);
        std::vector<const ChildPacket*> members;
        for (std::uint64_t gc : grp) members.push_back(by_id.at(gc));
        std::sort(members.begin(), members.end(),
                  [](const ChildPacket* a, const ChildPacket* b) { return a->child < b->child; });
        TopNode node = make_internal(id, pid, child_rank, members, degs[m]);
        for (std::uint64_t gc : grp) sp_outs[m].push_back({node_owner(gc), SetParentMsg{gc, id}});
        parent->children.insert(
            std::lower_bound(parent->children.begin(), parent->children.end(), id), id);
        put_node(std::move(node));
      }
      node_words_changed(pid);
    }
  auto spin = exchange(*cluster_, std::move(sp_outs));
  for (std::size_t m = 0; m < M; ++m)
    for (const auto& env : spin[m]) {
      TopNode* nd = node_at(env.value.node);
      if (nd) nd->parent = env.value.parent;
    }
}

// ---------------------------------------------------------------------------
// orientation: root_vertex assignment, top-down
// ---------------------------------------------------------------------------

void TopForest::orient() {
  std::size_t M = cluster_->machines();
  recompute_max_rank();
  // per-machine pending assignments: node -> its root-side vertex
  std::vector<std::unordered_map<std::uint64_t, VertexId>> rho(M);
  for (std::int32_t r = max_rank_; r >= 1; --r) {
    std::vector<std::vector<std::uint64_t>> active(M);
    for (std::size_t m = 0; m < M; ++m) {
      auto roots = nodes_->scan_ids(
          [&](const TopNode& nd) { return nd.rank == r && nd.parent == kNoNode; });
      for (std::uint64_t id : roots[m]) {
        TopNode* nd = node_at(id);
        nd->root_vertex = nd->cluster_min;
        active[m].push_back(id);
      }
      for (const auto& [id, v] : rho[m]) {
        TopNode* nd = node_at(id);
        if (!nd || nd->rank != r)
          throw Error(ErrorCode::PreconditionViolated, "orientation misrouted");
        nd->root_vertex = v;
        active[m].push_back(id);
      }
      std::sort(active[m].begin(), active[m].end());
      rho[m].clear();
    }

    auto maps = request_child_packets(active);
    struct AssignMsg {
      std::uint64_t node;
      VertexId v;
    };
    auto outs = make_outs<AssignMsg>(*cluster_);
    for (std::size_t m = 0; m < M; ++m)
      for (std::uint64_t pid : active[m]) {
        const TopNode* nd = node_at(pid);
        auto& pks = maps.by_parent[m].at(pid);
        // BFS from the root-side vertex over the child/junction bipartite graph
        std::unordered_map<VertexId, std::vector<std::size_t>> at_v;
        for (std::size_t i = 0; i < pks.size(); ++i)
          for (const auto& bp : pks[i].boundary) at_v[bp.v].push_back(i);
        std::vector<VertexId> entry(pks.size(), ~VertexId{0});
        std::queue<std::size_t> q;
        VertexId root_v = nd->root_vertex;
        if (at_v.count(root_v)) {
          for (std::size_t i : at_v[root_v]) {
            entry[i] = root_v;
            q.push(i);
          }
        } else {
          for (std::size_t i = 0; i < pks.size(); ++i)
            if (pks[i].cluster_min == root_v) {
              entry[i] = root_v;
              q.push(i);
            }
        }
        std::set<VertexId> seen_v{root_v};
        while (!q.empty()) {
          std::size_t i = q.front();
          q.pop();
          for (const auto& bp : pks[i].boundary) {
            if (seen_v.count(bp.v)) continue;
            seen_v.insert(bp.v);
            for (std::size_t j : at_v[bp.v])
              if (entry[j] == ~VertexId{0}) {
                entry[j] = bp.v;
                q.push(j);
              }
          }
        }
        for (std::size_t i = 0; i < pks.size(); ++i) {
          if (entry[i] == ~VertexId{0}) {
            std::string detail = "cluster disconnected in orient: node " + std::to_string(pid) +
                                 " rank " + std::to_string(nd->rank) + " rv " +
                                 std::to_string(root_v) + " children";
            for (const auto& pk : pks) {
              detail += " [" + std::to_string(pk.child) + ":";
              for (const auto& bp : pk.boundary) detail += " " + std::to_string(bp.v);
              detail += "]";
            }
            throw Error(ErrorCode::PreconditionViolated, detail);
          }
          outs[m].push_back({node_owner(pks[i].child), AssignMsg{pks[i].child, entry[i]}});
        }
      }
    auto in = exchange(*cluster_, std::move(outs));
    for (std::size_t m = 0; m < M; ++m)
      for (const auto& env : in[m]) {
        TopNode* nd = node_at(env.value.node);
        if (!nd) continue;
        if (nd->is_leaf())
          nd->root_vertex = env.value.v;
        else
          rho[m][env.value.node] = env.value.v;
      }
  }
}

// ---------------------------------------------------------------------------
// build: Boruvka-style hooking over the given forest edges
// ---------------------------------------------------------------------------

void TopForest::build(const std::vector<WeightedEdge>& forest_edges) {
  std::size_t M = cluster_->machines();
  mpc::Dist<WeightedEdge> remaining(*cluster_);
  {
    // initial placement of the input
    auto outs = make_outs<WeightedEdge>(*cluster_);
    for (std::size_t i = 0; i < forest_edges.size(); ++i)
      outs[0].push_back({mpc::owner_of(forest_edges[i].eid, M), forest_edges[i]});
    auto in = exchange(*cluster_, std::move(outs));
    for (std::size_t m = 0; m < M; ++m)
      for (const auto& env : in[m]) remaining.part(m).push_back(env.value);
  }
  mpc::KeyedDist<VertexId> comp(*cluster_);  // component label; absent = singleton self

  int phase = 0;
  while (remaining.total_size() > 0) {
    if (++phase > 96) throw Error(ErrorCode::PreconditionViolated, "build did not converge");
    std::uint64_t salt = mpc::splitmix64(cluster_->config().seed ^ (0x9e37ull * phase));

    // endpoint labels
    struct Tag {
      std::uint32_t machine;
      std::uint32_t slot;
      bool side;
    };
    std::vector<std::vector<std::pair<std::uint64_t, std::uint64_t>>> reqs(M);
    for (std::size_t m = 0; m < M; ++m)
      for (std::size_t i = 0; i < remaining.cpart(m).size(); ++i) {
        const auto& e = remaining.cpart(m)[i];
        reqs[m].push_back({e.u, (i << 1)});
        reqs[m].push_back({e.v, (i << 1) | 1});
      }
    struct LblAns {
      std::uint64_t tag;
      VertexId label;
      std::uint64_t vertex;
    };
    auto res = mpc::keyed_probe<VertexId, LblAns>(
        *cluster_, comp, reqs, [](std::uint64_t key, std::uint64_t tag, const VertexId* v) {
          return LblAns{tag, v ? *v : static_cast<VertexId>(key), key};
        });
    std::vector<std::vector<std::pair<VertexId, VertexId>>> lbl(M);
    for (std::size_t m = 0; m < M; ++m) lbl[m].resize(remaining.cpart(m).size(), {0, 0});
    for (std::size_t m = 0; m < M; ++m)
      for (const auto& a : res[m]) {
        if (a.tag & 1)
          lbl[m][a.tag >> 1].second = a.label;
        else
          lbl[m][a.tag >> 1].first = a.label;
      }

    // min outgoing candidate per component
    struct Cand {
      std::uint64_t comp;
      WeightedEdge edge;
      VertexId lu, lv;
    };
    mpc::Dist<Cand> cands(*cluster_);
    for (std::size_t m = 0; m < M; ++m)
      for (std::size_t i = 0; i < remaining.cpart(m).size(); ++i) {
        const auto& e = remaining.cpart(m)[i];
        auto [lu, lv] = lbl[m][i];
        if (lu == lv)
          throw Error(ErrorCode::NotAForest, "cycle among forest edges");
        cands.part(m).push_back({lu, e, lu, lv});
        cands.part(m).push_back({lv, e, lu, lv});
      }
    mpc::aggregate_by_key(
        *cluster_, cands, [](const Cand& c) { return mpc::SortKey{c.comp, 0}; },
        [](const Cand& a, const Cand& b) {
          if (b.edge < a.edge) return b;
          return a;
        });

    // heads hook into tails via their minimum outgoing edge
    auto coin = [&](VertexId c) { return mpc::splitmix64(salt ^ c) & 1ull; };
    mpc::Dist<WeightedEdge> selected(*cluster_);
    for (std::size_t m = 0; m < M; ++m)
      for (const auto& c : cands.cpart(m)) {
        VertexId self = static_cast<VertexId>(c.comp);
        VertexId other = c.lu == self ? c.lv : c.lu;
        if (coin(self) == 1 && coin(other) == 0) selected.part(m).push_back(c.edge);
      }

    // pull the selected edges to the controller in link-sized chunks
    while (selected.total_size() > 0) {
      std::vector<std::vector<WeightedEdge>> take(M);
      std::size_t budget = kLinkChunk;
      std::size_t share = std::max<std::size_t>(1, budget / M);
      for (std::size_t m = 0; m < M && budget > 0; ++m) {
        auto& p = selected.part(m);
        std::size_t grab = std::min({share, p.size(), budget});
        for (std::size_t i = 0; i < grab; ++i) {
          take[m].push_back(p.back());
          p.pop_back();
        }
        budget -= grab;
      }
      auto chunk = mpc::gather_to(*cluster_, 0, std::move(take));
      if (chunk.empty()) continue;
      std::sort(chunk.begin(), chunk.end(),
                [](const WeightedEdge& a, const WeightedEdge& b) { return a.eid < b.eid; });
      chunk.erase(std::unique(chunk.begin(), chunk.end(),
                              [](const WeightedEdge& a, const WeightedEdge& b) {
                                return a.eid == b.eid;
                              }),
                  chunk.end());
      link_chunk(chunk);
      rebalance();
    }

    // drop linked edges from the remaining pool
    {
      std::vector<std::vector<std::pair<std::uint64_t, std::uint64_t>>> reqs2(M);
      for (std::size_t m = 0; m < M; ++m)
        for (std::size_t i = 0; i < remaining.cpart(m).size(); ++i)
          reqs2[m].push_back({remaining.cpart(m)[i].eid, i});
      struct HaveAns {
        std::uint64_t tag;
        std::uint64_t present;
      };
      auto res2 = mpc::keyed_probe<std::uint64_t, HaveAns>(
          *cluster_, leaf_of_eid_, reqs2,
          [](std::uint64_t, std::uint64_t tag, const std::uint64_t* v) {
            return HaveAns{tag, v ? 1ull : 0ull};
          });
      for (std::size_t m = 0; m < M; ++m) {
        std::vector<bool> drop(remaining.cpart(m).size(), false);
        for (const auto& a : res2[m])
          if (a.present) drop[a.tag] = true;
        auto& p = remaining.part(m);
        std::size_t w = 0;
        for (std::size_t i = 0; i < p.size(); ++i)
          if (!drop[i]) p[w++] = p[i];
        p.resize(w);
      }
    }

    // refresh component labels from the grown trees
    component_labels(comp);
  }
  orient();
}

}  // namespace mpcdyn
