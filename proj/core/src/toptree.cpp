#include "toptree_internal.hpp"

#include <algorithm>
#include <cmath>
#include <queue>
#include <sstream>

namespace mpcdyn {

using mpc::Cluster;
using mpc::exchange;
using mpc::KeyedDist;
using mpc::make_outs;
using mpc::Outs;

// ---------------------------------------------------------------------------
// local decision helpers
// ---------------------------------------------------------------------------

namespace {

// items + junction vertices as a bipartite adjacency
struct ItemGraph {
  std::vector<const CarveItem*> items;
  std::unordered_map<VertexId, std::vector<int>> at_vertex;

  explicit ItemGraph(const std::vector<CarveItem>& in) {
    items.reserve(in.size());
    for (const auto& it : in) items.push_back(&it);
    for (int i = 0; i < static_cast<int>(items.size()); ++i)
      for (VertexId v : items[i]->shared) at_vertex[v].push_back(i);
  }
};

}  // namespace

std::vector<std::vector<std::uint64_t>> shared_vertex_components(
    const std::vector<CarveItem>& items) {
  ItemGraph g(items);
  std::vector<int> comp(items.size(), -1);
  std::vector<std::vector<std::uint64_t>> out;
  for (int s = 0; s < static_cast<int>(items.size()); ++s) {
    if (comp[s] != -1) continue;
    int c = static_cast<int>(out.size());
    out.emplace_back();
    std::queue<int> q;
    q.push(s);
    comp[s] = c;
    while (!q.empty()) {
      int i = q.front();
      q.pop();
      out[c].push_back(items[i].id);
      for (VertexId v : items[i].shared)
        for (int j : g.at_vertex.at(v))
          if (comp[j] == -1) {
            comp[j] = c;
            q.push(j);
          }
    }
  }
  return out;
}

// Bottom-up carve over the rooted item/junction bipartite tree. Junction
// elements bin their branch remainders greedily (every subset of branches at
// one junction stays connected through it); item elements absorb the
// remainders of the junctions below them. Pieces reach at least b except for
// a lone small input; the root leftover merges into an adjacent piece.
std::vector<std::vector<std::uint64_t>> carve_connected_groups(const std::vector<CarveItem>& items,
                                                               std::uint32_t b) {
  if (items.empty()) return {};
  ItemGraph g(items);
  std::size_t nitems = items.size();
  // elements: items [0, nitems), junction vertices after
  std::unordered_map<VertexId, int> jid;
  std::vector<VertexId> jvert;
  for (const auto& it : items)
    for (VertexId v : it.shared)
      if (!jid.count(v)) {
        jid.emplace(v, static_cast<int>(nitems + jvert.size()));
        jvert.push_back(v);
      }
  std::vector<std::vector<int>> adj(nitems + jvert.size());
  for (std::size_t i = 0; i < nitems; ++i)
    for (VertexId v : items[i].shared) {
      int j = jid.at(v);
      adj[i].push_back(j);
      adj[j].push_back(static_cast<int>(i));
    }
  for (auto& a : adj) {
    std::sort(a.begin(), a.end());
    a.erase(std::unique(a.begin(), a.end()), a.end());
  }

  int root = 0;
  for (std::size_t i = 1; i < nitems; ++i)
    if (items[i].id < items[root].id) root = static_cast<int>(i);

  std::vector<int> parent(adj.size(), -2), order;
  std::queue<int> q;
  parent[root] = -1;
  q.push(root);
  while (!q.empty()) {
    int e = q.front();
    q.pop();
    order.push_back(e);
    for (int nb : adj[e])
      if (parent[nb] == -2) {
        parent[nb] = e;
        q.push(nb);
      }
  }
  for (std::size_t i = 0; i < nitems; ++i)
    if (parent[i] == -2)
      throw Error(ErrorCode::PreconditionViolated, "carve input not connected");

  struct Piece {
    std::vector<std::uint64_t> ids;
    std::uint64_t size = 0;
  };
  std::vector<Piece> pending(adj.size());
  std::vector<std::vector<std::uint64_t>> groups;
  std::vector<int> emitted_parent;  // parent element per emitted group
  std::vector<std::vector<int>> kids(adj.size());
  for (std::size_t e = 0; e < adj.size(); ++e)
    if (parent[e] >= 0) kids[parent[e]].push_back(static_cast<int>(e));

  auto emit = [&](Piece&& p, int parent_elem) {
    groups.push_back(std::move(p.ids));
    emitted_parent.push_back(parent_elem);
  };

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    int e = *it;
    if (static_cast<std::size_t>(e) < nitems) {
      // item element: absorb junction remainders below, then itself
      Piece p;
      p.ids.push_back(items[e].id);
      p.size = items[e].size;
      for (int j : kids[e]) {
        p.ids.insert(p.ids.end(), pending[j].ids.begin(), pending[j].ids.end());
        p.size += pending[j].size;
        pending[j] = {};
      }
      if (p.size >= b && parent[e] != -1)
        emit(std::move(p), parent[e]);
      else
        pending[e] = std::move(p);
    } else {
      // junction element: bin child branches; any subset is connected here
      Piece bin;
      for (int ci : kids[e]) {
        if (pending[ci].ids.empty()) continue;
        bin.ids.insert(bin.ids.end(), pending[ci].ids.begin(), pending[ci].ids.end());
        bin.size += pending[ci].size;
        pending[ci] = {};
        if (bin.size >= b) {
          emit(std::move(bin), e);
          bin = {};
        }
      }
      pending[e] = std::move(bin);
    }
  }

  Piece leftover = std::move(pending[root]);
  if (!leftover.ids.empty()) {
    if (groups.empty() || leftover.size >= b) {
      groups.push_back(std::move(leftover.ids));
    } else {
      // merge into a piece emitted at an element adjacent to the leftover
      std::set<int> region;  // elements whose remainder ended in the leftover
      {
        std::set<std::uint64_t> lids(leftover.ids.begin(), leftover.ids.end());
        for (std::size_t i = 0; i < nitems; ++i)
          if (lids.count(items[i].id)) {
            region.insert(static_cast<int>(i));
            for (int j : adj[i]) region.insert(j);
          }
      }
      bool merged = false;
      for (std::size_t gi = groups.size(); gi-- > 0 && !merged;) {
        if (region.count(emitted_parent[gi])) {
          groups[gi].insert(groups[gi].end(), leftover.ids.begin(), leftover.ids.end());
          merged = true;
        }
      }
      if (!merged)  // defensive: keep it as its own (small) piece
        groups.push_back(std::move(leftover.ids));
    }
  }

  std::size_t covered = 0;
  for (const auto& grp : groups) covered += grp.size();
  if (covered != nitems)
    throw Error(ErrorCode::PreconditionViolated, "carve lost items");
  (void)g;
  return groups;
}

std::vector<CompressedEdge> compress_steiner(std::vector<CompressedEdge> edges,
                                             const std::set<VertexId>& keep) {
  if (edges.empty()) return edges;
  for (;;) {
    std::unordered_map<VertexId, std::vector<std::size_t>> deg;
    for (std::size_t i = 0; i < edges.size(); ++i) {
      deg[edges[i].x].push_back(i);
      deg[edges[i].y].push_back(i);
    }
    bool changed = false;
    std::vector<bool> dead(edges.size(), false);
    // drop non-kept leaves
    for (auto& [v, idx] : deg) {
      if (keep.count(v) || idx.size() != 1) continue;
      if (dead[idx[0]]) continue;
      dead[idx[0]] = true;
      changed = true;
    }
    if (changed) {
      std::vector<CompressedEdge> next;
      for (std::size_t i = 0; i < edges.size(); ++i)
        if (!dead[i]) next.push_back(edges[i]);
      edges = std::move(next);
      if (edges.empty()) return edges;
      continue;
    }
    // splice one degree-2 non-kept junction at a time (deterministic order)
    VertexId splice_v = 0;
    bool found = false;
    for (auto& [v, idx] : deg) {
      if (keep.count(v) || idx.size() != 2) continue;
      if (!found || v < splice_v) {
        splice_v = v;
        found = true;
      }
    }
    if (!found) return edges;
    auto& idx = deg[splice_v];
    CompressedEdge a = edges[idx[0]], bb = edges[idx[1]];
    CompressedEdge merged;
    merged.x = a.x == splice_v ? a.y : a.x;
    merged.y = bb.x == splice_v ? bb.y : bb.x;
    merged.max_edge = a.max_edge < bb.max_edge ? bb.max_edge : a.max_edge;
    std::vector<CompressedEdge> next;
    for (std::size_t i = 0; i < edges.size(); ++i)
      if (i != idx[0] && i != idx[1]) next.push_back(edges[i]);
    next.push_back(merged);
    edges = std::move(next);
  }
}

// ---------------------------------------------------------------------------
// host mirror: dump + invariant scan
// ---------------------------------------------------------------------------

std::string HostTopTree::dump_text() const {
  std::vector<std::uint64_t> ids;
  ids.reserve(nodes.size());
  for (const auto& [id, _] : nodes) ids.push_back(id);
  std::sort(ids.begin(), ids.end());
  std::ostringstream os;
  for (std::uint64_t id : ids) {
    const TopNode& nd = nodes.at(id);
    os << nd.id << " " << nd.rank << " ";
    if (nd.parent == kNoNode)
      os << "-";
    else
      os << nd.parent;
    os << " " << nd.root_vertex << " [";
    for (std::size_t i = 0; i < nd.children.size(); ++i)
      os << (i ? " " : "") << nd.children[i];
    os << "] [";
    for (std::size_t i = 0; i < nd.boundary.size(); ++i)
      os << (i ? " " : "") << nd.boundary[i].v;
    os << "]\n";
  }
  return os.str();
}

std::set<EdgeId> HostTopTree::cluster_edges(std::uint64_t node_id) const {
  std::set<EdgeId> out;
  std::vector<std::uint64_t> stack{node_id};
  while (!stack.empty()) {
    const TopNode& nd = nodes.at(stack.back());
    stack.pop_back();
    if (nd.is_leaf())
      out.insert(nd.edge.eid);
    else
      for (std::uint64_t c : nd.children) stack.push_back(c);
  }
  return out;
}

namespace {

void scan_fail(const std::string& what) {
  throw Error(ErrorCode::PreconditionViolated, "top tree invariant: " + what);
}

std::set<VertexId> edge_set_vertices(const std::set<EdgeId>& es) {
  std::set<VertexId> vs;
  for (EdgeId e : es) {
    vs.insert(eid_lo(e));
    vs.insert(eid_hi(e));
  }
  return vs;
}

bool edges_connected(const std::set<EdgeId>& es) {
  if (es.empty()) return true;
  std::unordered_map<VertexId, std::vector<EdgeId>> adj;
  for (EdgeId e : es) {
    adj[eid_lo(e)].push_back(e);
    adj[eid_hi(e)].push_back(e);
  }
  std::set<EdgeId> seen;
  std::vector<VertexId> stack{eid_lo(*es.begin())};
  std::set<VertexId> vseen{stack[0]};
  while (!stack.empty()) {
    VertexId v = stack.back();
    stack.pop_back();
    for (EdgeId e : adj[v]) {
      seen.insert(e);
      for (VertexId w : {eid_lo(e), eid_hi(e)})
        if (!vseen.count(w)) {
          vseen.insert(w);
          stack.push_back(w);
        }
    }
  }
  return seen.size() == es.size();
}

}  // namespace

void HostTopTree::check_invariants() const {
  std::uint32_t cb = kArityC * b;
  std::int32_t depth_cap = static_cast<std::int32_t>(std::ceil(2.0 / alpha)) + 2;

  std::unordered_map<std::uint64_t, std::set<EdgeId>> cluster;
  for (const auto& [id, nd] : nodes) cluster[id] = cluster_edges(id);

  std::unordered_map<VertexId, std::uint32_t> true_deg;
  for (const auto& [id, nd] : nodes)
    if (nd.is_leaf()) {
      true_deg[nd.edge.u]++;
      true_deg[nd.edge.v]++;
    }
  for (const auto& [v, d] : true_deg) {
    auto it = degrees.find(v);
    if (it == degrees.end() || it->second != d) scan_fail("stored degree mismatch");
  }

  for (const auto& [id, nd] : nodes) {
    if (nd.parent != kNoNode) {
      auto pit = nodes.find(nd.parent);
      if (pit == nodes.end()) scan_fail("dangling parent pointer");
      const TopNode& p = pit->second;
      if (p.rank != nd.rank + 1) scan_fail("rank not parent-1 (unequal leaf depth)");
      if (std::find(p.children.begin(), p.children.end(), id) == p.children.end())
        scan_fail("parent does not list child");
    }
    if (nd.rank > depth_cap) scan_fail("depth exceeds ceil(2/alpha)+2");
    if (nd.is_leaf()) {
      if (!nd.children.empty()) scan_fail("leaf with children");
    } else {
      if (nd.children.empty()) scan_fail("internal node without children");
      for (std::uint64_t c : nd.children) {
        auto cit = nodes.find(c);
        if (cit == nodes.end()) scan_fail("dangling child pointer");
        if (cit->second.parent != id) scan_fail("child does not point at parent");
      }
      std::uint32_t arity = static_cast<std::uint32_t>(nd.children.size());
      if (arity > cb) scan_fail("overloaded node (arity > c*b)");
      if (nd.parent != kNoNode && arity < b) scan_fail("underloaded node (arity < b)");
    }

    const auto& es = cluster.at(id);
    if (!edges_connected(es)) scan_fail("cluster not connected");
    auto vs = edge_set_vertices(es);
    if (*vs.begin() != nd.cluster_min) scan_fail("cluster_min mismatch");

    // boundary pairs: exact incident-edge counts; internal nodes list exactly
    // the shared vertices, leaves always list both endpoints
    std::unordered_map<VertexId, std::uint32_t> cnt;
    for (EdgeId e : es) {
      cnt[eid_lo(e)]++;
      cnt[eid_hi(e)]++;
    }
    for (const auto& bp : nd.boundary) {
      auto it = cnt.find(bp.v);
      if (it == cnt.end() || it->second != bp.cnt) scan_fail("boundary cnt wrong");
    }
    if (nd.is_leaf()) {
      if (nd.boundary.size() != 2) scan_fail("leaf must list both endpoints");
    } else {
      for (const auto& [v, c] : cnt) {
        bool is_boundary = c < true_deg.at(v);
        bool listed = nd.find_boundary(v) != nullptr;
        if (is_boundary != listed) scan_fail("boundary membership wrong");
      }
    }
    if (!vs.count(nd.root_vertex)) scan_fail("root_vertex outside cluster");
  }

  for (const auto& [id, nd] : nodes) {
    if (nd.is_leaf()) continue;
    std::set<EdgeId> uni;
    std::size_t total = 0;
    std::set<VertexId> child_bnd;
    for (std::uint64_t c : nd.children) {
      const auto& ces = cluster.at(c);
      total += ces.size();
      uni.insert(ces.begin(), ces.end());
      const TopNode& cn = nodes.at(c);
      for (const auto& bp : cn.boundary) {
        if (cn.is_leaf()) {
          if (bp.cnt < true_deg.at(bp.v)) child_bnd.insert(bp.v);
        } else {
          child_bnd.insert(bp.v);
        }
      }
    }
    if (uni != cluster.at(id) || total != uni.size())
      scan_fail("children do not partition parent cluster");
    if (child_bnd.size() > cb) scan_fail("child boundary vertices exceed c*b");
    const auto& ch = nd.children;
    for (std::size_t i = 0; i < ch.size(); ++i)
      for (std::size_t j = i + 1; j < ch.size(); ++j) {
        auto vi = edge_set_vertices(cluster.at(ch[i]));
        auto vj = edge_set_vertices(cluster.at(ch[j]));
        std::vector<VertexId> inter;
        std::set_intersection(vi.begin(), vi.end(), vj.begin(), vj.end(),
                              std::back_inserter(inter));
        if (inter.size() > 1) scan_fail("siblings share more than one vertex");
      }
  }

  // equal leaf depth per tree
  for (const auto& [id, nd] : nodes) {
    if (!nd.is_leaf()) continue;
    std::uint64_t cur = id;
    std::int32_t steps = 0;
    while (nodes.at(cur).parent != kNoNode) {
      cur = nodes.at(cur).parent;
      ++steps;
    }
    if (steps != nodes.at(cur).rank) scan_fail("leaf depth differs from root rank");
  }

  // reference-set consistency: the anchor chain is the per-vertex rank map
  for (const auto& [v, leaf] : anchors) {
    auto it = nodes.find(leaf);
    if (it == nodes.end()) scan_fail("anchor points at dead node");
    if (!it->second.is_leaf()) scan_fail("anchor not a leaf");
    if (it->second.edge.u != v && it->second.edge.v != v) scan_fail("anchor leaf misses vertex");
    std::uint64_t cur = leaf;
    std::int32_t len = 0;
    for (;;) {
      const auto& vs = edge_set_vertices(cluster.at(cur));
      if (!vs.count(v)) scan_fail("reference chain node misses vertex");
      if (nodes.at(cur).parent == kNoNode) break;
      cur = nodes.at(cur).parent;
      ++len;
    }
    if (len > depth_cap) scan_fail("reference set longer than depth cap");
  }
}

// ---------------------------------------------------------------------------
// TopForest basics
// ---------------------------------------------------------------------------

TopForest::~TopForest() = default;

TopForest::TopForest(Cluster& c, std::size_t n, double alpha)
    : cluster_(&c),
      n_(n),
      alpha_(alpha),
      nodes_(std::make_unique<NodeStore>(c)),
      incident_(c),
      leaf_of_eid_(c),
      next_node_(c.machines(), 0) {
  double broot = std::pow(static_cast<double>(std::max<std::size_t>(n, 2)), alpha / 2.0);
  b_ = std::max<std::uint32_t>(2, static_cast<std::uint32_t>(std::ceil(broot)));
  if (static_cast<std::uint64_t>(b_) * b_ > c.words_per_machine())
    throw Error(ErrorCode::CapacityExceeded, "S < b^2: machine cannot host a node family");
}

std::uint64_t TopForest::alloc_node_id(std::size_t machine) {
  return (next_node_[machine]++) * cluster_->machines() + machine;
}

std::uint32_t TopForest::node_owner(std::uint64_t id) const { return nodes_->owner(id); }
TopNode* TopForest::node_at(std::uint64_t id) { return nodes_->find(id); }
const TopNode* TopForest::node_at(std::uint64_t id) const { return nodes_->find(id); }
void TopForest::put_node(TopNode n) { nodes_->put(std::move(n)); }
void TopForest::erase_node(std::uint64_t id) { nodes_->erase(id); }
void TopForest::node_words_changed(std::uint64_t id) { nodes_->touch(id); }

std::vector<std::vector<std::uint64_t>> TopForest::ids_at_rank(std::int32_t rank) const {
  return nodes_->scan_ids([rank](const TopNode& nd) { return nd.rank == rank; });
}

std::vector<std::vector<std::uint64_t>> TopForest::root_ids() const {
  return nodes_->scan_ids([](const TopNode& nd) { return nd.parent == kNoNode; });
}

bool TopForest::has_edge(EdgeId eid) const { return leaf_of_eid_.find(eid) != nullptr; }

std::int32_t TopForest::recompute_max_rank() {
  std::int32_t mx = 0;
  nodes_->for_each_host([&](const TopNode& nd) { mx = std::max(mx, nd.rank); });
  max_rank_ = mx;
  return mx;
}

HostTopTree TopForest::host_dump() const {
  HostTopTree h;
  h.n = n_;
  h.alpha = alpha_;
  h.b = b_;
  nodes_->for_each_host([&](const TopNode& nd) { h.nodes.emplace(nd.id, nd); });
  incident_.for_each_host([&](std::uint64_t v, const std::vector<EdgeId>& eids) {
    if (eids.empty()) return;
    const std::uint64_t* leaf = leaf_of_eid_.find(eids.front());
    if (leaf) h.anchors.emplace(static_cast<VertexId>(v), *leaf);
    h.degrees.emplace(static_cast<VertexId>(v), static_cast<std::uint32_t>(eids.size()));
  });
  return h;
}

// batched walk: advance one parent step per round; steps < 0 walks to the root
std::vector<TopForest::WalkResult> TopForest::walk_up(
    const std::vector<std::pair<std::uint64_t, std::uint64_t>>& from, std::int32_t steps) {
  struct Walker {
    std::uint64_t qid;
    std::uint64_t node;
    std::int32_t left;
  };
  std::size_t M = cluster_->machines();
  std::vector<std::vector<Walker>> at(M);
  for (const auto& [qid, node] : from) at[node_owner(node)].push_back({qid, node, steps});
  std::vector<WalkResult> done;
  bool active = !from.empty();
  while (active) {
    active = false;
    auto outs = make_outs<Walker>(*cluster_);
    for (std::size_t m = 0; m < M; ++m) {
      for (const Walker& w : at[m]) {
        const TopNode* nd = nodes_->find(w.node);
        if (!nd)
          throw Error(ErrorCode::PreconditionViolated,
                      "walk through dead node " + std::to_string(w.node) + " (query " +
                          std::to_string(w.qid) + ")");
        if (w.left == 0 || nd->parent == kNoNode) {
          done.push_back({w.qid, w.node, nd->rank, nd->cluster_min});
        } else {
          outs[m].push_back({node_owner(nd->parent), Walker{w.qid, nd->parent, w.left - 1}});
          active = true;
        }
      }
      at[m].clear();
    }
    if (!active) break;
    auto in = exchange(*cluster_, std::move(outs));
    for (std::size_t m = 0; m < M; ++m)
      for (auto& env : in[m]) at[m].push_back(env.value);
  }
  return done;
}

}  // namespace mpcdyn
