#include "mpcdyn/msf.hpp"

#include <algorithm>
#include <queue>

namespace mpcdyn {

using mpc::Cluster;
using mpc::exchange;
using mpc::KeyedDist;
using mpc::make_outs;
using mpc::SortKey;

namespace {

constexpr std::size_t kMsfChunk = 512;
constexpr std::size_t kReplayFactor = 16;  // c_replay

std::uint64_t piece_of(std::uint64_t component_key, EdgeId nearest_mark) {
  // pieces of F minus marks: keyed by the nearest marked edge above, or the
  // component root for the top piece
  return nearest_mark != kNoEdge ? nearest_mark : (component_key | (1ull << 62));
}

}  // namespace

MsfDynamic::MsfDynamic(Cluster& c, const GraphSnapshot& initial, bool unit_weights)
    : cluster_(&c),
      n_(initial.n),
      unit_weights_(unit_weights),
      trees_(c, initial.n, c.config().alpha),
      edges_(c) {
  preprocess(initial);
}

void MsfDynamic::preprocess(const GraphSnapshot& initial) {
  std::size_t M = cluster_->machines();
  // initial distribution of the edge set
  {
    auto outs = make_outs<WeightedEdge>(*cluster_);
    for (const auto& [eid, e0] : initial.edges) {
      WeightedEdge e = e0;
      if (unit_weights_) e.weight = 0.0;
      outs[0].push_back({edges_.owner(eid), e});
    }
    auto in = exchange(*cluster_, std::move(outs));
    for (std::size_t m = 0; m < M; ++m)
      for (const auto& env : in[m]) edges_.put(env.value.eid, {env.value, false});
  }

  // Boruvka: every component hooks through its minimum outgoing edge; heads
  // merge into tails; the selected edges are exactly the forest edges
  mpc::KeyedDist<VertexId> comp(*cluster_);
  mpc::Dist<WeightedEdge> remaining(*cluster_);
  for (std::size_t m = 0; m < M; ++m)
    for (const auto& [eid, se] : edges_.local(m)) remaining.part(m).push_back(se.edge);

  int phase = 0;
  while (remaining.total_size() > 0) {
    if (++phase > 96)
      throw Error(ErrorCode::PreconditionViolated, "forest construction did not converge");
    std::uint64_t salt = mpc::splitmix64(cluster_->config().seed ^ (0xb0a7ull * phase));

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
    };
    auto res = mpc::keyed_probe<VertexId, LblAns>(
        *cluster_, comp, reqs, [](std::uint64_t key, std::uint64_t tag, const VertexId* v) {
          return LblAns{tag, v ? *v : static_cast<VertexId>(key)};
        });
    std::vector<std::vector<std::pair<VertexId, VertexId>>> lbl(M);
    for (std::size_t m = 0; m < M; ++m) lbl[m].resize(remaining.cpart(m).size());
    for (std::size_t m = 0; m < M; ++m)
      for (const auto& a : res[m]) {
        if (a.tag & 1)
          lbl[m][a.tag >> 1].second = a.label;
        else
          lbl[m][a.tag >> 1].first = a.label;
      }

    // drop intra-component edges; aggregate the minimum outgoing per component
    struct Cand {
      std::uint64_t comp;
      WeightedEdge edge;
      VertexId lu, lv;
    };
    mpc::Dist<Cand> cands(*cluster_);
    for (std::size_t m = 0; m < M; ++m) {
      auto& p = remaining.part(m);
      std::size_t w = 0;
      for (std::size_t i = 0; i < p.size(); ++i) {
        auto [lu, lv] = lbl[m][i];
        if (lu == lv) continue;  // settled: stays a non-forest edge
        cands.part(m).push_back({lu, p[i], lu, lv});
        cands.part(m).push_back({lv, p[i], lu, lv});
        p[w++] = p[i];
      }
      p.resize(w);
    }
    if (remaining.total_size() == 0) break;
    mpc::aggregate_by_key(
        *cluster_, cands, [](const Cand& c2) { return SortKey{c2.comp, 0}; },
        [](const Cand& a, const Cand& b) { return b.edge < a.edge ? b : a; });

    auto coin = [&](VertexId c2) { return mpc::splitmix64(salt ^ c2) & 1ull; };
    mpc::Dist<WeightedEdge> selected(*cluster_);
    for (std::size_t m = 0; m < M; ++m)
      for (const auto& c2 : cands.cpart(m)) {
        VertexId self = static_cast<VertexId>(c2.comp);
        VertexId other = c2.lu == self ? c2.lv : c2.lu;
        if (coin(self) == 1 && coin(other) == 0) selected.part(m).push_back(c2.edge);
      }

    while (selected.total_size() > 0) {
      std::vector<std::vector<WeightedEdge>> take(M);
      std::size_t budget = kMsfChunk;
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
      trees_.batch_link(chunk);
      // mark as forest edges + drop from the remaining pool
      auto outs = make_outs<EdgeId>(*cluster_);
      for (const auto& e : chunk) outs[0].push_back({edges_.owner(e.eid), e.eid});
      auto in = exchange(*cluster_, std::move(outs));
      for (std::size_t m = 0; m < M; ++m)
        for (const auto& env : in[m]) {
          auto* se = edges_.find(env.value);
          if (se) se->in_forest = true;
        }
      std::set<EdgeId> linked;
      for (const auto& e : chunk) linked.insert(e.eid);
      for (std::size_t m = 0; m < M; ++m) {
        auto& p = remaining.part(m);
        std::size_t w = 0;
        for (std::size_t i = 0; i < p.size(); ++i)
          if (!linked.count(p[i].eid)) p[w++] = p[i];
        p.resize(w);
      }
    }
    trees_.component_labels(comp);
  }
}

void MsfDynamic::piece_labels(const std::vector<EdgeId>& marks,
                              mpc::KeyedDist<std::uint64_t>& out) {
  std::size_t M = cluster_->machines();
  mpc::KeyedDist<VertexId> comp(*cluster_);
  trees_.component_labels(comp);
  std::set<EdgeId> mark_set(marks.begin(), marks.end());
  RootPathAggregate agg;
  agg.identity = {kNoEdge, 0};
  agg.edge = [mark_set](const WeightedEdge& e) {
    return mark_set.count(e.eid) ? AggValue{e.eid, 0} : AggValue{kNoEdge, 0};
  };
  agg.combine = [](AggValue top, AggValue bottom) { return bottom.a != kNoEdge ? bottom : top; };
  mpc::KeyedDist<AggValue> nearest(*cluster_);
  trees_.root_path_aggregate(agg, nearest);
  // local zip: both tables hash by vertex, so the owner sees both sides
  out.clear();
  for (std::size_t m = 0; m < M; ++m)
    for (const auto& [v, label] : comp.local(m)) {
      const AggValue* nm = nearest.find(v);
      EdgeId mark = nm ? nm->a : kNoEdge;
      out.put(v, piece_of(label, mark));
    }
}

std::vector<WeightedEdge> MsfDynamic::compute_replacement_candidates(
    const std::vector<EdgeId>& deleted) {
  std::size_t M = cluster_->machines();
  stats_.deletions = deleted.size();

  // forest deletions via presence probes
  std::vector<EdgeId> forest_del;
  std::set<EdgeId> deleted_set(deleted.begin(), deleted.end());
  {
    std::vector<std::vector<std::pair<std::uint64_t, std::uint64_t>>> reqs(M);
    for (std::size_t i = 0; i < deleted.size(); ++i) reqs[i % M].push_back({deleted[i], i});
    struct Ans {
      std::uint64_t tag;
      std::uint32_t present, in_forest;
    };
    auto res = mpc::keyed_probe<StoredEdge, Ans>(
        *cluster_, edges_, reqs, [](std::uint64_t, std::uint64_t tag, const StoredEdge* se) {
          return Ans{tag, se ? 1u : 0u, se && se->in_forest ? 1u : 0u};
        });
    std::vector<bool> inf(deleted.size(), false), present(deleted.size(), false);
    for (std::size_t m = 0; m < M; ++m)
      for (const auto& a : res[m]) {
        present[a.tag] = a.present;
        inf[a.tag] = a.in_forest;
      }
    for (std::size_t i = 0; i < deleted.size(); ++i) {
      if (!present[i])
        throw Error(ErrorCode::EdgeAbsent, "replacement scan: edge not in graph",
                    static_cast<std::int64_t>(i));
      if (inf[i]) forest_del.push_back(deleted[i]);
    }
  }
  stats_.forest_deletions = forest_del.size();
  if (forest_del.empty()) return {};  // forest untouched: nothing to reconnect

  // piece labels of F - D and the touched piece set
  mpc::KeyedDist<std::uint64_t> pieces(*cluster_);
  piece_labels(forest_del, pieces);
  std::set<std::uint64_t> touched;
  {
    std::vector<VertexId> eps;
    for (EdgeId e : forest_del) {
      eps.push_back(eid_lo(e));
      eps.push_back(eid_hi(e));
    }
    std::vector<std::vector<std::pair<std::uint64_t, std::uint64_t>>> reqs(M);
    for (std::size_t i = 0; i < eps.size(); ++i) reqs[i % M].push_back({eps[i], i});
    struct Ans {
      std::uint64_t piece;
    };
    auto res = mpc::keyed_probe<std::uint64_t, Ans>(
        *cluster_, pieces, reqs, [](std::uint64_t, std::uint64_t, const std::uint64_t* p) {
          return Ans{p ? *p : kNoEdge};
        });
    for (std::size_t m = 0; m < M; ++m)
      for (const auto& a : res[m]) touched.insert(a.piece);
    // the root piece of every tree that lost an edge is also touched: the
    // nearest-mark key of a forest deletion's upper side covers it, and the
    // deleted edge's own piece key covers the lower side; both endpoints were
    // probed, so the set is complete.
  }

  // candidate crossing edges between touched pieces (G - D, non-forest)
  struct PairRec {
    std::uint64_t pu, pv;
    WeightedEdge edge;
  };
  mpc::Dist<PairRec> cand(*cluster_);
  {
    // endpoint piece lookups for the whole edge set
    std::vector<std::vector<std::pair<std::uint64_t, std::uint64_t>>> reqs(M);
    std::vector<std::vector<const StoredEdge*>> local(M);
    for (std::size_t m = 0; m < M; ++m) {
      std::vector<std::pair<EdgeId, const StoredEdge*>> sorted;
      for (const auto& [eid, se] : edges_.local(m))
        if (!se.in_forest && !deleted_set.count(eid)) sorted.push_back({eid, &se});
      std::sort(sorted.begin(), sorted.end());
      for (auto& [eid, se] : sorted) {
        std::size_t i = local[m].size();
        local[m].push_back(se);
        reqs[m].push_back({se->edge.u, (i << 1)});
        reqs[m].push_back({se->edge.v, (i << 1) | 1});
      }
    }
    struct Ans {
      std::uint64_t tag, piece;
    };
    auto res = mpc::keyed_probe<std::uint64_t, Ans>(
        *cluster_, pieces, reqs, [](std::uint64_t, std::uint64_t tag, const std::uint64_t* p) {
          return Ans{tag, p ? *p : kNoEdge};
        });
    std::vector<std::vector<std::pair<std::uint64_t, std::uint64_t>>> pp(M);
    for (std::size_t m = 0; m < M; ++m) pp[m].resize(local[m].size(), {kNoEdge, kNoEdge});
    for (std::size_t m = 0; m < M; ++m)
      for (const auto& a : res[m]) {
        if (a.tag & 1)
          pp[m][a.tag >> 1].second = a.piece;
        else
          pp[m][a.tag >> 1].first = a.piece;
      }
    for (std::size_t m = 0; m < M; ++m)
      for (std::size_t i = 0; i < local[m].size(); ++i) {
        auto [pu, pv] = pp[m][i];
        if (pu == pv) continue;
        if (!touched.count(pu) || !touched.count(pv)) continue;
        if (pu > pv) std::swap(pu, pv);
        cand.part(m).push_back({pu, pv, local[m][i]->edge});
      }
  }

  // minimum per piece pair, then the contracted MSF on one machine
  mpc::aggregate_by_key(
      *cluster_, cand, [](const PairRec& r) { return SortKey{r.pu, r.pv}; },
      [](const PairRec& a, const PairRec& b) { return b.edge < a.edge ? b : a; });
  std::vector<std::vector<PairRec>> per(M);
  for (std::size_t m = 0; m < M; ++m) per[m] = std::move(cand.part(m));
  for (std::size_t m = 0; m < M; ++m) cand.part(m).clear();
  auto pairs = mpc::gather_to(*cluster_, 0, std::move(per));
  mpc::ScratchGuard guard(*cluster_, 0);
  guard.set(pairs.size() * 6);
  std::sort(pairs.begin(), pairs.end(),
            [](const PairRec& a, const PairRec& b) { return a.edge < b.edge; });
  std::unordered_map<std::uint64_t, std::uint64_t> uf;
  std::function<std::uint64_t(std::uint64_t)> find = [&](std::uint64_t x) {
    if (!uf.count(x)) uf[x] = x;
    while (uf[x] != x) {
      uf[x] = uf[uf[x]];
      x = uf[x];
    }
    return x;
  };
  std::vector<WeightedEdge> replacement;
  for (const auto& r : pairs) {
    std::uint64_t a = find(r.pu), b = find(r.pv);
    if (a == b) continue;
    uf[a] = b;
    replacement.push_back(r.edge);
  }
  std::sort(replacement.begin(), replacement.end(),
            [](const WeightedEdge& a, const WeightedEdge& b) { return a.eid < b.eid; });
  stats_.replacements = replacement.size();
  if (replacement.size() > forest_del.size())
    throw Error(ErrorCode::PreconditionViolated, "|R| exceeds |D|");
  return replacement;
}

MsfUpdateScript MsfDynamic::process_batch(const Batch& batch) {
  if (batch.k() > cluster_->words_per_machine())
    throw Error(ErrorCode::BatchTooLarge, "batch exceeds S updates");
  MsfUpdateScript script;
  stats_ = {};
  for (std::size_t off = 0; off < batch.ops.size(); off += kMsfChunk) {
    std::vector<UpdateOp> chunk(
        batch.ops.begin() + off,
        batch.ops.begin() + std::min(batch.ops.size(), off + kMsfChunk));
    MsfUpdateScript part = process_chunk(chunk);
    std::size_t base = script.ops.size();
    for (auto& op : part.ops) script.ops.push_back(op);
    for (std::size_t y : part.prefix) script.prefix.push_back(base + y);
  }
  return script;
}

MsfUpdateScript MsfDynamic::process_chunk(const std::vector<UpdateOp>& ops) {
  std::size_t M = cluster_->machines();
  MsfUpdateScript script;
  if (ops.empty()) return script;

  // per-op validation against the running prefix
  {
    std::vector<std::vector<std::pair<std::uint64_t, std::uint64_t>>> reqs(M);
    for (std::size_t i = 0; i < ops.size(); ++i) reqs[i % M].push_back({ops[i].edge.eid, i});
    struct Ans {
      std::uint64_t tag;
      std::uint32_t present;
    };
    auto res = mpc::keyed_probe<StoredEdge, Ans>(
        *cluster_, edges_, reqs, [](std::uint64_t, std::uint64_t tag, const StoredEdge* se) {
          return Ans{tag, se ? 1u : 0u};
        });
    std::vector<bool> present(ops.size(), false);
    for (std::size_t m = 0; m < M; ++m)
      for (const auto& a : res[m]) present[a.tag] = a.present;
    std::unordered_map<EdgeId, bool> state;
    for (std::size_t i = 0; i < ops.size(); ++i) {
      if (ops[i].edge.u >= n_ || ops[i].edge.v >= n_)
        throw Error(ErrorCode::InvalidOp, "vertex out of range", static_cast<std::int64_t>(i));
      auto it = state.find(ops[i].edge.eid);
      bool has = it != state.end() ? it->second : present[i];
      if (ops[i].kind == OpKind::Insert && has)
        throw Error(ErrorCode::InvalidOp, "insert of present edge",
                    static_cast<std::int64_t>(i));
      if (ops[i].kind == OpKind::Delete && !has)
        throw Error(ErrorCode::InvalidOp, "delete of absent edge", static_cast<std::int64_t>(i));
      state[ops[i].edge.eid] = ops[i].kind == OpKind::Insert;
    }
  }

  std::vector<WeightedEdge> inserts;
  for (const auto& op : ops)
    if (op.kind == OpKind::Insert) {
      WeightedEdge e = op.edge;
      if (unit_weights_) e.weight = 0.0;
      inserts.push_back(e);
    }

  // deletions that target pre-batch edges drive the replacement machinery;
  // deletions of same-chunk inserts are resolved inside the replay alone
  std::vector<EdgeId> pre_deletes;
  {
    std::set<EdgeId> inserted_now;
    for (std::size_t i = 0; i < ops.size(); ++i) {
      if (ops[i].kind == OpKind::Insert) inserted_now.insert(ops[i].edge.eid);
      if (ops[i].kind == OpKind::Delete && !inserted_now.count(ops[i].edge.eid))
        pre_deletes.push_back(ops[i].edge.eid);
    }
  }

  auto replacement = compute_replacement_candidates(pre_deletes);

  // forest deletions and stored weights of every pre-batch delete target
  std::vector<WeightedEdge> del_edges(pre_deletes.size());
  std::vector<bool> del_forest(pre_deletes.size(), false);
  {
    std::vector<std::vector<std::pair<std::uint64_t, std::uint64_t>>> reqs(M);
    for (std::size_t i = 0; i < pre_deletes.size(); ++i)
      reqs[i % M].push_back({pre_deletes[i], i});
    struct Ans {
      std::uint64_t tag;
      WeightedEdge edge;
      std::uint32_t in_forest;
    };
    auto res = mpc::keyed_probe<StoredEdge, Ans>(
        *cluster_, edges_, reqs, [](std::uint64_t, std::uint64_t tag, const StoredEdge* se) {
          return Ans{tag, se ? se->edge : WeightedEdge{}, se && se->in_forest ? 1u : 0u};
        });
    for (std::size_t m = 0; m < M; ++m)
      for (const auto& a : res[m]) {
        del_edges[a.tag] = a.edge;
        del_forest[a.tag] = a.in_forest;
      }
  }
  std::vector<EdgeId> forest_del;
  for (std::size_t i = 0; i < pre_deletes.size(); ++i)
    if (del_forest[i]) forest_del.push_back(pre_deletes[i]);

  // separator targets: endpoints of D, R, I
  std::vector<VertexId> targets;
  for (const auto& e : del_edges) {
    targets.push_back(e.u);
    targets.push_back(e.v);
  }
  for (const auto& e : replacement) {
    targets.push_back(e.u);
    targets.push_back(e.v);
  }
  for (const auto& e : inserts) {
    targets.push_back(e.u);
    targets.push_back(e.v);
  }
  std::sort(targets.begin(), targets.end());
  targets.erase(std::unique(targets.begin(), targets.end()), targets.end());

  auto sep = trees_.separator_set(targets);
  stats_.separator_size = sep.separator_edges.size();
  std::size_t k = ops.size();
  if (!sep.separator_edges.empty() && sep.separator_edges.size() > 4 * k)
    throw Error(ErrorCode::PreconditionViolated, "|S| exceeds 4k-1");

  // pieces of F' = F - (S u D): everything incident to the pool is relevant
  std::vector<EdgeId> marks = forest_del;
  for (const auto& e : sep.separator_edges) marks.push_back(e.eid);
  std::sort(marks.begin(), marks.end());
  marks.erase(std::unique(marks.begin(), marks.end()), marks.end());
  mpc::KeyedDist<std::uint64_t> pieces(*cluster_);
  piece_labels(marks, pieces);

  // pool edges with endpoint pieces
  struct PoolEdge {
    WeightedEdge edge;
    std::uint64_t pu, pv;
    std::uint32_t kind;  // 0 = forest connector (S/D_F), 1 = candidate (R/D_N)
  };
  std::vector<PoolEdge> pool;
  {
    std::vector<std::pair<WeightedEdge, std::uint32_t>> want;
    std::set<EdgeId> seen;
    for (std::size_t i = 0; i < pre_deletes.size(); ++i)
      if (del_forest[i] && seen.insert(del_edges[i].eid).second)
        want.push_back({del_edges[i], 0});
    for (const auto& e : sep.separator_edges)
      if (seen.insert(e.eid).second) want.push_back({e, 0});
    for (std::size_t i = 0; i < pre_deletes.size(); ++i)
      if (!del_forest[i] && seen.insert(del_edges[i].eid).second)
        want.push_back({del_edges[i], 1});
    for (const auto& e : replacement)
      if (seen.insert(e.eid).second) want.push_back({e, 1});

    std::vector<std::vector<std::pair<std::uint64_t, std::uint64_t>>> reqs(M);
    for (std::size_t i = 0; i < want.size(); ++i) {
      reqs[i % M].push_back({want[i].first.u, (i << 1)});
      reqs[i % M].push_back({want[i].first.v, (i << 1) | 1});
    }
    struct Ans {
      std::uint64_t tag, piece;
    };
    auto res = mpc::keyed_probe<std::uint64_t, Ans>(
        *cluster_, pieces, reqs, [](std::uint64_t, std::uint64_t tag, const std::uint64_t* p) {
          return Ans{tag, p ? *p : kNoEdge};
        });
    std::vector<std::pair<std::uint64_t, std::uint64_t>> pp(want.size(), {kNoEdge, kNoEdge});
    for (std::size_t m = 0; m < M; ++m)
      for (const auto& a : res[m]) {
        if (a.tag & 1)
          pp[a.tag >> 1].second = a.piece;
        else
          pp[a.tag >> 1].first = a.piece;
      }
    for (std::size_t i = 0; i < want.size(); ++i)
      pool.push_back({want[i].first, pp[i].first, pp[i].second, want[i].second});
  }
  // insert endpoints: pieces needed to wire the new edges into the instance
  std::unordered_map<VertexId, std::uint64_t> insert_piece;
  {
    std::vector<VertexId> vs;
    for (const auto& e : inserts) {
      vs.push_back(e.u);
      vs.push_back(e.v);
    }
    std::sort(vs.begin(), vs.end());
    vs.erase(std::unique(vs.begin(), vs.end()), vs.end());
    std::vector<std::vector<std::pair<std::uint64_t, std::uint64_t>>> reqs(M);
    for (std::size_t i = 0; i < vs.size(); ++i) reqs[i % M].push_back({vs[i], i});
    struct Ans {
      std::uint64_t tag, piece;
    };
    auto res = mpc::keyed_probe<std::uint64_t, Ans>(
        *cluster_, pieces, reqs, [](std::uint64_t, std::uint64_t tag, const std::uint64_t* p) {
          return Ans{tag, p ? *p : kNoEdge};
        });
    std::vector<std::uint64_t> got(vs.size(), kNoEdge);
    for (std::size_t m = 0; m < M; ++m)
      for (const auto& a : res[m]) got[a.tag] = a.piece;
    for (std::size_t i = 0; i < vs.size(); ++i)
      insert_piece[vs[i]] = got[i] != kNoEdge ? got[i] : (0x3ull << 62 | vs[i]);
  }

  // --- local replay on machine 0 -------------------------------------------
  mpc::ScratchGuard replay_guard(*cluster_, 0);
  replay_guard.set(pool.size() * 8 + ops.size() * 4);

  // piece universe
  std::set<std::uint64_t> piece_set;
  for (const auto& pe : pool) {
    piece_set.insert(pe.pu);
    piece_set.insert(pe.pv);
  }
  for (const auto& [v, p] : insert_piece) piece_set.insert(p);
  stats_.replay_pieces = piece_set.size();
  stats_.replay_edges = pool.size() + inserts.size();
  if (piece_set.size() > kReplayFactor * std::max<std::size_t>(k, 1))
    throw Error(ErrorCode::PreconditionViolated, "replay instance too large");

  struct ReplayEdge {
    WeightedEdge edge;
    std::uint64_t pu, pv;
    bool in_forest;
    bool alive;
  };
  std::vector<ReplayEdge> inst;
  std::unordered_map<EdgeId, std::size_t> by_eid;
  for (const auto& pe : pool) {
    by_eid[pe.edge.eid] = inst.size();
    inst.push_back({pe.edge, pe.pu, pe.pv, pe.kind == 0, true});
  }
  std::set<EdgeId> forest_before;
  for (const auto& re : inst)
    if (re.in_forest) forest_before.insert(re.edge.eid);

  auto forest_path = [&](std::uint64_t from, std::uint64_t to) -> std::vector<std::size_t> {
    // BFS over alive forest edges between pieces; returns edge indices or empty
    if (from == to) return {};
    std::unordered_map<std::uint64_t, std::pair<std::uint64_t, std::size_t>> via;
    std::queue<std::uint64_t> q;
    q.push(from);
    via[from] = {from, ~0ull};
    while (!q.empty() && !via.count(to)) {
      std::uint64_t x = q.front();
      q.pop();
      for (std::size_t i = 0; i < inst.size(); ++i) {
        const auto& re = inst[i];
        if (!re.alive || !re.in_forest) continue;
        std::uint64_t y;
        if (re.pu == x)
          y = re.pv;
        else if (re.pv == x)
          y = re.pu;
        else
          continue;
        if (!via.count(y)) {
          via[y] = {x, i};
          q.push(y);
        }
      }
    }
    if (!via.count(to)) return {};
    std::vector<std::size_t> path;
    for (std::uint64_t x = to; x != from;) {
      auto [px, ei] = via.at(x);
      path.push_back(ei);
      x = px;
    }
    return path;
  };
  auto connected = [&](std::uint64_t a, std::uint64_t b) {
    return a == b || !forest_path(a, b).empty();
  };

  for (const auto& op : ops) {
    WeightedEdge e = op.edge;
    if (unit_weights_) e.weight = 0.0;
    if (op.kind == OpKind::Insert) {
      std::uint64_t pu = insert_piece.count(e.u) ? insert_piece.at(e.u) : kNoEdge;
      std::uint64_t pv = insert_piece.count(e.v) ? insert_piece.at(e.v) : kNoEdge;
      std::size_t idx;
      if (by_eid.count(e.eid)) {
        idx = by_eid.at(e.eid);
        inst[idx].edge = e;
        inst[idx].alive = true;
        inst[idx].in_forest = false;
      } else {
        idx = inst.size();
        by_eid[e.eid] = idx;
        inst.push_back({e, pu, pv, false, true});
      }
      if (inst[idx].pu == inst[idx].pv)
        throw Error(ErrorCode::PreconditionViolated,
                    "replay: insert endpoints share a piece (separator must split them)");
      if (!connected(inst[idx].pu, inst[idx].pv)) {
        inst[idx].in_forest = true;
        script.ops.push_back({true, e});
      } else {
        auto path = forest_path(inst[idx].pu, inst[idx].pv);
        std::size_t heavy = path.front();
        for (std::size_t ei : path)
          if (inst[heavy].edge < inst[ei].edge) heavy = ei;
        if (e < inst[heavy].edge) {
          script.ops.push_back({true, e});
          script.ops.push_back({false, inst[heavy].edge});
          inst[heavy].in_forest = false;
          inst[idx].in_forest = true;
        }
      }
    } else {
      auto it = by_eid.find(e.eid);
      if (it == by_eid.end())
        throw Error(ErrorCode::PreconditionViolated, "replay: deleted edge not in instance");
      ReplayEdge& re = inst[it->second];
      bool was_forest = re.in_forest;
      std::uint64_t pu = re.pu, pv = re.pv;
      re.alive = false;
      re.in_forest = false;
      if (was_forest) {
        script.ops.push_back({false, re.edge});
        // replacement: lightest alive non-forest edge reconnecting the halves
        std::size_t best = ~0ull;
        for (std::size_t i = 0; i < inst.size(); ++i) {
          const auto& c2 = inst[i];
          if (!c2.alive || c2.in_forest) continue;
          if (connected(c2.pu, pu) == connected(c2.pv, pu)) continue;
          if (best == ~0ull || c2.edge < inst[best].edge) best = i;
        }
        (void)pv;
        if (best != ~0ull) {
          inst[best].in_forest = true;
          script.ops.push_back({true, inst[best].edge});
        }
      }
    }
    script.prefix.push_back(script.ops.size());
  }

  std::set<EdgeId> forest_after;
  for (const auto& re : inst)
    if (re.alive && re.in_forest) forest_after.insert(re.edge.eid);

  // --- commit: graph table, forest flags, top tree surgery -----------------
  {
    struct EdgeUpd {
      WeightedEdge edge;
      std::uint32_t action;  // 0 erase, 1 upsert non-forest, 2 upsert forest
    };
    auto outs = make_outs<EdgeUpd>(*cluster_);
    for (std::size_t i = 0; i < pre_deletes.size(); ++i)
      outs[0].push_back({edges_.owner(pre_deletes[i]), EdgeUpd{del_edges[i], 0}});
    for (const auto& e : inserts) {
      bool alive = false, inf = false;
      auto it = by_eid.find(e.eid);
      if (it != by_eid.end()) {
        alive = inst[it->second].alive;
        inf = inst[it->second].in_forest;
      }
      if (alive)
        outs[0].push_back({edges_.owner(e.eid), EdgeUpd{inst[it->second].edge, inf ? 2u : 1u}});
    }
    // forest membership flips among pre-existing pool edges
    for (const auto& pe : pool) {
      bool before = forest_before.count(pe.edge.eid) != 0;
      bool after = forest_after.count(pe.edge.eid) != 0;
      auto it = by_eid.find(pe.edge.eid);
      bool alive = it != by_eid.end() && inst[it->second].alive;
      if (!alive || before == after) continue;
      outs[0].push_back({edges_.owner(pe.edge.eid), EdgeUpd{pe.edge, after ? 2u : 1u}});
    }
    auto in = exchange(*cluster_, std::move(outs));
    for (std::size_t m = 0; m < M; ++m)
      for (const auto& env : in[m]) {
        if (env.value.action == 0)
          edges_.erase(env.value.edge.eid);
        else
          edges_.put(env.value.edge.eid, {env.value.edge, env.value.action == 2});
      }
  }
  {
    // physical surgery: cut what left the forest, link what joined it
    std::vector<EdgeId> cut;
    for (EdgeId eid : forest_before)
      if (!forest_after.count(eid)) cut.push_back(eid);
    std::vector<WeightedEdge> link;
    for (const auto& re : inst)
      if (re.alive && re.in_forest && !forest_before.count(re.edge.eid)) link.push_back(re.edge);
    trees_.batch_cut(cut);
    trees_.batch_link(link);
  }
  return script;
}

std::set<EdgeId> MsfDynamic::forest_edges_host() const {
  std::set<EdgeId> out;
  edges_.for_each_host([&](std::uint64_t eid, const StoredEdge& se) {
    if (se.in_forest) out.insert(eid);
  });
  return out;
}

std::vector<WeightedEdge> MsfDynamic::graph_edges_host() const {
  std::vector<WeightedEdge> out;
  edges_.for_each_host([&](std::uint64_t, const StoredEdge& se) { out.push_back(se.edge); });
  std::sort(out.begin(), out.end(),
            [](const WeightedEdge& a, const WeightedEdge& b) { return a.eid < b.eid; });
  return out;
}

}  // namespace mpcdyn
