#include "mpcdyn/matching.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "mpcdyn/dist.hpp"

namespace mpcdyn {

using mpc::Cluster;
using mpc::exchange;
using mpc::make_outs;

namespace {

constexpr std::size_t kChunk = 512;

std::uint64_t clamp_pow(std::uint64_t delta, double exp) {
  double v = std::pow(static_cast<double>(std::max<std::uint64_t>(delta, 1)), exp);
  return std::max<std::uint64_t>(1, static_cast<std::uint64_t>(v));
}

}  // namespace

MatchingDynamic::MatchingDynamic(Cluster& c, const GraphSnapshot& initial, MatchingOptions opt)
    : cluster_(&c), n_(initial.n), opt_(opt), edges_(c), matched_of_(c), cover_(c) {
  bootstrap(initial);
}

std::size_t MatchingDynamic::admitted_batch_size() const {
  double s = static_cast<double>(cluster_->words_per_machine());
  return std::max<std::size_t>(
      1, static_cast<std::size_t>(std::pow(s, 1.0 - opt_.delta) / 4.0));
}

void MatchingDynamic::bootstrap(const GraphSnapshot& initial) {
  std::vector<WeightedEdge> all;
  all.reserve(initial.m());
  for (const auto& [eid, e] : initial.edges) all.push_back(e);
  std::sort(all.begin(), all.end(),
            [](const WeightedEdge& a, const WeightedEdge& b) { return a.eid < b.eid; });
  std::size_t step = std::min(kChunk, admitted_batch_size());
  for (std::size_t off = 0; off < all.size(); off += step) {
    Batch b;
    for (std::size_t i = off; i < std::min(all.size(), off + step); ++i)
      b.ops.push_back(UpdateOp{OpKind::Insert, all[i]});
    process_batch(b);
  }
}

std::vector<MatchingScriptOp> MatchingDynamic::process_batch(const Batch& batch) {
  if (batch.k() > admitted_batch_size())
    throw Error(ErrorCode::BatchTooLarge, "batch exceeds the admitted matching size");
  stats_ = {};
  std::vector<MatchingScriptOp> script;
  for (std::size_t off = 0; off < batch.ops.size(); off += kChunk) {
    std::vector<UpdateOp> chunk(
        batch.ops.begin() + off,
        batch.ops.begin() + std::min(batch.ops.size(), off + kChunk));
    auto part = process_chunk(chunk);
    script.insert(script.end(), part.begin(), part.end());
  }
  stats_.script_ops = script.size();
  return script;
}

std::uint64_t MatchingDynamic::max_cover_degree() {
  std::size_t M = cluster_->machines();
  struct DegRec {
    std::uint64_t vertex, count;
  };
  mpc::Dist<DegRec> degs(*cluster_);
  for (std::size_t m = 0; m < M; ++m)
    for (const auto& e : residual_->cpart(m)) {
      degs.part(m).push_back({e.u, 1});
      degs.part(m).push_back({e.v, 1});
    }
  mpc::aggregate_by_key(
      *cluster_, degs, [](const DegRec& r) { return mpc::SortKey{r.vertex, 0}; },
      [](const DegRec& a, const DegRec& b) { return DegRec{a.vertex, a.count + b.count}; });
  // cover membership filter, then a max fold through machine 0
  struct Q {
    std::uint64_t vertex, count;
  };
  auto outs = make_outs<Q>(*cluster_);
  for (std::size_t m = 0; m < M; ++m)
    for (const auto& r : degs.cpart(m))
      outs[m].push_back({cover_.owner(r.vertex), Q{r.vertex, r.count}});
  auto in = exchange(*cluster_, std::move(outs));
  std::vector<std::uint64_t> local_max(M, 0);
  for (std::size_t m = 0; m < M; ++m)
    for (const auto& env : in[m])
      if (cover_.find(env.value.vertex))
        local_max[m] = std::max(local_max[m], env.value.count);
  return mpc::fold_at_zero<std::uint64_t>(
      *cluster_, local_max, 0, [](std::uint64_t a, std::uint64_t b) { return std::max(a, b); });
}

void MatchingDynamic::drop_matched_incident() {
  std::size_t M = cluster_->machines();
  struct Q {
    std::uint64_t vertex;
    std::uint64_t tag;
  };
  std::vector<std::vector<std::pair<std::uint64_t, std::uint64_t>>> reqs(M);
  for (std::size_t m = 0; m < M; ++m)
    for (std::size_t i = 0; i < residual_->cpart(m).size(); ++i) {
      const auto& e = residual_->cpart(m)[i];
      reqs[m].push_back({e.u, (i << 1)});
      reqs[m].push_back({e.v, (i << 1) | 1});
    }
  struct Ans {
    std::uint64_t tag;
    std::uint32_t matched;
  };
  auto res = mpc::keyed_probe<EdgeId, Ans>(
      *cluster_, matched_of_, reqs, [](std::uint64_t, std::uint64_t tag, const EdgeId* v) {
        return Ans{tag, v ? 1u : 0u};
      });
  std::vector<std::vector<bool>> dead(M);
  for (std::size_t m = 0; m < M; ++m) dead[m].assign(residual_->cpart(m).size(), false);
  for (std::size_t m = 0; m < M; ++m)
    for (const auto& a : res[m])
      if (a.matched) dead[m][a.tag >> 1] = true;
  for (std::size_t m = 0; m < M; ++m) {
    auto& p = residual_->part(m);
    std::size_t w = 0;
    for (std::size_t i = 0; i < p.size(); ++i)
      if (!dead[m][i]) p[w++] = p[i];
    p.resize(w);
  }
}

std::vector<std::pair<VertexId, VertexId>> MatchingDynamic::stage1(std::uint64_t delta,
                                                                   std::uint64_t seed) {
  std::size_t M = cluster_->machines();
  std::size_t k = std::max<std::size_t>(stats_.cover_size, 2);
  std::uint64_t x = clamp_pow(delta, opt_.group_exp);
  std::uint64_t sample_div = clamp_pow(delta, opt_.sample_exp);
  std::uint64_t high1 = clamp_pow(delta, opt_.high_exp);
  // parallel repetition when the degree dwarfs the cover
  std::size_t instances = 1;
  if (delta > clamp_pow(k, 0.1))
    instances = std::min<std::size_t>(4, std::max<std::size_t>(1, clamp_pow(k, 0.05)));

  struct Sampled {
    WeightedEdge edge;
    std::uint32_t instance;
    std::uint32_t group;
  };
  // group-local greedy matchings per instance, gathered at group homes
  auto group_of = [&](VertexId v, std::size_t inst) {
    return static_cast<std::uint32_t>(mpc::splitmix64(seed ^ (0x51a6eull * (inst + 1)) ^ v) % x);
  };
  auto outs = make_outs<Sampled>(*cluster_);
  for (std::size_t m = 0; m < M; ++m)
    for (const auto& e : residual_->cpart(m))
      for (std::size_t inst = 0; inst < instances; ++inst) {
        std::uint32_t gu = group_of(e.u, inst), gv = group_of(e.v, inst);
        if (gu != gv) continue;
        if (mpc::splitmix64(seed ^ (0xeda6eull * (inst + 1)) ^ e.eid) % sample_div != 0) continue;
        std::uint32_t home = static_cast<std::uint32_t>((inst * x + gu) % M);
        outs[m].push_back({home, Sampled{e, static_cast<std::uint32_t>(inst), gu}});
      }
  auto in = exchange(*cluster_, std::move(outs));
  // greedy per (instance, group) under a seeded random order
  std::vector<std::vector<std::pair<VertexId, VertexId>>> proposals(instances);
  for (std::size_t m = 0; m < M; ++m) {
    std::map<std::pair<std::uint32_t, std::uint32_t>, std::vector<WeightedEdge>> groups;
    for (const auto& env : in[m])
      groups[{env.value.instance, env.value.group}].push_back(env.value.edge);
    for (auto& [key, es] : groups) {
      std::sort(es.begin(), es.end(), [&](const WeightedEdge& a, const WeightedEdge& b) {
        return mpc::splitmix64(seed ^ a.eid) < mpc::splitmix64(seed ^ b.eid);
      });
      std::set<VertexId> used;
      for (const auto& e : es)
        if (!used.count(e.u) && !used.count(e.v)) {
          used.insert(e.u);
          used.insert(e.v);
          proposals[key.first].push_back({e.u, e.v});
        }
      cluster_->charge_local(m, es.size());
    }
  }
  if (instances == 1) return proposals[0];

  // pick the instance leaving the fewest high-degree cover vertices
  std::size_t best = 0;
  std::uint64_t best_count = ~0ull;
  for (std::size_t inst = 0; inst < instances; ++inst) {
    std::set<VertexId> hit;
    for (auto& [u, v] : proposals[inst]) {
      hit.insert(u);
      hit.insert(v);
    }
    // surviving residual degrees per cover vertex
    struct DegRec {
      std::uint64_t vertex, count;
    };
    mpc::Dist<DegRec> degs(*cluster_);
    auto copies = mpc::broadcast(*cluster_, 0, std::vector<VertexId>(hit.begin(), hit.end()));
    for (std::size_t m = 0; m < M; ++m) {
      std::set<VertexId> local_hit(copies[m].begin(), copies[m].end());
      for (const auto& e : residual_->cpart(m)) {
        if (local_hit.count(e.u) || local_hit.count(e.v)) continue;
        degs.part(m).push_back({e.u, 1});
        degs.part(m).push_back({e.v, 1});
      }
    }
    mpc::aggregate_by_key(
        *cluster_, degs, [](const DegRec& r) { return mpc::SortKey{r.vertex, 0}; },
        [](const DegRec& a, const DegRec& b) { return DegRec{a.vertex, a.count + b.count}; });
    struct Q {
      std::uint64_t vertex, count;
    };
    auto q_outs = make_outs<Q>(*cluster_);
    for (std::size_t m = 0; m < M; ++m)
      for (const auto& r : degs.cpart(m))
        q_outs[m].push_back({cover_.owner(r.vertex), Q{r.vertex, r.count}});
    auto q_in = exchange(*cluster_, std::move(q_outs));
    std::vector<std::uint64_t> local(M, 0);
    for (std::size_t m = 0; m < M; ++m)
      for (const auto& env : q_in[m])
        if (cover_.find(env.value.vertex) && env.value.count > high1) local[m]++;
    std::uint64_t count = mpc::fold_at_zero<std::uint64_t>(
        *cluster_, local, 0, [](std::uint64_t a, std::uint64_t b) { return a + b; });
    if (count < best_count) {
      best_count = count;
      best = inst;
    }
  }
  return proposals[best];
}

std::vector<std::pair<VertexId, VertexId>> MatchingDynamic::stage2(std::uint64_t delta,
                                                                   std::uint64_t seed) {
  std::size_t M = cluster_->machines();
  std::uint64_t high2 = clamp_pow(delta, opt_.stage2_exp);
  std::uint64_t q_div = clamp_pow(delta, opt_.stage2_sample_exp);

  // residual degrees, then the set of high-degree vertices
  struct DegRec {
    std::uint64_t vertex, count;
  };
  auto degree_pass = [&]() {
    mpc::Dist<DegRec> degs(*cluster_);
    for (std::size_t m = 0; m < M; ++m)
      for (const auto& e : residual_->cpart(m)) {
        degs.part(m).push_back({e.u, 1});
        degs.part(m).push_back({e.v, 1});
      }
    mpc::aggregate_by_key(
        *cluster_, degs, [](const DegRec& r) { return mpc::SortKey{r.vertex, 0}; },
        [](const DegRec& a, const DegRec& b) { return DegRec{a.vertex, a.count + b.count}; });
    std::vector<std::vector<VertexId>> high(M);
    for (std::size_t m = 0; m < M; ++m)
      for (const auto& r : degs.cpart(m))
        if (r.count > high2) high[m].push_back(static_cast<VertexId>(r.vertex));
    return high;
  };

  std::vector<std::pair<VertexId, VertexId>> matched;
  auto greedy_apply = [&](std::vector<WeightedEdge> es) {
    std::sort(es.begin(), es.end(), [&](const WeightedEdge& a, const WeightedEdge& b) {
      return mpc::splitmix64(seed ^ 0x57a2eull ^ a.eid) < mpc::splitmix64(seed ^ 0x57a2eull ^ b.eid);
    });
    std::set<VertexId> used;
    for (auto& [u, v] : matched) {
      used.insert(u);
      used.insert(v);
    }
    for (const auto& e : es)
      if (!used.count(e.u) && !used.count(e.v)) {
        used.insert(e.u);
        used.insert(e.v);
        matched.push_back({e.u, e.v});
      }
  };

  // sampled edges incident to high-degree vertices, on one machine
  {
    auto high = degree_pass();
    auto copies = mpc::broadcast(*cluster_, 0, mpc::gather_to(*cluster_, 0, std::move(high)));
    std::vector<std::vector<WeightedEdge>> picked(M);
    for (std::size_t m = 0; m < M; ++m) {
      std::set<VertexId> hs(copies[m].begin(), copies[m].end());
      for (const auto& e : residual_->cpart(m)) {
        if (!hs.count(e.u) && !hs.count(e.v)) continue;
        if (mpc::splitmix64(seed ^ 0x2a9eull ^ e.eid) % q_div != 0) continue;
        picked[m].push_back(e);
      }
    }
    greedy_apply(mpc::gather_to(*cluster_, 0, std::move(picked)));
  }
  // leftover high-degree vertices: everything they touch fits one machine now
  {
    auto high = degree_pass();
    auto copies = mpc::broadcast(*cluster_, 0, mpc::gather_to(*cluster_, 0, std::move(high)));
    std::vector<std::vector<WeightedEdge>> picked(M);
    for (std::size_t m = 0; m < M; ++m) {
      std::set<VertexId> hs(copies[m].begin(), copies[m].end());
      std::set<VertexId> touched;
      for (auto& [u, v] : matched) {
        touched.insert(u);
        touched.insert(v);
      }
      for (const auto& e : residual_->cpart(m)) {
        if (!hs.count(e.u) && !hs.count(e.v)) continue;
        if (touched.count(e.u) || touched.count(e.v)) continue;
        picked[m].push_back(e);
      }
    }
    greedy_apply(mpc::gather_to(*cluster_, 0, std::move(picked)));
  }
  return matched;
}

void MatchingDynamic::extend_cover(std::uint64_t delta) {
  std::size_t M = cluster_->machines();
  std::uint64_t high2 = clamp_pow(delta, opt_.stage2_exp);
  struct DegRec {
    std::uint64_t vertex, count;
  };
  mpc::Dist<DegRec> degs(*cluster_);
  for (std::size_t m = 0; m < M; ++m)
    for (const auto& e : residual_->cpart(m)) {
      degs.part(m).push_back({e.u, 1});
      degs.part(m).push_back({e.v, 1});
    }
  mpc::aggregate_by_key(
      *cluster_, degs, [](const DegRec& r) { return mpc::SortKey{r.vertex, 0}; },
      [](const DegRec& a, const DegRec& b) { return DegRec{a.vertex, a.count + b.count}; });
  auto outs = make_outs<std::uint64_t>(*cluster_);
  for (std::size_t m = 0; m < M; ++m)
    for (const auto& r : degs.cpart(m))
      if (r.count > high2) outs[m].push_back({cover_.owner(r.vertex), r.vertex});
  auto in = exchange(*cluster_, std::move(outs));
  for (std::size_t m = 0; m < M; ++m)
    for (const auto& env : in[m])
      if (!cover_.find(env.value)) {
        cover_.put(env.value, 1);
        stats_.cover_size++;
      }
}

std::vector<std::pair<VertexId, VertexId>> MatchingDynamic::local_finish(std::uint64_t seed) {
  std::size_t M = cluster_->machines();
  std::vector<std::vector<WeightedEdge>> per(M);
  for (std::size_t m = 0; m < M; ++m) per[m] = std::move(residual_->part(m));
  for (std::size_t m = 0; m < M; ++m) residual_->part(m).clear();
  auto all = mpc::gather_to(*cluster_, 0, std::move(per));
  mpc::ScratchGuard guard(*cluster_, 0);
  guard.set(all.size() * 3);
  std::sort(all.begin(), all.end(), [&](const WeightedEdge& a, const WeightedEdge& b) {
    return mpc::splitmix64(seed ^ 0xf117ull ^ a.eid) < mpc::splitmix64(seed ^ 0xf117ull ^ b.eid);
  });
  std::set<VertexId> used;
  std::vector<std::pair<VertexId, VertexId>> matched;
  for (const auto& e : all)
    if (!used.count(e.u) && !used.count(e.v)) {
      used.insert(e.u);
      used.insert(e.v);
      matched.push_back({e.u, e.v});
    }
  return matched;
}

void MatchingDynamic::apply_matches(const std::vector<std::pair<VertexId, VertexId>>& pairs,
                                    std::vector<MatchingScriptOp>* script) {
  std::size_t M = cluster_->machines();
  struct Upd {
    VertexId u, v;
    EdgeId eid;
  };
  auto outs = make_outs<Upd>(*cluster_);
  auto eouts = make_outs<Upd>(*cluster_);
  for (auto& [u, v] : pairs) {
    EdgeId eid = canonical_eid(u, v);
    outs[0].push_back({matched_of_.owner(u), Upd{u, v, eid}});
    outs[0].push_back({matched_of_.owner(v), Upd{v, u, eid}});
    eouts[0].push_back({edges_.owner(eid), Upd{u, v, eid}});
  }
  auto in = exchange(*cluster_, std::move(outs));
  for (std::size_t m = 0; m < M; ++m)
    for (const auto& env : in[m]) {
      if (matched_of_.find(env.value.u))
        throw Error(ErrorCode::PreconditionViolated, "double matching a vertex");
      matched_of_.put(env.value.u, env.value.eid);
    }
  auto ein = exchange(*cluster_, std::move(eouts));
  for (std::size_t m = 0; m < M; ++m)
    for (const auto& env : ein[m]) {
      auto* se = edges_.find(env.value.eid);
      if (!se) {
        if (script)
          throw Error(ErrorCode::PreconditionViolated, "matched edge missing from the graph");
        continue;  // synthetic phase instance: edge lives outside the store
      }
      se->matched = true;
      if (script) script->push_back({true, se->edge});
    }
}

std::vector<MatchingScriptOp> MatchingDynamic::process_chunk(const std::vector<UpdateOp>& ops) {
  std::size_t M = cluster_->machines();
  std::vector<MatchingScriptOp> script;
  if (ops.empty()) return script;
  ++batch_counter_;
  std::uint64_t seed = mpc::splitmix64(cluster_->config().seed ^ (batch_counter_ * 0x3a7c41ull));

  // validate ops against the stored edge set plus the running prefix
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

  // apply updates; deleted matched edges free their endpoints (M -> M')
  std::set<EdgeId> inserted_now;
  std::vector<VertexId> freed;
  {
    struct EdgeUpd {
      WeightedEdge edge;
      std::uint32_t is_insert;
    };
    auto outs = make_outs<EdgeUpd>(*cluster_);
    for (const auto& op : ops) {
      outs[0].push_back({edges_.owner(op.edge.eid),
                         EdgeUpd{op.edge, op.kind == OpKind::Insert ? 1u : 0u}});
      if (op.kind == OpKind::Insert) inserted_now.insert(op.edge.eid);
    }
    auto in = exchange(*cluster_, std::move(outs));
    auto funs = make_outs<VertexId>(*cluster_);
    for (std::size_t m = 0; m < M; ++m)
      for (const auto& env : in[m]) {
        if (env.value.is_insert) {
          edges_.put(env.value.edge.eid, {env.value.edge, false});
        } else {
          auto* se = edges_.find(env.value.edge.eid);
          bool was_matched = se && se->matched;
          WeightedEdge stored = se ? se->edge : env.value.edge;
          edges_.erase(env.value.edge.eid);
          if (was_matched) {
            script.push_back({false, stored});
            funs[m].push_back({matched_of_.owner(stored.u), stored.u});
            funs[m].push_back({matched_of_.owner(stored.v), stored.v});
          }
        }
      }
    auto fin = exchange(*cluster_, std::move(funs));
    for (std::size_t m = 0; m < M; ++m)
      for (const auto& env : fin[m]) {
        matched_of_.erase(env.value);
        freed.push_back(env.value);
      }
  }

  // cover: endpoints of every updated edge
  cover_.clear();
  stats_.cover_size = 0;
  {
    auto outs = make_outs<std::uint64_t>(*cluster_);
    for (const auto& op : ops) {
      outs[0].push_back({cover_.owner(op.edge.u), op.edge.u});
      outs[0].push_back({cover_.owner(op.edge.v), op.edge.v});
    }
    auto in = exchange(*cluster_, std::move(outs));
    for (std::size_t m = 0; m < M; ++m)
      for (const auto& env : in[m])
        if (!cover_.find(env.value)) {
          cover_.put(env.value, 1);
          stats_.cover_size++;
        }
  }

  // residual candidates: both endpoints unmatched, incident to a freed vertex
  // or newly inserted
  residual_ = std::make_unique<mpc::Dist<WeightedEdge>>(*cluster_);
  {
    mpc::KeyedDist<std::uint8_t> freed_set(*cluster_);
    {
      auto outs = make_outs<VertexId>(*cluster_);
      for (VertexId v : freed) outs[0].push_back({freed_set.owner(v), v});
      auto in = exchange(*cluster_, std::move(outs));
      for (std::size_t m = 0; m < M; ++m)
        for (const auto& env : in[m]) freed_set.put(env.value, 1);
    }
    // scan all edges; probe endpoint matched flags + freed membership
    std::vector<std::vector<const StoredEdge*>> local(M);
    std::vector<std::vector<std::pair<std::uint64_t, std::uint64_t>>> reqs(M);
    for (std::size_t m = 0; m < M; ++m) {
      std::vector<std::pair<EdgeId, const StoredEdge*>> sorted;
      for (const auto& [eid, se] : edges_.local(m))
        if (!se.matched) sorted.push_back({eid, &se});
      std::sort(sorted.begin(), sorted.end());
      for (auto& [eid, se] : sorted) {
        std::size_t i = local[m].size();
        local[m].push_back(se);
        reqs[m].push_back({se->edge.u, (i << 1)});
        reqs[m].push_back({se->edge.v, (i << 1) | 1});
      }
    }
    struct Ans {
      std::uint64_t tag;
      std::uint32_t matched, freed;
    };
    // single probe pass answering both tables (they share the owner function)
    struct Q {
      std::uint64_t vertex, tag;
    };
    auto outs = make_outs<Q>(*cluster_);
    for (std::size_t m = 0; m < M; ++m)
      for (auto [v, tag] : reqs[m]) outs[m].push_back({matched_of_.owner(v), Q{v, tag}});
    auto in = exchange(*cluster_, std::move(outs));
    auto back = make_outs<Ans>(*cluster_);
    for (std::size_t m = 0; m < M; ++m)
      for (const auto& env : in[m])
        back[m].push_back({env.src, Ans{env.value.tag,
                                        matched_of_.find(env.value.vertex) ? 1u : 0u,
                                        freed_set.find(env.value.vertex) ? 1u : 0u}});
    auto rin = exchange(*cluster_, std::move(back));
    std::vector<std::vector<std::pair<bool, bool>>> flags(M);  // (matched, freed) per slot
    for (std::size_t m = 0; m < M; ++m)
      flags[m].assign(local[m].size() * 2, {false, false});
    for (std::size_t m = 0; m < M; ++m)
      for (const auto& env : rin[m])
        flags[m][env.value.tag] = {env.value.matched != 0, env.value.freed != 0};
    for (std::size_t m = 0; m < M; ++m)
      for (std::size_t i = 0; i < local[m].size(); ++i) {
        auto [mu, fu] = flags[m][(i << 1)];
        auto [mv, fv] = flags[m][(i << 1) | 1];
        if (mu || mv) continue;
        const auto& e = local[m][i]->edge;
        if (!fu && !fv && !inserted_now.count(e.eid)) continue;
        residual_->part(m).push_back(e);
      }
  }
  stats_.candidates = residual_->total_size();

  // degree-reduction phases until one machine can finish greedily
  std::size_t threshold =
      opt_.local_finish_edges ? opt_.local_finish_edges : cluster_->words_per_machine() / 2;
  threshold = std::max<std::size_t>(1, threshold / 3);  // edge records are 3 words
  int phase = 0;
  while (residual_->total_size() > threshold) {
    if (++phase > opt_.max_phases)
      throw Error(ErrorCode::PreconditionViolated, "matching phases did not converge");
    stats_.phases++;
    std::uint64_t delta = max_cover_degree();
    if (delta <= 2) break;  // trivially finishable
    std::uint64_t s1 = mpc::splitmix64(seed ^ (phase * 2ull));
    apply_matches(stage1(delta, s1), &script);
    drop_matched_incident();
    apply_matches(stage2(delta, s1 ^ 0x5742ull), &script);
    drop_matched_incident();
    extend_cover(delta);
    // second run against the extended cover brings whole-graph degrees down
    std::uint64_t s2 = mpc::splitmix64(seed ^ (phase * 2ull + 1));
    apply_matches(stage1(delta, s2), &script);
    drop_matched_incident();
    apply_matches(stage2(delta, s2 ^ 0x5742ull), &script);
    drop_matched_incident();
  }
  apply_matches(local_finish(seed ^ 0x10c41ull), &script);
  drop_matched_incident();
  return script;
}

std::set<EdgeId> MatchingDynamic::matching_host() const {
  std::set<EdgeId> out;
  edges_.for_each_host([&](std::uint64_t eid, const StoredEdge& se) {
    if (se.matched) out.insert(eid);
  });
  return out;
}

std::vector<WeightedEdge> MatchingDynamic::graph_edges_host() const {
  std::vector<WeightedEdge> out;
  edges_.for_each_host([&](std::uint64_t, const StoredEdge& se) { out.push_back(se.edge); });
  std::sort(out.begin(), out.end(),
            [](const WeightedEdge& a, const WeightedEdge& b) { return a.eid < b.eid; });
  return out;
}

MatchingDynamic::PhaseStats MatchingDynamic::run_single_phase(
    const std::vector<WeightedEdge>& residual, const std::vector<VertexId>& cover,
    std::uint64_t seed) {
  std::size_t M = cluster_->machines();
  PhaseStats ps;
  residual_ = std::make_unique<mpc::Dist<WeightedEdge>>(*cluster_);
  {
    auto outs = make_outs<WeightedEdge>(*cluster_);
    for (const auto& e : residual) outs[0].push_back({mpc::owner_of(e.eid, M), e});
    auto in = exchange(*cluster_, std::move(outs));
    for (std::size_t m = 0; m < M; ++m)
      for (const auto& env : in[m]) residual_->part(m).push_back(env.value);
  }
  cover_.clear();
  stats_ = {};
  {
    auto outs = make_outs<std::uint64_t>(*cluster_);
    for (VertexId v : cover) outs[0].push_back({cover_.owner(v), v});
    auto in = exchange(*cluster_, std::move(outs));
    for (std::size_t m = 0; m < M; ++m)
      for (const auto& env : in[m])
        if (!cover_.find(env.value)) {
          cover_.put(env.value, 1);
          stats_.cover_size++;
        }
  }
  ps.residual_before = residual_->total_size();
  ps.max_cover_degree_before = max_cover_degree();
  std::uint64_t delta = ps.max_cover_degree_before;
  if (delta == 0) return ps;

  // matched flags are phase-local here
  auto s1 = stage1(delta, seed);
  apply_matches(s1, nullptr);
  drop_matched_incident();
  auto s2 = stage2(delta, seed ^ 0x5742ull);
  apply_matches(s2, nullptr);
  drop_matched_incident();
  ps.matched = s1.size() + s2.size();
  ps.residual_after = residual_->total_size();
  ps.max_cover_degree_after = max_cover_degree();
  // undo the phase-local matches so the instance state does not leak
  for (auto& [u, v] : s1) {
    matched_of_.erase(u);
    matched_of_.erase(v);
    auto* se = edges_.find(canonical_eid(u, v));
    if (se) se->matched = false;
  }
  for (auto& [u, v] : s2) {
    matched_of_.erase(u);
    matched_of_.erase(v);
    auto* se = edges_.find(canonical_eid(u, v));
    if (se) se->matched = false;
  }
  return ps;
}

}  // namespace mpcdyn
