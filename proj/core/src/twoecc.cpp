#include "mpcdyn/twoecc.hpp"

#include <algorithm>

namespace mpcdyn {

using mpc::Cluster;
using mpc::exchange;
using mpc::make_outs;

std::uint64_t mulmod(std::uint64_t a, std::uint64_t b, std::uint64_t p) {
  return static_cast<std::uint64_t>((static_cast<unsigned __int128>(a) * b) % p);
}

std::uint64_t powmod(std::uint64_t base, std::uint64_t exp, std::uint64_t p) {
  std::uint64_t r = 1 % p;
  base %= p;
  while (exp) {
    if (exp & 1) r = mulmod(r, base, p);
    base = mulmod(base, base, p);
    exp >>= 1;
  }
  return r;
}

bool is_prime_u64(std::uint64_t x) {
  if (x < 2) return false;
  for (std::uint64_t s : {2ull, 3ull, 5ull, 7ull, 11ull, 13ull, 17ull, 19ull, 23ull, 29ull, 31ull, 37ull}) {
    if (x % s == 0) return x == s;
  }
  std::uint64_t d = x - 1;
  int r = 0;
  while ((d & 1) == 0) {
    d >>= 1;
    ++r;
  }
  // deterministic Miller-Rabin bases for 64-bit integers
  for (std::uint64_t a : {2ull, 3ull, 5ull, 7ull, 11ull, 13ull, 17ull, 19ull, 23ull, 29ull, 31ull, 37ull}) {
    std::uint64_t y = powmod(a % x, d, x);
    if (y == 1 || y == x - 1) continue;
    bool witness = true;
    for (int i = 0; i < r - 1 && witness; ++i) {
      y = mulmod(y, y, x);
      if (y == x - 1) witness = false;
    }
    if (witness) return false;
  }
  return true;
}

std::uint64_t smallest_prime_above(std::uint64_t x) {
  std::uint64_t c = x + 1;
  if (c <= 2) return 2;
  if ((c & 1) == 0) ++c;
  while (!is_prime_u64(c)) c += 2;
  return c;
}

Fingerprint vertex_fingerprint(VertexId v, std::span<const WeightedEdge> incident,
                               const SketchParams& params) {
  std::uint64_t acc = 0;
  for (const auto& e : incident) {
    std::uint64_t term = powmod(params.z, params.idx(e.u, e.v), params.p);
    if (v == e.u)
      acc = (acc + term) % params.p;
    else if (v == e.v)
      acc = (acc + params.p - term) % params.p;
  }
  return acc;
}

TwoEccDynamic::TwoEccDynamic(Cluster& c, const GraphSnapshot& initial)
    : cluster_(&c), n_(initial.n), msf_(c, initial, /*unit_weights=*/true), labels_(c) {
  double nd = static_cast<double>(std::max<std::size_t>(n_, 2));
  params_.n = n_;
  params_.p = smallest_prime_above(static_cast<std::uint64_t>(nd * nd * nd * nd));
  rescan();
}

TwoEccDelta TwoEccDynamic::process_batch(const Batch& batch) {
  msf_.process_batch(batch);
  std::set<EdgeId> before = bridges_;
  rescan();
  TwoEccDelta delta;
  for (EdgeId e : bridges_)
    if (!before.count(e)) delta.bridges_added.push_back(e);
  for (EdgeId e : before)
    if (!bridges_.count(e)) delta.bridges_removed.push_back(e);
  return delta;
}

void TwoEccDynamic::rescan() {
  std::size_t M = cluster_->machines();
  ++batch_counter_;
  params_.z =
      1 + mpc::splitmix64(cluster_->config().seed ^ (batch_counter_ * 0x2ecc2eccull)) %
              (params_.p - 1);

  // per-vertex fingerprints of the full edge set and of the forest edges
  struct Term {
    std::uint64_t vertex;
    std::uint64_t g, t;  // graph / forest-only contributions
  };
  mpc::Dist<Term> terms(*cluster_);
  for (std::size_t m = 0; m < M; ++m) {
    std::vector<std::pair<EdgeId, const MsfDynamic::StoredEdge*>> sorted;
    for (const auto& [eid, se] : msf_.edge_table().local(m)) sorted.push_back({eid, &se});
    std::sort(sorted.begin(), sorted.end());
    for (auto& [eid, se] : sorted) {
      std::uint64_t term = powmod(params_.z, params_.idx(se->edge.u, se->edge.v), params_.p);
      std::uint64_t neg = params_.p - term;
      terms.part(m).push_back({se->edge.u, term, se->in_forest ? term : 0});
      terms.part(m).push_back({se->edge.v, neg, se->in_forest ? neg % params_.p : 0});
    }
    cluster_->charge_local(m, sorted.size());
  }
  std::uint64_t p = params_.p;
  mpc::aggregate_by_key(
      *cluster_, terms, [](const Term& t) { return mpc::SortKey{t.vertex, 0}; },
      [p](const Term& a, const Term& b) {
        return Term{a.vertex, (a.g + b.g) % p, (a.t + b.t) % p};
      });

  // difference fingerprints keyed by vertex
  mpc::KeyedDist<AggValue> dvals(*cluster_);
  {
    auto outs = make_outs<Term>(*cluster_);
    for (std::size_t m = 0; m < M; ++m)
      for (const auto& t : terms.cpart(m))
        outs[m].push_back({dvals.owner(t.vertex), t});
    auto in = exchange(*cluster_, std::move(outs));
    for (std::size_t m = 0; m < M; ++m)
      for (const auto& env : in[m]) {
        std::uint64_t diff = (env.value.g + p - env.value.t) % p;
        dvals.put(env.value.vertex, {diff, 0});
      }
  }

  // subtree sums of the difference fingerprints
  mpc::KeyedDist<AggValue> subtree(*cluster_);
  msf_.trees().subtree_vertex_aggregate(
      dvals, {0, 0}, [p](AggValue a, AggValue b) { return AggValue{(a.a + b.a) % p, 0}; },
      subtree);

  // per-vertex depth identifies the child side of every forest edge
  RootPathAggregate depth_agg;
  depth_agg.identity = {0, 0};
  depth_agg.edge = [](const WeightedEdge&) { return AggValue{1, 0}; };
  depth_agg.combine = [](AggValue top, AggValue bottom) {
    return AggValue{top.a + bottom.a, 0};
  };
  mpc::KeyedDist<AggValue> depth(*cluster_);
  msf_.trees().root_path_aggregate(depth_agg, depth);

  // bridge test per forest edge: subtree difference of the child side is zero
  struct Probe {
    EdgeId eid;
    std::uint64_t vertex;
    std::uint64_t side;  // 0 = u, 1 = v
  };
  struct Ans {
    EdgeId eid;
    std::uint64_t side;
    std::uint64_t depth;
    std::uint64_t sum;
  };
  std::vector<EdgeId> forest_eids;
  for (std::size_t m = 0; m < M; ++m) {
    std::vector<EdgeId> mine;
    for (const auto& [eid, se] : msf_.edge_table().local(m))
      if (se.in_forest) mine.push_back(eid);
    std::sort(mine.begin(), mine.end());
    forest_eids.insert(forest_eids.end(), mine.begin(), mine.end());
  }
  auto outs = make_outs<Probe>(*cluster_);
  for (EdgeId eid : forest_eids) {
    outs[0].push_back({labels_.owner(eid_lo(eid)), Probe{eid, eid_lo(eid), 0}});
    outs[0].push_back({labels_.owner(eid_hi(eid)), Probe{eid, eid_hi(eid), 1}});
  }
  auto in = exchange(*cluster_, std::move(outs));
  auto back = make_outs<Ans>(*cluster_);
  for (std::size_t m = 0; m < M; ++m)
    for (const auto& env : in[m]) {
      const AggValue* d = depth.find(env.value.vertex);
      const AggValue* s = subtree.find(env.value.vertex);
      back[m].push_back({mpc::owner_of(env.value.eid, M),
                         Ans{env.value.eid, env.value.side, d ? d->a : 0, s ? s->a : 0}});
    }
  auto rin = exchange(*cluster_, std::move(back));
  bridges_.clear();
  std::vector<EdgeId> marks;
  for (std::size_t m = 0; m < M; ++m) {
    std::map<EdgeId, std::array<Ans, 2>> merged;
    for (const auto& env : rin[m]) merged[env.value.eid][env.value.side] = env.value;
    for (const auto& [eid, sides] : merged) {
      const Ans& child = sides[0].depth > sides[1].depth ? sides[0] : sides[1];
      if (child.sum % p == 0) {
        bridges_.insert(eid);
        marks.push_back(eid);
      }
    }
  }
  std::sort(marks.begin(), marks.end());

  // labels: nearest marked (bridge) edge above each vertex
  std::set<EdgeId> mark_set(marks.begin(), marks.end());
  RootPathAggregate lbl;
  lbl.identity = {kRootLabel, 0};
  lbl.edge = [mark_set](const WeightedEdge& e) {
    return mark_set.count(e.eid) ? AggValue{e.eid, 0} : AggValue{kRootLabel, 0};
  };
  lbl.combine = [](AggValue top, AggValue bottom) {
    return bottom.a != kRootLabel ? bottom : top;
  };
  msf_.trees().root_path_aggregate(lbl, labels_);
}

std::vector<std::pair<VertexId, std::uint64_t>> TwoEccDynamic::labels_host() const {
  std::vector<std::pair<VertexId, std::uint64_t>> out;
  labels_.for_each_host([&](std::uint64_t v, const AggValue& a) {
    out.push_back({static_cast<VertexId>(v), a.a});
  });
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace mpcdyn
