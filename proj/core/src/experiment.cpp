#include "mpcdyn/experiment.hpp"

#include <algorithm>
#include <random>
#include <sstream>

#include "mpcdyn/oracles.hpp"

namespace mpcdyn {

void ExperimentSpec::validate() const {
  if (problem != "msf" && problem != "2ecc" && problem != "mm")
    throw Error(ErrorCode::InvalidSpec, "unknown problem '" + problem + "'");
  if (n < 2) throw Error(ErrorCode::InvalidSpec, "n must be at least 2");
  if (alpha <= 0.0 || alpha > 1.0) throw Error(ErrorCode::InvalidSpec, "alpha must be in (0,1]");
  if (k == 0) throw Error(ErrorCode::InvalidSpec, "k must be positive");
  if (generator != "gnm" && generator != "path" && generator != "star" &&
      generator != "cycle-pair" && generator != "adversarial-delete")
    throw Error(ErrorCode::InvalidSpec, "unknown generator '" + generator + "'");
  if (generator == "gnm" || generator == "adversarial-delete") {
    std::size_t max_edges = n * (n - 1) / 2;
    if (m > max_edges) throw Error(ErrorCode::InvalidSpec, "m exceeds the simple-graph bound");
  }
}

namespace {

double fresh_weight(std::mt19937_64& rng) {
  return std::uniform_real_distribution<double>(1e-9, 1.0)(rng);
}

GraphSnapshot base_graph(const ExperimentSpec& spec, std::mt19937_64& rng) {
  GraphSnapshot g(spec.n);
  auto add = [&](VertexId u, VertexId v) {
    WeightedEdge e(u, v, fresh_weight(rng));
    g.edges.emplace(e.eid, e);
  };
  if (spec.generator == "path") {
    for (VertexId v = 0; v + 1 < spec.n; ++v) add(v, v + 1);
  } else if (spec.generator == "star") {
    for (VertexId v = 1; v < spec.n; ++v) add(0, v);
  } else if (spec.generator == "cycle-pair") {
    // two cycles joined by a single bridge
    VertexId half = static_cast<VertexId>(spec.n / 2);
    if (half < 3 || spec.n - half < 3)
      throw Error(ErrorCode::InvalidSpec, "cycle-pair needs n >= 6");
    for (VertexId v = 0; v < half; ++v) add(v, static_cast<VertexId>((v + 1) % half));
    for (VertexId v = half; v < spec.n; ++v) {
      VertexId w = v + 1 == spec.n ? half : v + 1;
      add(v, w);
    }
    add(0, half);
  } else {  // gnm and adversarial-delete start from a random graph
    std::uniform_int_distribution<VertexId> vd(0, static_cast<VertexId>(spec.n - 1));
    while (g.m() < spec.m) {
      VertexId u = vd(rng), v = vd(rng);
      if (u == v) continue;
      EdgeId eid = canonical_eid(u, v);
      if (g.has(eid)) continue;
      add(u, v);
    }
  }
  return g;
}

}  // namespace

Workload generate_workload(const ExperimentSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(mpc::splitmix64(spec.seed ^ 0x9e3779b9ull) + spec.seed);
  Workload w;
  w.graph = base_graph(spec, rng);

  std::uniform_int_distribution<VertexId> vd(0, static_cast<VertexId>(spec.n - 1));
  GraphSnapshot cursor = w.graph;
  std::optional<oracles::IncrementalMsf> oracle;
  if (spec.generator == "adversarial-delete") oracle.emplace(w.graph);

  auto random_insert = [&]() -> std::optional<UpdateOp> {
    for (int tries = 0; tries < 64; ++tries) {
      VertexId u = vd(rng), v = vd(rng);
      if (u == v) continue;
      EdgeId eid = canonical_eid(u, v);
      if (cursor.has(eid)) continue;
      return UpdateOp::insert(u, v, fresh_weight(rng));
    }
    return std::nullopt;
  };
  auto random_delete = [&]() -> std::optional<UpdateOp> {
    if (cursor.m() == 0) return std::nullopt;
    auto it = cursor.edges.begin();
    std::advance(it, rng() % cursor.m());
    return UpdateOp::remove(it->second.u, it->second.v);
  };

  // every op is applied to the running state as soon as it is drawn, so each
  // batch is valid against the prefix before it
  auto commit = [&](Batch& batch, const UpdateOp& op) {
    if (op.kind == OpKind::Insert) {
      cursor.edges.emplace(op.edge.eid, op.edge);
      if (oracle) oracle->insert(op.edge);
    } else {
      cursor.edges.erase(op.edge.eid);
      if (oracle) oracle->remove(op.edge.eid);
    }
    batch.ops.push_back(op);
  };

  for (std::size_t b = 0; b < spec.batches; ++b) {
    Batch batch;
    if (spec.generator == "adversarial-delete") {
      // at least k/2 deletions of current oracle forest edges
      std::size_t want_forest = (spec.k + 1) / 2;
      std::vector<EdgeId> forest(oracle->forest().begin(), oracle->forest().end());
      std::shuffle(forest.begin(), forest.end(), rng);
      for (std::size_t i = 0; i < forest.size() && batch.ops.size() < want_forest; ++i)
        commit(batch, UpdateOp::remove(eid_lo(forest[i]), eid_hi(forest[i])));
      while (batch.ops.size() < spec.k) {
        auto op = random_insert();
        if (!op) break;
        commit(batch, *op);
      }
    } else {
      while (batch.ops.size() < spec.k) {
        std::optional<UpdateOp> op;
        if (rng() % 2 == 0) op = random_delete();
        if (!op) op = random_insert();
        if (!op) op = random_delete();
        if (!op) break;
        commit(batch, *op);
      }
    }
    w.batches.push_back(std::move(batch));
  }
  return w;
}

RunResult run_experiment(const ExperimentSpec& spec, const GraphSnapshot& graph,
                         const std::vector<Batch>& batches) {
  spec.validate();
  RunResult out;
  out.problem = spec.problem;
  std::size_t input_words = 2 + 4 * graph.m();
  mpc::MpcConfig cfg = mpc::MpcConfig::derive(graph.n, spec.alpha, input_words, spec.seed);
  mpc::Cluster cluster(cfg);

  auto batch_rounds = [&](std::uint64_t before) {
    return cluster.metrics().rounds - before;
  };

  if (spec.problem == "msf") {
    MsfDynamic msf(cluster, graph);
    out.metrics.preprocess_rounds = cluster.metrics().rounds;
    for (const auto& b : batches) {
      std::uint64_t before = cluster.metrics().rounds;
      out.msf_scripts.push_back(msf.process_batch(b));
      out.metrics.rounds_per_batch.push_back(batch_rounds(before));
    }
  } else if (spec.problem == "2ecc") {
    TwoEccDynamic ecc(cluster, graph);
    out.metrics.preprocess_rounds = cluster.metrics().rounds;
    for (const auto& b : batches) {
      std::uint64_t before = cluster.metrics().rounds;
      io::TwoEccBatchRecord rec;
      rec.delta = ecc.process_batch(b);
      rec.labels = ecc.labels_host();
      out.metrics.rounds_per_batch.push_back(batch_rounds(before));
      out.twoecc_scripts.push_back(std::move(rec));
    }
  } else {
    MatchingDynamic mm(cluster, graph);
    out.metrics.preprocess_rounds = cluster.metrics().rounds;
    // leading record: the matching the run starts from
    std::vector<MatchingScriptOp> initial;
    {
      auto host = mm.graph_edges_host();
      auto matched = mm.matching_host();
      for (const auto& e : host)
        if (matched.count(e.eid)) initial.push_back({true, e});
    }
    out.matching_scripts.push_back(std::move(initial));
    for (const auto& b : batches) {
      std::uint64_t before = cluster.metrics().rounds;
      out.matching_scripts.push_back(mm.process_batch(b));
      out.metrics.rounds_per_batch.push_back(batch_rounds(before));
    }
  }
  out.metrics.totals = cluster.metrics();
  return out;
}

VerifyReport verify_msf(const GraphSnapshot& graph, const std::vector<Batch>& batches,
                        const std::vector<MsfUpdateScript>& scripts) {
  VerifyReport rep;
  if (scripts.size() != batches.size()) {
    rep.ok = false;
    rep.detail = "script batch count " + std::to_string(scripts.size()) + " != " +
                 std::to_string(batches.size());
    return rep;
  }
  oracles::IncrementalMsf oracle(graph);
  std::set<EdgeId> forest = oracle.forest();
  for (std::size_t b = 0; b < batches.size(); ++b) {
    const auto& script = scripts[b];
    if (script.prefix.size() != batches[b].k()) {
      rep.ok = false;
      rep.detail = "batch " + std::to_string(b) + ": prefix count mismatch";
      return rep;
    }
    std::size_t applied = 0;
    for (std::size_t x = 0; x < batches[b].k(); ++x) {
      const auto& op = batches[b].ops[x];
      if (op.kind == OpKind::Insert)
        oracle.insert(op.edge);
      else
        oracle.remove(op.edge.eid);
      if (script.prefix[x] < applied || script.prefix[x] > script.ops.size()) {
        rep.ok = false;
        rep.detail = "batch " + std::to_string(b) + ": prefix index " + std::to_string(x) +
                     " out of order";
        return rep;
      }
      while (applied < script.prefix[x]) {
        const auto& sop = script.ops[applied];
        if (sop.insert)
          forest.insert(sop.edge.eid);
        else
          forest.erase(sop.edge.eid);
        ++applied;
      }
      if (forest != oracle.forest()) {
        rep.ok = false;
        rep.detail = "batch " + std::to_string(b) + ": forest mismatch at prefix index " +
                     std::to_string(x);
        return rep;
      }
    }
    // trailing script ops past the last prefix would change the final forest
    if (applied != script.ops.size()) {
      rep.ok = false;
      rep.detail = "batch " + std::to_string(b) + ": trailing script ops";
      return rep;
    }
  }
  return rep;
}

VerifyReport verify_twoecc(const GraphSnapshot& graph, const std::vector<Batch>& batches,
                           const std::vector<io::TwoEccBatchRecord>& scripts) {
  VerifyReport rep;
  if (scripts.size() != batches.size()) {
    rep.ok = false;
    rep.detail = "script batch count mismatch";
    return rep;
  }
  GraphSnapshot cursor = graph;
  std::set<EdgeId> bridges = oracles::oracle_bridges(graph);  // initial state
  for (std::size_t b = 0; b < batches.size(); ++b) {
    cursor = apply_batch(cursor, batches[b]);
    for (EdgeId e : scripts[b].delta.bridges_added) bridges.insert(e);
    for (EdgeId e : scripts[b].delta.bridges_removed) bridges.erase(e);
    auto expect = oracles::oracle_bridges(cursor);
    if (bridges != expect) {
      rep.ok = false;
      rep.detail = "batch " + std::to_string(b) + ": bridge set mismatch";
      return rep;
    }
    // label partition equals components after deleting the bridges
    auto part = oracles::oracle_2ecc_partition(cursor, expect);
    auto comp = oracles::oracle_components(cursor);
    std::map<std::pair<std::uint64_t, std::uint32_t>, std::set<VertexId>> by_label;
    std::map<std::uint32_t, std::set<VertexId>> by_oracle;
    for (auto [v, lbl] : scripts[b].labels) {
      by_label[{lbl, comp[v]}].insert(v);
      by_oracle[part[v]].insert(v);
    }
    std::set<std::set<VertexId>> a, b2;
    for (auto& [_, s] : by_label) a.insert(s);
    for (auto& [_, s] : by_oracle) b2.insert(s);
    if (a != b2) {
      rep.ok = false;
      rep.detail = "batch " + std::to_string(b) + ": label partition mismatch";
      return rep;
    }
  }
  return rep;
}

VerifyReport verify_matching(const GraphSnapshot& graph, const std::vector<Batch>& batches,
                             const std::vector<std::vector<MatchingScriptOp>>& scripts) {
  VerifyReport rep;
  if (scripts.size() < batches.size()) {
    rep.ok = false;
    rep.detail = "script batch count mismatch";
    return rep;
  }
  GraphSnapshot cursor = graph;
  std::set<EdgeId> matching;
  // scripts may carry leading bootstrap batches when the run started from a
  // non-empty graph; verification replays every script batch, checking
  // against the graph state only after the real batches start
  std::size_t bootstrap = scripts.size() - batches.size();
  for (std::size_t s = 0; s < scripts.size(); ++s) {
    if (s >= bootstrap) cursor = apply_batch(cursor, batches[s - bootstrap]);
    std::set<VertexId> touched;
    for (const auto& op : scripts[s]) {
      if (op.add) {
        if (matching.count(op.edge.eid)) {
          rep.ok = false;
          rep.detail = "batch " + std::to_string(s) + ": duplicate M+";
          return rep;
        }
        matching.insert(op.edge.eid);
      } else {
        if (!matching.count(op.edge.eid)) {
          rep.ok = false;
          rep.detail = "batch " + std::to_string(s) + ": M- of unmatched edge";
          return rep;
        }
        matching.erase(op.edge.eid);
      }
    }
    (void)touched;
    if (!oracles::oracle_is_matching(cursor, matching)) {
      rep.ok = false;
      rep.detail = "script batch " + std::to_string(s) + ": not a matching";
      return rep;
    }
    if (!oracles::oracle_is_maximal_matching(cursor, matching)) {
      rep.ok = false;
      rep.detail = "script batch " + std::to_string(s) + ": matching not maximal";
      return rep;
    }
  }
  return rep;
}

std::vector<BenchRow> bench_sweep(const ExperimentSpec& base, const std::vector<double>& alphas,
                                  const std::vector<std::size_t>& ns) {
  std::vector<BenchRow> rows;
  std::vector<double> a_list = alphas.empty() ? std::vector<double>{base.alpha} : alphas;
  std::vector<std::size_t> n_list = ns.empty() ? std::vector<std::size_t>{base.n} : ns;
  for (double alpha : a_list)
    for (std::size_t n : n_list) {
      ExperimentSpec spec = base;
      spec.alpha = alpha;
      spec.n = n;
      spec.m = std::min(base.m * n / std::max<std::size_t>(base.n, 1), n * (n - 1) / 2);
      auto w = generate_workload(spec);
      auto r = run_experiment(spec, w.graph, w.batches);
      BenchRow row;
      row.problem = spec.problem;
      row.n = spec.n;
      row.m = w.graph.m();
      row.k = spec.k;
      row.alpha = alpha;
      row.preprocess_rounds = r.metrics.preprocess_rounds;
      std::uint64_t mx = 0, total = 0;
      for (std::uint64_t x : r.metrics.rounds_per_batch) {
        mx = std::max(mx, x);
        total += x;
      }
      row.max_batch_rounds = mx;
      row.mean_batch_rounds = r.metrics.rounds_per_batch.empty()
                                  ? 0.0
                                  : static_cast<double>(total) /
                                        static_cast<double>(r.metrics.rounds_per_batch.size());
      rows.push_back(row);
    }
  return rows;
}

std::string bench_table(const std::vector<BenchRow>& rows) {
  std::ostringstream os;
  os << "problem\tn\tm\tk\talpha\tpreprocess_rounds\tmean_batch_rounds\tmax_batch_rounds\n";
  for (const auto& r : rows) {
    os << r.problem << "\t" << r.n << "\t" << r.m << "\t" << r.k << "\t" << r.alpha << "\t"
       << r.preprocess_rounds << "\t" << r.mean_batch_rounds << "\t" << r.max_batch_rounds
       << "\n";
  }
  return os.str();
}

}  // namespace mpcdyn
