#include "mpcdyn/io.hpp"

#include <cstdio>
#include <sstream>

#include "json.hpp"

namespace mpcdyn::io {

namespace {

[[noreturn]] void parse_fail(std::size_t line, const std::string& what) {
  throw Error(ErrorCode::ParseError, "line " + std::to_string(line) + ": " + what);
}

struct LineReader {
  std::istream& in;
  std::size_t line_no = 0;
  bool next(std::string& out) {
    if (!std::getline(in, out)) return false;
    ++line_no;
    if (!out.empty() && out.back() == '\r') out.pop_back();
    return true;
  }
};

}  // namespace

std::string format_weight(double w) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", w);
  return buf;
}

GraphSnapshot read_graph(std::istream& in) {
  LineReader r{in};
  std::string line;
  if (!r.next(line)) parse_fail(1, "missing header");
  std::istringstream hs(line);
  std::size_t n = 0, m = 0;
  if (!(hs >> n >> m)) parse_fail(r.line_no, "expected 'n m'");
  GraphSnapshot g(n);
  for (std::size_t i = 0; i < m; ++i) {
    if (!r.next(line)) parse_fail(r.line_no + 1, "unexpected end of file");
    std::istringstream es(line);
    VertexId u, v;
    double w;
    if (!(es >> u >> v >> w)) parse_fail(r.line_no, "expected 'u v w'");
    if (u >= n || v >= n) parse_fail(r.line_no, "vertex id out of range");
    if (u == v) parse_fail(r.line_no, "self loop");
    WeightedEdge e(u, v, w);
    if (!g.edges.emplace(e.eid, e).second) parse_fail(r.line_no, "duplicate edge");
  }
  return g;
}

void write_graph(std::ostream& out, const GraphSnapshot& g) {
  out << g.n << " " << g.m() << "\n";
  auto edges = g.edge_list();
  std::sort(edges.begin(), edges.end(),
            [](const WeightedEdge& a, const WeightedEdge& b) { return a.eid < b.eid; });
  for (const auto& e : edges)
    out << e.u << " " << e.v << " " << format_weight(e.weight) << "\n";
}

std::vector<Batch> read_batches(std::istream& in) {
  LineReader r{in};
  std::vector<Batch> out;
  Batch cur;
  std::string line;
  while (r.next(line)) {
    if (line.empty()) {
      if (!cur.ops.empty()) out.push_back(std::move(cur));
      cur = {};
      continue;
    }
    std::istringstream ls(line);
    std::string op;
    ls >> op;
    if (op == "+") {
      VertexId u, v;
      double w;
      if (!(ls >> u >> v >> w)) parse_fail(r.line_no, "expected '+ u v w'");
      cur.ops.push_back(UpdateOp::insert(u, v, w));
    } else if (op == "-") {
      VertexId u, v;
      if (!(ls >> u >> v)) parse_fail(r.line_no, "expected '- u v'");
      cur.ops.push_back(UpdateOp::remove(u, v));
    } else {
      parse_fail(r.line_no, "unknown op '" + op + "'");
    }
  }
  if (!cur.ops.empty()) out.push_back(std::move(cur));
  return out;
}

void write_batches(std::ostream& out, const std::vector<Batch>& batches) {
  for (std::size_t i = 0; i < batches.size(); ++i) {
    for (const auto& op : batches[i].ops) {
      if (op.kind == OpKind::Insert)
        out << "+ " << op.edge.u << " " << op.edge.v << " " << format_weight(op.edge.weight)
            << "\n";
      else
        out << "- " << op.edge.u << " " << op.edge.v << "\n";
    }
    out << "\n";
  }
}

void write_msf_batch(std::ostream& out, const MsfUpdateScript& script) {
  for (const auto& op : script.ops) {
    if (op.insert)
      out << "F+ " << op.edge.u << " " << op.edge.v << " " << format_weight(op.edge.weight)
          << "\n";
    else
      out << "F- " << op.edge.u << " " << op.edge.v << "\n";
  }
  out << "Y";
  for (std::size_t y : script.prefix) out << " " << y;
  out << "\n\n";
}

std::vector<MsfUpdateScript> read_msf_script(std::istream& in) {
  LineReader r{in};
  std::vector<MsfUpdateScript> out;
  MsfUpdateScript cur;
  bool any = false;
  std::string line;
  while (r.next(line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "F+") {
      VertexId u, v;
      double w;
      if (!(ls >> u >> v >> w)) parse_fail(r.line_no, "expected 'F+ u v w'");
      cur.ops.push_back({true, WeightedEdge(u, v, w)});
      any = true;
    } else if (tag == "F-") {
      VertexId u, v;
      if (!(ls >> u >> v)) parse_fail(r.line_no, "expected 'F- u v'");
      cur.ops.push_back({false, WeightedEdge(u, v, 0.0)});
      any = true;
    } else if (tag == "Y") {
      std::size_t y;
      while (ls >> y) cur.prefix.push_back(y);
      out.push_back(std::move(cur));
      cur = {};
      any = false;
    } else {
      parse_fail(r.line_no, "unknown tag '" + tag + "'");
    }
  }
  if (any) parse_fail(r.line_no, "script batch missing its Y line");
  return out;
}

void write_twoecc_batch(std::ostream& out, const TwoEccBatchRecord& rec) {
  for (EdgeId e : rec.delta.bridges_added)
    out << "B+ " << eid_lo(e) << " " << eid_hi(e) << "\n";
  for (EdgeId e : rec.delta.bridges_removed)
    out << "B- " << eid_lo(e) << " " << eid_hi(e) << "\n";
  for (auto [v, lbl] : rec.labels) {
    out << "L " << v << " ";
    if (lbl == kRootLabel)
      out << "root\n";
    else
      out << lbl << "\n";
  }
  out << "\n";
}

std::vector<TwoEccBatchRecord> read_twoecc_script(std::istream& in) {
  LineReader r{in};
  std::vector<TwoEccBatchRecord> out;
  TwoEccBatchRecord cur;
  bool any = false;
  std::string line;
  while (r.next(line)) {
    if (line.empty()) {
      out.push_back(std::move(cur));
      cur = {};
      any = false;
      continue;
    }
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "B+" || tag == "B-") {
      VertexId u, v;
      if (!(ls >> u >> v)) parse_fail(r.line_no, "expected 'B+ or B- u v'");
      (tag == "B+" ? cur.delta.bridges_added : cur.delta.bridges_removed)
          .push_back(canonical_eid(u, v));
      any = true;
    } else if (tag == "L") {
      VertexId v;
      std::string lbl;
      if (!(ls >> v >> lbl)) parse_fail(r.line_no, "expected 'L v label'");
      if (lbl == "root")
        cur.labels.push_back({v, kRootLabel});
      else
        cur.labels.push_back({v, std::stoull(lbl)});
      any = true;
    } else {
      parse_fail(r.line_no, "unknown tag '" + tag + "'");
    }
  }
  if (any) out.push_back(std::move(cur));
  return out;
}

void write_matching_batch(std::ostream& out, const std::vector<MatchingScriptOp>& script) {
  for (const auto& op : script) {
    out << (op.add ? "M+ " : "M- ") << op.edge.u << " " << op.edge.v << "\n";
  }
  out << "\n";
}

std::vector<std::vector<MatchingScriptOp>> read_matching_script(std::istream& in) {
  LineReader r{in};
  std::vector<std::vector<MatchingScriptOp>> out;
  std::vector<MatchingScriptOp> cur;
  bool any = false;
  std::string line;
  while (r.next(line)) {
    if (line.empty()) {
      out.push_back(std::move(cur));
      cur = {};
      any = false;
      continue;
    }
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    VertexId u, v;
    if (!(ls >> u >> v)) parse_fail(r.line_no, "expected 'M+ or M- u v'");
    if (tag == "M+")
      cur.push_back({true, WeightedEdge(u, v, 0.0)});
    else if (tag == "M-")
      cur.push_back({false, WeightedEdge(u, v, 0.0)});
    else
      parse_fail(r.line_no, "unknown tag '" + tag + "'");
    any = true;
  }
  if (any) out.push_back(std::move(cur));
  return out;
}

std::string metrics_text(const MetricsDoc& doc) {
  std::ostringstream os;
  os << doc.totals.report_text();
  os << "preprocess_rounds = " << doc.preprocess_rounds << "\n";
  return os.str();
}

std::string metrics_json(const MetricsDoc& doc) {
  nlohmann::json j;
  j["rounds"] = doc.totals.rounds;
  j["max_sent"] = doc.totals.max_sent;
  j["max_received"] = doc.totals.max_received;
  j["peak_words"] = doc.totals.peak_words;
  j["violations"] = nlohmann::json::array();
  for (const auto& v : doc.totals.violations) {
    nlohmann::json jv;
    jv["kind"] = v.kind == mpc::ViolationKind::Memory       ? "memory"
                 : v.kind == mpc::ViolationKind::MessageCap ? "message_cap"
                                                            : "local_ops";
    jv["round"] = v.round;
    jv["machine"] = v.machine;
    jv["words"] = v.words;
    j["violations"].push_back(jv);
  }
  j["preprocess_rounds"] = doc.preprocess_rounds;
  j["rounds_per_batch"] = doc.rounds_per_batch;
  return j.dump(2);
}

}  // namespace mpcdyn::io
