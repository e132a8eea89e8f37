#pragma once

// Text formats: graph and update files, per-problem output scripts, and the
// metrics documents. All writers round-trip exactly (weights via %.17g).

#include <iostream>
#include <string>

#include "mpcdyn/graph.hpp"
#include "mpcdyn/matching.hpp"
#include "mpcdyn/mpc.hpp"
#include "mpcdyn/msf.hpp"
#include "mpcdyn/twoecc.hpp"

namespace mpcdyn::io {

std::string format_weight(double w);

// graph file: first line "n m", then m lines "u v w"
GraphSnapshot read_graph(std::istream& in);
void write_graph(std::ostream& out, const GraphSnapshot& g);

// update file: "+ u v w" inserts, "- u v" deletes; blank lines close batches
std::vector<Batch> read_batches(std::istream& in);
void write_batches(std::ostream& out, const std::vector<Batch>& batches);

// msf script: per batch "F+ u v w" / "F- u v" lines followed by
// "Y y1 y2 ... yk"; blank lines close batches
void write_msf_batch(std::ostream& out, const MsfUpdateScript& script);
std::vector<MsfUpdateScript> read_msf_script(std::istream& in);

// 2ecc script: "B+ u v" / "B- u v" bridge delta, then "L v <eid|root>" labels
struct TwoEccBatchRecord {
  TwoEccDelta delta;
  std::vector<std::pair<VertexId, std::uint64_t>> labels;  // kRootLabel for root
};
void write_twoecc_batch(std::ostream& out, const TwoEccBatchRecord& rec);
std::vector<TwoEccBatchRecord> read_twoecc_script(std::istream& in);

// matching script: "M+ u v" / "M- u v" per batch
void write_matching_batch(std::ostream& out, const std::vector<MatchingScriptOp>& script);
std::vector<std::vector<MatchingScriptOp>> read_matching_script(std::istream& in);

// metrics: key = value text plus a JSON document with per-batch rounds
struct MetricsDoc {
  mpc::RoundMetrics totals;
  std::uint64_t preprocess_rounds = 0;
  std::vector<std::uint64_t> rounds_per_batch;
};
std::string metrics_text(const MetricsDoc& doc);
std::string metrics_json(const MetricsDoc& doc);

}  // namespace mpcdyn::io
