#pragma once

// Workload generation, experiment execution, verification, and the round
// benchmark sweeps behind the command-line tool.

#include <optional>

#include "mpcdyn/io.hpp"

namespace mpcdyn {

struct ExperimentSpec {
  std::string problem = "msf";  // msf | 2ecc | mm
  std::size_t n = 256;
  std::size_t m = 512;
  double alpha = 0.5;
  std::size_t k = 16;
  std::size_t batches = 10;
  std::uint64_t seed = 1;
  std::string generator = "gnm";  // gnm | path | star | cycle-pair | adversarial-delete

  void validate() const;  // InvalidSpec on nonsense
};

struct Workload {
  GraphSnapshot graph;
  std::vector<Batch> batches;
};

// deterministic in (spec, seed)
Workload generate_workload(const ExperimentSpec& spec);

struct RunResult {
  std::string problem;
  io::MetricsDoc metrics;
  // exactly one of these is populated, matching the problem
  std::vector<MsfUpdateScript> msf_scripts;
  std::vector<io::TwoEccBatchRecord> twoecc_scripts;
  std::vector<std::vector<MatchingScriptOp>> matching_scripts;
};

RunResult run_experiment(const ExperimentSpec& spec, const GraphSnapshot& graph,
                         const std::vector<Batch>& batches);

struct VerifyReport {
  bool ok = true;
  std::string detail;  // names the batch and prefix index on mismatch
};

VerifyReport verify_msf(const GraphSnapshot& graph, const std::vector<Batch>& batches,
                        const std::vector<MsfUpdateScript>& scripts);
VerifyReport verify_twoecc(const GraphSnapshot& graph, const std::vector<Batch>& batches,
                           const std::vector<io::TwoEccBatchRecord>& scripts);
VerifyReport verify_matching(const GraphSnapshot& graph, const std::vector<Batch>& batches,
                             const std::vector<std::vector<MatchingScriptOp>>& scripts);

struct BenchRow {
  std::string problem;
  std::size_t n, m, k;
  double alpha;
  std::uint64_t preprocess_rounds;
  double mean_batch_rounds;
  std::uint64_t max_batch_rounds;
};

// one row per (alpha, n) pair in the sweep
std::vector<BenchRow> bench_sweep(const ExperimentSpec& base, const std::vector<double>& alphas,
                                  const std::vector<std::size_t>& ns);
std::string bench_table(const std::vector<BenchRow>& rows);

}  // namespace mpcdyn
