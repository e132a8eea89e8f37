// Command-line driver: workload generation, experiment execution with round
// accounting, script verification against brute-force oracles, and round
// benchmark sweeps.
//
// Exit codes: 0 pass, 1 verification failure, 2 usage or parse error,
// 3 internal budget violation (memory or message caps).

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "mpcdyn/experiment.hpp"

namespace fs = std::filesystem;
using namespace mpcdyn;

namespace {

int exit_code_for(const Error& e) {
  switch (e.code()) {
    case ErrorCode::MemoryViolation:
    case ErrorCode::MessageCapViolation:
      return 3;
    case ErrorCode::InvalidSpec:
    case ErrorCode::ParseError:
      return 2;
    default:
      return 1;
  }
}

GraphSnapshot load_graph(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::ParseError, "cannot open graph file " + path);
  return io::read_graph(in);
}

std::vector<Batch> load_batches(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::ParseError, "cannot open update file " + path);
  return io::read_batches(in);
}

void add_spec_flags(CLI::App* cmd, ExperimentSpec& spec) {
  cmd->add_option("--problem", spec.problem, "msf | 2ecc | mm");
  cmd->add_option("--n", spec.n, "vertex count");
  cmd->add_option("--m", spec.m, "edge count (gnm generator)");
  cmd->add_option("--alpha", spec.alpha, "memory exponent in (0,1]");
  cmd->add_option("--k", spec.k, "updates per batch");
  cmd->add_option("--batches", spec.batches, "batch count");
  cmd->add_option("--seed", spec.seed, "RNG seed");
  cmd->add_option("--generator", spec.generator,
                  "gnm | path | star | cycle-pair | adversarial-delete");
}

int cmd_gen(const ExperimentSpec& spec, const std::string& out_dir) {
  auto w = generate_workload(spec);
  fs::create_directories(out_dir);
  {
    std::ofstream g(fs::path(out_dir) / "graph.txt");
    io::write_graph(g, w.graph);
  }
  {
    std::ofstream u(fs::path(out_dir) / "updates.txt");
    io::write_batches(u, w.batches);
  }
  std::cout << "wrote " << out_dir << "/graph.txt (" << w.graph.n << " vertices, "
            << w.graph.m() << " edges) and updates.txt (" << w.batches.size() << " batches)\n";
  return 0;
}

int cmd_run(const ExperimentSpec& spec, const std::string& graph_path,
            const std::string& updates_path, const std::string& out_dir) {
  GraphSnapshot graph;
  std::vector<Batch> batches;
  if (!graph_path.empty()) {
    graph = load_graph(graph_path);
    batches = load_batches(updates_path);
  } else {
    auto w = generate_workload(spec);
    graph = std::move(w.graph);
    batches = std::move(w.batches);
  }
  auto result = run_experiment(spec, graph, batches);
  fs::create_directories(out_dir);
  {
    std::ofstream s(fs::path(out_dir) / "script.txt");
    for (const auto& sc : result.msf_scripts) io::write_msf_batch(s, sc);
    for (const auto& sc : result.twoecc_scripts) io::write_twoecc_batch(s, sc);
    for (const auto& sc : result.matching_scripts) io::write_matching_batch(s, sc);
  }
  {
    std::ofstream t(fs::path(out_dir) / "metrics.txt");
    t << io::metrics_text(result.metrics);
  }
  {
    std::ofstream j(fs::path(out_dir) / "metrics.json");
    j << io::metrics_json(result.metrics) << "\n";
  }
  std::cout << io::metrics_text(result.metrics);
  return 0;
}

int cmd_verify(const std::string& problem, const std::string& graph_path,
               const std::string& updates_path, const std::string& scripts_path) {
  auto graph = load_graph(graph_path);
  auto batches = load_batches(updates_path);
  std::ifstream sin(scripts_path);
  if (!sin) throw Error(ErrorCode::ParseError, "cannot open script file " + scripts_path);

  VerifyReport rep;
  if (problem == "msf") {
    rep = verify_msf(graph, batches, io::read_msf_script(sin));
  } else if (problem == "2ecc") {
    rep = verify_twoecc(graph, batches, io::read_twoecc_script(sin));
  } else if (problem == "mm") {
    rep = verify_matching(graph, batches, io::read_matching_script(sin));
  } else {
    throw Error(ErrorCode::InvalidSpec, "unknown problem '" + problem + "'");
  }
  if (rep.ok) {
    std::cout << "verify: pass\n";
    return 0;
  }
  std::cout << "verify: FAIL (" << rep.detail << ")\n";
  return 1;
}

int cmd_bench(const ExperimentSpec& spec, const std::string& alphas_arg,
              const std::string& ns_arg, const std::string& out_path) {
  std::vector<double> alphas;
  std::vector<std::size_t> ns;
  {
    std::stringstream ss(alphas_arg);
    std::string tok;
    while (std::getline(ss, tok, ','))
      if (!tok.empty()) alphas.push_back(std::stod(tok));
  }
  {
    std::stringstream ss(ns_arg);
    std::string tok;
    while (std::getline(ss, tok, ','))
      if (!tok.empty()) ns.push_back(std::stoull(tok));
  }
  auto rows = bench_sweep(spec, alphas, ns);
  std::string table = bench_table(rows);
  if (out_path.empty()) {
    std::cout << table;
  } else {
    std::ofstream out(out_path);
    out << table;
    std::cout << "wrote " << out_path << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"simulated-MPC batch-dynamic graph algorithms"};
  app.require_subcommand(1);

  ExperimentSpec spec;
  std::string out_dir = "out";
  std::string graph_path, updates_path, scripts_path;
  std::string alphas_arg, ns_arg, bench_out;

  auto* gen = app.add_subcommand("gen", "generate a graph and update workload");
  add_spec_flags(gen, spec);
  gen->add_option("--out", out_dir, "output directory");

  auto* run = app.add_subcommand("run", "run an experiment, write scripts and metrics");
  add_spec_flags(run, spec);
  run->add_option("--out", out_dir, "output directory");
  run->add_option("--graph", graph_path, "graph file (generate from flags when absent)");
  run->add_option("--updates", updates_path, "update file");

  auto* verify = app.add_subcommand("verify", "replay scripts against the oracles");
  verify->add_option("--problem", spec.problem, "msf | 2ecc | mm");
  verify->add_option("--graph", graph_path, "graph file")->required();
  verify->add_option("--updates", updates_path, "update file")->required();
  verify->add_option("--scripts", scripts_path, "script file")->required();

  auto* bench = app.add_subcommand("bench", "rounds-vs-alpha and rounds-vs-n sweeps");
  add_spec_flags(bench, spec);
  bench->add_option("--alphas", alphas_arg, "comma-separated alpha list");
  bench->add_option("--ns", ns_arg, "comma-separated n list");
  bench->add_option("--out", bench_out, "output table path (stdout when absent)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed()) return cmd_gen(spec, out_dir);
    if (run->parsed()) return cmd_run(spec, graph_path, updates_path, out_dir);
    if (verify->parsed()) return cmd_verify(spec.problem, graph_path, updates_path, scripts_path);
    if (bench->parsed()) return cmd_bench(spec, alphas_arg, ns_arg, bench_out);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 2;
}
