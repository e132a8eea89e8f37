#pragma once

// Deterministic simulator of the MPC model: M machines with S words of local
// memory, synchronous rounds of local compute plus message exchange. Word
// budgets are enforced, not estimated: every primitive that moves data does
// so through a counted round.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mpcdyn/graph.hpp"

namespace mpcdyn::mpc {

using Word = std::uint64_t;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

struct MpcConfig {
  std::size_t n = 0;            // problem size the run is parameterized by
  double alpha = 0.5;           // memory exponent; S defaults to ceil(n^alpha)
  std::size_t words_per_machine = 0;  // S; 0 = derive
  std::size_t machines = 0;           // M; 0 = derive
  std::size_t message_cap = 0;        // per machine per round; 0 = c_msg * S
  std::uint64_t seed = 1;
  std::uint64_t local_ops_ceiling = 0;  // 0 = unlimited; catches runaway local work

  // Desk-scale knobs. The floor keeps a top-tree node plus its grandchild
  // summaries inside one machine at small n; total_memory_factor sizes M so
  // scratch (sorts, sketches, top trees) fits next to the input.
  static constexpr std::size_t kFloorWords = 16384;
  static constexpr std::size_t kMessageCapFactor = 4;  // c_msg
  static constexpr double kTotalMemoryFactor = 12.0;   // c_total

  static MpcConfig derive(std::size_t n, double alpha, std::size_t input_words,
                          std::uint64_t seed);

  void validate() const;
};

enum class ViolationKind { Memory, MessageCap, LocalOps };

struct Violation {
  ViolationKind kind;
  std::uint64_t round;
  std::uint32_t machine;
  std::uint64_t words;
};

struct RoundMetrics {
  std::uint64_t rounds = 0;
  std::uint64_t max_sent = 0;      // max words sent by one machine in one round
  std::uint64_t max_received = 0;  // max words received by one machine in one round
  std::uint64_t peak_words = 0;    // peak resident words of any machine at a barrier
  std::vector<Violation> violations;

  std::string report_text() const;
};

class Cluster;

struct RawMsg {
  std::uint32_t src;
  std::vector<Word> payload;
};

// Per-machine view inside run_superstep.
class MachineCtx {
 public:
  std::size_t machine() const { return machine_; }
  std::size_t machine_count() const;
  const std::vector<RawMsg>& inbox() const { return *inbox_; }
  void send(std::uint32_t dst, std::vector<Word> payload);
  std::uint64_t rng(std::uint64_t tag) const;

 private:
  friend class Cluster;
  Cluster* cluster_ = nullptr;
  std::size_t machine_ = 0;
  const std::vector<RawMsg>* inbox_ = nullptr;
  std::vector<std::pair<std::uint32_t, std::vector<Word>>>* outbox_ = nullptr;
};

// Accounting hook implemented by distributed collections.
class Accountable {
 public:
  virtual ~Accountable() = default;
  virtual std::uint64_t resident_words(std::size_t machine) const = 0;
};

class Cluster {
 public:
  explicit Cluster(MpcConfig cfg);

  const MpcConfig& config() const { return cfg_; }
  std::size_t machines() const { return cfg_.machines; }
  std::size_t words_per_machine() const { return cfg_.words_per_machine; }
  std::size_t message_cap() const { return cfg_.message_cap; }

  const RoundMetrics& metrics() const { return metrics_; }
  RoundMetrics& metrics() { return metrics_; }

  // Deterministic per-machine stream; independent of host execution order.
  std::uint64_t rng(std::size_t machine, std::uint64_t tag) const {
    return splitmix64(splitmix64(cfg_.seed ^ (0x7f4a7c15ull + machine)) ^ tag ^
                      (metrics_.rounds << 20));
  }

  // One superstep over raw word payloads: every machine's step runs once on
  // its pending inbox; outboxes are routed and become the next inboxes.
  void run_superstep(const std::function<void(MachineCtx&)>& step);

  // --- primitive-building API (used by the typed primitives in dist.hpp) ---
  void begin_round();
  void note_sent(std::size_t machine, std::uint64_t words);
  void note_received(std::size_t machine, std::uint64_t words);
  void end_round();  // cap checks, memory barrier, rounds++

  void charge_local(std::size_t machine, std::uint64_t ops);

  void register_accountable(Accountable* a);
  void unregister_accountable(Accountable* a);

  // Scratch words a primitive holds on a machine across rounds (counted at
  // barriers like any other resident state).
  void add_scratch(std::size_t machine, std::int64_t words);

 private:
  void memory_barrier();

  MpcConfig cfg_;
  RoundMetrics metrics_;
  std::vector<Accountable*> accountables_;
  std::vector<std::int64_t> scratch_;
  std::vector<std::uint64_t> round_sent_, round_received_, round_local_;
  std::vector<std::vector<RawMsg>> pending_;  // inboxes for run_superstep
  bool in_round_ = false;
};

}  // namespace mpcdyn::mpc
