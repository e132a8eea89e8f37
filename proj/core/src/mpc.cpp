#include "mpcdyn/mpc.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace mpcdyn::mpc {

MpcConfig MpcConfig::derive(std::size_t n, double alpha, std::size_t input_words,
                            std::uint64_t seed) {
  MpcConfig cfg;
  cfg.n = n;
  cfg.alpha = alpha;
  cfg.seed = seed;
  std::size_t s_alpha =
      static_cast<std::size_t>(std::ceil(std::pow(static_cast<double>(std::max<std::size_t>(n, 2)), alpha)));
  cfg.words_per_machine = std::max(s_alpha, kFloorWords);
  double need = kTotalMemoryFactor * static_cast<double>(std::max<std::size_t>(input_words, 1));
  cfg.machines = std::max<std::size_t>(
      2, static_cast<std::size_t>(std::ceil(need / static_cast<double>(cfg.words_per_machine))));
  cfg.message_cap = kMessageCapFactor * cfg.words_per_machine;
  cfg.validate();
  return cfg;
}

void MpcConfig::validate() const {
  if (machines == 0 || words_per_machine == 0)
    throw Error(ErrorCode::InvalidSpec, "MpcConfig: machines and words_per_machine must be set");
  if (message_cap == 0) throw Error(ErrorCode::InvalidSpec, "MpcConfig: message_cap must be set");
  if (alpha <= 0.0 || alpha > 1.0)
    throw Error(ErrorCode::InvalidSpec, "MpcConfig: alpha must be in (0,1]");
}

std::string RoundMetrics::report_text() const {
  std::ostringstream os;
  os << "rounds = " << rounds << "\n";
  os << "max_sent = " << max_sent << "\n";
  os << "max_received = " << max_received << "\n";
  os << "peak_words = " << peak_words << "\n";
  os << "violations = " << violations.size() << "\n";
  return os.str();
}

std::size_t MachineCtx::machine_count() const { return cluster_->machines(); }

void MachineCtx::send(std::uint32_t dst, std::vector<Word> payload) {
  outbox_->emplace_back(dst, std::move(payload));
}

std::uint64_t MachineCtx::rng(std::uint64_t tag) const { return cluster_->rng(machine_, tag); }

Cluster::Cluster(MpcConfig cfg) : cfg_(cfg) {
  cfg_.validate();
  scratch_.assign(cfg_.machines, 0);
  round_sent_.assign(cfg_.machines, 0);
  round_received_.assign(cfg_.machines, 0);
  round_local_.assign(cfg_.machines, 0);
  pending_.assign(cfg_.machines, {});
}

void Cluster::register_accountable(Accountable* a) { accountables_.push_back(a); }

void Cluster::unregister_accountable(Accountable* a) {
  accountables_.erase(std::remove(accountables_.begin(), accountables_.end(), a),
                      accountables_.end());
}

void Cluster::add_scratch(std::size_t machine, std::int64_t words) {
  scratch_[machine] += words;
}

void Cluster::begin_round() {
  std::fill(round_sent_.begin(), round_sent_.end(), 0);
  std::fill(round_received_.begin(), round_received_.end(), 0);
  std::fill(round_local_.begin(), round_local_.end(), 0);
  in_round_ = true;
}

void Cluster::note_sent(std::size_t machine, std::uint64_t words) {
  round_sent_[machine] += words;
}

void Cluster::note_received(std::size_t machine, std::uint64_t words) {
  round_received_[machine] += words;
}

void Cluster::charge_local(std::size_t machine, std::uint64_t ops) {
  if (machine < round_local_.size()) round_local_[machine] += ops;
}

void Cluster::end_round() {
  in_round_ = false;
  metrics_.rounds += 1;
  std::uint64_t total_sent = 0, total_recv = 0;
  for (std::size_t i = 0; i < cfg_.machines; ++i) {
    total_sent += round_sent_[i];
    total_recv += round_received_[i];
    metrics_.max_sent = std::max(metrics_.max_sent, round_sent_[i]);
    metrics_.max_received = std::max(metrics_.max_received, round_received_[i]);
    if (round_sent_[i] > cfg_.message_cap || round_received_[i] > cfg_.message_cap) {
      std::uint64_t w = std::max(round_sent_[i], round_received_[i]);
      metrics_.violations.push_back(
          {ViolationKind::MessageCap, metrics_.rounds, static_cast<std::uint32_t>(i), w});
      throw Error(ErrorCode::MessageCapViolation,
                  "machine " + std::to_string(i) + " moved " + std::to_string(w) +
                      " words in one round (cap " + std::to_string(cfg_.message_cap) + ")",
                  static_cast<std::int64_t>(i));
    }
    if (cfg_.local_ops_ceiling != 0 && round_local_[i] > cfg_.local_ops_ceiling) {
      metrics_.violations.push_back(
          {ViolationKind::LocalOps, metrics_.rounds, static_cast<std::uint32_t>(i),
           round_local_[i]});
      throw Error(ErrorCode::PreconditionViolated,
                  "machine " + std::to_string(i) + " exceeded local ops ceiling",
                  static_cast<std::int64_t>(i));
    }
  }
  // Conservation: words sent in a round equal words received.
  if (total_sent != total_recv)
    throw Error(ErrorCode::PreconditionViolated, "round conservation broken");
  memory_barrier();
}

void Cluster::memory_barrier() {
  for (std::size_t i = 0; i < cfg_.machines; ++i) {
    std::uint64_t words = static_cast<std::uint64_t>(std::max<std::int64_t>(scratch_[i], 0));
    for (Accountable* a : accountables_) words += a->resident_words(i);
    metrics_.peak_words = std::max(metrics_.peak_words, words);
    if (words > cfg_.words_per_machine) {
      metrics_.violations.push_back(
          {ViolationKind::Memory, metrics_.rounds, static_cast<std::uint32_t>(i), words});
      throw Error(ErrorCode::MemoryViolation,
                  "machine " + std::to_string(i) + " holds " + std::to_string(words) +
                      " words at barrier (S = " + std::to_string(cfg_.words_per_machine) + ")",
                  static_cast<std::int64_t>(i));
    }
  }
}

void Cluster::run_superstep(const std::function<void(MachineCtx&)>& step) {
  begin_round();
  std::vector<std::vector<RawMsg>> next(cfg_.machines);
  // Machines run in index order; determinism does not depend on it because
  // states are isolated and delivery is canonicalized by (src, seq).
  for (std::size_t i = 0; i < cfg_.machines; ++i) {
    std::vector<std::pair<std::uint32_t, std::vector<Word>>> outbox;
    MachineCtx ctx;
    ctx.cluster_ = this;
    ctx.machine_ = i;
    ctx.inbox_ = &pending_[i];
    ctx.outbox_ = &outbox;
    step(ctx);
    for (auto& [dst, payload] : outbox) {
      if (dst >= cfg_.machines)
        throw Error(ErrorCode::InvalidOp, "message to nonexistent machine");
      std::uint64_t w = payload.size();
      note_sent(i, w);
      note_received(dst, w);
      next[dst].push_back(RawMsg{static_cast<std::uint32_t>(i), std::move(payload)});
    }
  }
  for (auto& inbox : next)
    std::stable_sort(inbox.begin(), inbox.end(),
                     [](const RawMsg& a, const RawMsg& b) { return a.src < b.src; });
  pending_ = std::move(next);
  end_round();
}

}  // namespace mpcdyn::mpc
