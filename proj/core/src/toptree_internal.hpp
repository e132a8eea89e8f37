#pragma once

// Internal to the top-tree translation units.

#include <algorithm>
#include <unordered_map>

#include "mpcdyn/toptree.hpp"

namespace mpcdyn {

// ---------------------------------------------------------------------------
// node store
// ---------------------------------------------------------------------------

class TopForest::NodeStore : public mpc::Accountable {
 public:
  explicit NodeStore(mpc::Cluster& c) : c_(&c), parts_(c.machines()), words_(c.machines(), 0) {
    c_->register_accountable(this);
  }
  ~NodeStore() override { c_->unregister_accountable(this); }

  std::uint32_t owner(std::uint64_t id) const { return mpc::owner_of(id, parts_.size()); }
  TopNode* find(std::uint64_t id) {
    auto& p = parts_[owner(id)];
    auto it = p.find(id);
    return it == p.end() ? nullptr : &it->second.node;
  }
  const TopNode* find(std::uint64_t id) const {
    const auto& p = parts_[owner(id)];
    auto it = p.find(id);
    return it == p.end() ? nullptr : &it->second.node;
  }
  void put(TopNode n) {
    std::size_t m = owner(n.id);
    auto& p = parts_[m];
    std::uint64_t w = n.resident_words();
    auto it = p.find(n.id);
    if (it == p.end()) {
      words_[m] += w;
      std::uint64_t id = n.id;
      p.emplace(id, Slot{std::move(n), w});
    } else {
      words_[m] += w - it->second.words;
      it->second.node = std::move(n);
      it->second.words = w;
    }
  }
  void erase(std::uint64_t id) {
    std::size_t m = owner(id);
    auto& p = parts_[m];
    auto it = p.find(id);
    if (it == p.end()) return;
    words_[m] -= it->second.words;
    p.erase(it);
  }
  void touch(std::uint64_t id) {
    std::size_t m = owner(id);
    auto it = parts_[m].find(id);
    if (it == parts_[m].end()) return;
    std::uint64_t w = it->second.node.resident_words();
    words_[m] += w - it->second.words;
    it->second.words = w;
  }
  std::uint64_t resident_words(std::size_t m) const override { return words_[m]; }

  template <class Pred>
  std::vector<std::vector<std::uint64_t>> scan_ids(Pred pred) const {
    std::vector<std::vector<std::uint64_t>> out(parts_.size());
    for (std::size_t m = 0; m < parts_.size(); ++m) {
      for (const auto& [id, slot] : parts_[m])
        if (pred(slot.node)) out[m].push_back(id);
      std::sort(out[m].begin(), out[m].end());
    }
    return out;
  }

  template <class Fn>
  void for_each_host(Fn fn) const {
    for (const auto& p : parts_)
      for (const auto& [id, slot] : p) fn(slot.node);
  }

 private:
  struct Slot {
    TopNode node;
    std::uint64_t words;
  };
  mpc::Cluster* c_;
  std::vector<std::unordered_map<std::uint64_t, Slot>> parts_;
  std::vector<std::uint64_t> words_;
};


}  // namespace mpcdyn
