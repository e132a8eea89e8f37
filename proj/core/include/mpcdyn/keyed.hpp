#pragma once

// Hash-owned key/value store distributed over the cluster, with batched
// probe/update passes. Owners are stable under a fixed machine count.

#include <unordered_map>

#include "mpcdyn/dist.hpp"

namespace mpcdyn::mpc {

template <class V>
class KeyedDist : public Accountable {
 public:
  explicit KeyedDist(Cluster& c) : cluster_(&c), parts_(c.machines()), words_(c.machines(), 0) {
    cluster_->register_accountable(this);
  }
  ~KeyedDist() override { cluster_->unregister_accountable(this); }
  KeyedDist(const KeyedDist&) = delete;
  KeyedDist& operator=(const KeyedDist&) = delete;

  std::uint32_t owner(std::uint64_t key) const { return owner_of(key, parts_.size()); }

  // local mutators: valid only on the owner machine of `key`
  void put(std::uint64_t key, V v) {
    auto& p = parts_[owner(key)];
    auto it = p.find(key);
    std::uint64_t neww = value_words(v) + 1;
    if (it == p.end()) {
      words_[owner(key)] += neww;
      p.emplace(key, std::move(v));
    } else {
      words_[owner(key)] += neww - (value_words(it->second) + 1);
      it->second = std::move(v);
    }
  }
  void erase(std::uint64_t key) {
    auto& p = parts_[owner(key)];
    auto it = p.find(key);
    if (it == p.end()) return;
    words_[owner(key)] -= value_words(it->second) + 1;
    p.erase(it);
  }
  V* find(std::uint64_t key) {
    auto& p = parts_[owner(key)];
    auto it = p.find(key);
    return it == p.end() ? nullptr : &it->second;
  }
  const V* find(std::uint64_t key) const {
    const auto& p = parts_[owner(key)];
    auto it = p.find(key);
    return it == p.end() ? nullptr : &it->second;
  }
  // declare in-place mutation of a value obtained via find()
  void touch(std::uint64_t key) {
    auto& p = parts_[owner(key)];
    auto it = p.find(key);
    if (it != p.end()) refresh_words(key, it->second);
  }

  std::uint64_t resident_words(std::size_t m) const override { return words_[m]; }

  void clear() {
    for (auto& p : parts_) p.clear();
    std::fill(words_.begin(), words_.end(), 0);
  }

  const std::unordered_map<std::uint64_t, V>& local(std::size_t m) const { return parts_[m]; }

  std::size_t total_size() const {
    std::size_t s = 0;
    for (const auto& p : parts_) s += p.size();
    return s;
  }

  template <class Fn>
  void for_each_host(Fn fn) const {
    for (const auto& p : parts_)
      for (const auto& [k, v] : p) fn(k, v);
  }

  Cluster& cluster() { return *cluster_; }

 private:
  static std::uint64_t value_words(const V& v) { return words_of(v); }
  void refresh_words(std::uint64_t key, const V&) {
    // recompute the whole machine lazily: values with variable size are rare
    std::size_t m = owner(key);
    std::uint64_t w = 0;
    for (const auto& [k, v] : parts_[m]) w += value_words(v) + 1;
    words_[m] = w;
  }

  Cluster* cluster_;
  std::vector<std::unordered_map<std::uint64_t, V>> parts_;
  std::vector<std::uint64_t> words_;
};

// Batched point lookups: each request (key, tag) is answered at the key's
// owner by `answer(key, found_value_or_null)` and returned to the asking
// machine. Two rounds.
template <class V, class R>
std::vector<std::vector<R>> keyed_probe(
    Cluster& c, KeyedDist<V>& kd,
    const std::vector<std::vector<std::pair<std::uint64_t, std::uint64_t>>>& reqs,
    const std::function<R(std::uint64_t key, std::uint64_t tag, const V*)>& answer) {
  struct Q {
    std::uint64_t key, tag;
  };
  auto outs = make_outs<Q>(c);
  for (std::size_t m = 0; m < c.machines(); ++m)
    for (auto [key, tag] : reqs[m]) outs[m].push_back({kd.owner(key), Q{key, tag}});
  auto in = exchange(c, std::move(outs));
  auto back = make_outs<R>(c);
  for (std::size_t m = 0; m < c.machines(); ++m)
    for (const auto& env : in[m])
      back[m].push_back({env.src, answer(env.value.key, env.value.tag, kd.find(env.value.key))});
  auto rin = exchange(c, std::move(back));
  std::vector<std::vector<R>> out(c.machines());
  for (std::size_t m = 0; m < c.machines(); ++m) {
    out[m].reserve(rin[m].size());
    for (auto& env : rin[m]) out[m].push_back(std::move(env.value));
  }
  return out;
}

}  // namespace mpcdyn::mpc
