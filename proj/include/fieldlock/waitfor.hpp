#pragma once

#include <algorithm>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <utility>
#include <vector>

#include "fieldlock/monitor.hpp"

namespace fieldlock {

struct WaitSite {
  InstanceId instance = 0;
  std::size_t field = 0;
  friend bool operator==(const WaitSite&, const WaitSite&) = default;
};

struct WaitForEdge {
  TxnId waiter;
  TxnId holder;
  InstanceId instance;
  std::size_t field;
  friend bool operator==(const WaitForEdge&, const WaitForEdge&) = default;
};

// Cross-instance wait-for graph. Transaction ids double as start order, so the
// youngest transaction of a cycle is the one with the largest id.
class WaitForGraph {
 public:
  struct Waiting {
    WaitSite site;
    Ticket* ticket = nullptr;
    std::vector<TxnId> blockers;
  };

  void set_waiting(TxnId waiter, WaitSite site, std::vector<TxnId> blockers, Ticket* ticket = nullptr) {
    std::lock_guard lock(mu_);
    set_waiting_locked(waiter, site, std::move(blockers), ticket);
  }

  void clear_waiting(TxnId waiter) {
    std::lock_guard lock(mu_);
    waiting_.erase(waiter);
  }

  // Replace everything known about waiters at one field.
  void field_changed(InstanceId instance, std::size_t field, std::span<const WaitInfo> infos) {
    std::lock_guard lock(mu_);
    const WaitSite site{instance, field};
    for (auto it = waiting_.begin(); it != waiting_.end();) {
      bool still = std::any_of(infos.begin(), infos.end(),
                               [&](const WaitInfo& w) { return w.waiter == it->first; });
      it = (it->second.site == site && !still) ? waiting_.erase(it) : std::next(it);
    }
    for (const auto& w : infos) set_waiting_locked(w.waiter, site, w.blockers, w.ticket);
  }

  // New edges appeared since the last detection pass.
  [[nodiscard]] bool dirty() const {
    std::lock_guard lock(mu_);
    return dirty_;
  }

  // Break every cycle by dooming its youngest member; returns the newly
  // doomed transactions. Doomed transactions are ignored by later passes until
  // forgotten or spared.
  std::vector<TxnId> detect_deadlocks() {
    std::lock_guard lock(mu_);
    dirty_ = false;
    std::vector<TxnId> victims;
    while (auto cycle = find_cycle()) {
      TxnId victim = *std::max_element(cycle->begin(), cycle->end());
      doomed_.insert(victim);
      victims.push_back(victim);
    }
    return victims;
  }

  [[nodiscard]] std::optional<Waiting> waiting(TxnId txn) const {
    std::lock_guard lock(mu_);
    auto it = waiting_.find(txn);
    if (it == waiting_.end()) return std::nullopt;
    return it->second;
  }

  // The victim escaped before it could be cancelled.
  void spare(TxnId txn) {
    std::lock_guard lock(mu_);
    doomed_.erase(txn);
  }

  void forget(TxnId txn) {
    std::lock_guard lock(mu_);
    waiting_.erase(txn);
    doomed_.erase(txn);
  }

  [[nodiscard]] std::vector<WaitForEdge> edges() const {
    std::lock_guard lock(mu_);
    std::vector<WaitForEdge> out;
    for (const auto& [waiter, w] : waiting_) {
      for (TxnId holder : w.blockers) out.push_back({waiter, holder, w.site.instance, w.site.field});
    }
    return out;
  }

 private:
  void set_waiting_locked(TxnId waiter, WaitSite site, std::vector<TxnId> blockers, Ticket* ticket) {
    auto it = waiting_.find(waiter);
    if (it == waiting_.end() || !(it->second.site == site)) {
      dirty_ = dirty_ || !blockers.empty();
    } else {
      for (TxnId b : blockers) {
        if (std::find(it->second.blockers.begin(), it->second.blockers.end(), b) ==
            it->second.blockers.end()) {
          dirty_ = true;
        }
      }
    }
    waiting_[waiter] = Waiting{site, ticket, std::move(blockers)};
  }

  // Depth-first search over waiting, non-doomed transactions.
  std::optional<std::vector<TxnId>> find_cycle() const {
    enum class Color { White, Grey, Black };
    std::map<TxnId, Color> color;
    std::vector<TxnId> stack;

    auto live = [&](TxnId t) { return waiting_.count(t) != 0 && doomed_.count(t) == 0; };

    std::optional<std::vector<TxnId>> found;
    auto dfs = [&](auto& self, TxnId t) -> bool {
      color[t] = Color::Grey;
      stack.push_back(t);
      for (TxnId next : waiting_.at(t).blockers) {
        if (!live(next)) continue;
        Color c = color.count(next) ? color[next] : Color::White;
        if (c == Color::Grey) {
          auto start = std::find(stack.begin(), stack.end(), next);
          found = std::vector<TxnId>(start, stack.end());
          return true;
        }
        if (c == Color::White && self(self, next)) return true;
      }
      stack.pop_back();
      color[t] = Color::Black;
      return false;
    };

    for (const auto& [txn, _] : waiting_) {
      if (!live(txn) || color.count(txn)) continue;
      if (dfs(dfs, txn)) return found;
    }
    return std::nullopt;
  }

  mutable std::mutex mu_;
  std::map<TxnId, Waiting> waiting_;
  std::set<TxnId> doomed_;
  bool dirty_ = false;
};

}  // namespace fieldlock
