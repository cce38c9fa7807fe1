#pragma once

// Per-instance scheduler for strong-commutative accesses.
//
// State per field: the set of reading transactions, an optional writing
// transaction, and a FIFO queue of blocked requests. Three entry points:
//
//   in_control        acquire the request's modes in ascending field order,
//                     blocking per field while the mode is incompatible
//   out_control       after execution, downgrade every field where the
//                     dynamic mode is below the requested one
//   commit_or_reject  at transaction end, release what is left
//
// Holdings belong to transactions. A transaction's mode on a field is the
// maximum claim of its tickets, so a request at or below that mode is granted
// at once, and a Read->Write upgrade waits at the front of the queue until the
// transaction is the only reader.
//
// Wakeups touch one queue entry at a time. A woken reader, when it resumes,
// wakes the next entry if that one is a reader too.
//
// in_control never sleeps: it returns Blocked and the caller either waits()
// (threads) or polls queued() (step scheduler) before calling it again.

#include <algorithm>
#include <array>
#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <mutex>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "fieldlock/core.hpp"
#include "fieldlock/trace.hpp"

namespace fieldlock {

class ProtocolError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

using InstanceId = std::size_t;

enum class TicketPhase : std::uint8_t {
  Idle,       // not yet presented to in_control
  Acquiring,  // inside in_control
  Queued,     // blocked on next_field
  Woken,      // granted next_field while queued; must call in_control again
  Granted,    // holds every requested field
  Finished,   // out_control done
  Cancelled,  // removed from a queue (deadlock victim)
  Released,   // commit_or_reject done
};

// One operation's passage through the monitor.
class Ticket {
 public:
  Ticket(TxnId txn, std::string op, std::uint64_t seq, AccessVector request)
      : txn_(txn), op_(std::move(op)), seq_(seq), request_(std::move(request)), claim_(request_.size()) {}

  Ticket(const Ticket&) = delete;
  Ticket& operator=(const Ticket&) = delete;

  [[nodiscard]] TxnId txn() const noexcept { return txn_; }
  [[nodiscard]] const std::string& op() const noexcept { return op_; }
  [[nodiscard]] std::uint64_t seq() const noexcept { return seq_; }
  [[nodiscard]] const AccessVector& request() const noexcept { return request_; }
  [[nodiscard]] TicketPhase phase() const noexcept { return phase_.load(); }

  // Only stable when the ticket is not queued.
  [[nodiscard]] const AccessVector& claim() const noexcept { return claim_; }

 private:
  friend class InstanceMonitor;

  TxnId txn_;
  std::string op_;
  std::uint64_t seq_;
  AccessVector request_;
  AccessVector claim_;
  std::atomic<TicketPhase> phase_{TicketPhase::Idle};
  std::size_t next_field_ = 0;
  bool cascade_on_resume_ = false;
  std::condition_variable cv_;
};

// A blocked request and the transactions it currently waits for.
struct WaitInfo {
  TxnId waiter = 0;
  Ticket* ticket = nullptr;
  std::vector<TxnId> blockers;
};

class WaitObserver {
 public:
  virtual ~WaitObserver() = default;
  // Called with the monitor's lock held, after every change to `field`.
  virtual void waits_changed(InstanceId instance, std::size_t field, std::span<const WaitInfo> waiting) = 0;
};

struct MonitorStats {
  std::uint64_t entry_calls = 0;   // accepted in_control, out_control, commit_or_reject, cancel calls
  std::uint64_t field_visits = 0;  // per-field iterations of the three entry points
  std::uint64_t invariant_checks = 0;
  std::uint64_t invariant_violations = 0;
  std::uint64_t block_events = 0;
  std::uint64_t early_releases = 0;  // transaction-level mode drops at out_control
};

struct MonitorOptions {
  bool check_invariant = true;
};

class InstanceMonitor {
 public:
  enum class Acquire { Granted, Blocked, Cancelled };

  explicit InstanceMonitor(std::size_t dimension, InstanceId id = 0, std::string name = {},
                           EventSink* sink = nullptr, WaitObserver* observer = nullptr,
                           MonitorOptions options = {})
      : id_(id),
        name_(std::move(name)),
        sink_(sink),
        observer_(observer),
        options_(options),
        fields_(dimension),
        touched_(dimension, false) {
    if (dimension == 0) throw DimensionError("monitor needs at least one field");
  }

  InstanceMonitor(const InstanceMonitor&) = delete;
  InstanceMonitor& operator=(const InstanceMonitor&) = delete;

  [[nodiscard]] std::size_t dimension() const noexcept { return fields_.size(); }
  [[nodiscard]] const std::string& name() const noexcept { return name_; }

  // First call starts acquisition; after a wakeup, a second call resumes it.
  Acquire in_control(Ticket& t) {
    std::lock_guard lock(mu_);
    if (t.request_.size() != fields_.size()) {
      throw DimensionError("request of dimension " + std::to_string(t.request_.size()) +
                           " on a monitor of dimension " + std::to_string(fields_.size()));
    }
    const TicketPhase phase = t.phase();
    if (phase != TicketPhase::Idle && phase != TicketPhase::Woken && phase != TicketPhase::Queued &&
        phase != TicketPhase::Cancelled) {
      throw ProtocolError("in_control on a ticket that already holds its fields");
    }
    ++stats_.entry_calls;
    if (phase == TicketPhase::Queued || phase == TicketPhase::Cancelled) {
      finish_entry();
      return phase == TicketPhase::Queued ? Acquire::Blocked : Acquire::Cancelled;
    }
    if (phase == TicketPhase::Idle) {
      t.next_field_ = 0;
    } else if (t.cascade_on_resume_) {
      t.cascade_on_resume_ = false;
      unblock_reader(t.next_field_ - 1);
    }
    t.phase_ = TicketPhase::Acquiring;

    for (std::size_t i = t.next_field_; i < fields_.size(); ++i) {
      ++stats_.field_visits;
      t.next_field_ = i;
      const AccessMode want = t.request_[i];
      if (want == AccessMode::Null) continue;
      emit(t, EventKind::Request, i, want);
      FieldState& f = fields_[i];
      const AccessMode held = effective(t.txn_, i);

      if (mode_leq(want, held)) {
        add_claim(t, i, want);
        emit(t, EventKind::Grant, i, want);
        continue;
      }
      if (want == AccessMode::Read) {
        if (f.writer || !f.queue.empty()) {
          block(t, i, Waiter{&t, AccessMode::Read, false}, false);
          return Acquire::Blocked;
        }
        f.readers.push_back(t.txn_);
      } else if (held == AccessMode::Read) {
        if (f.writer || f.readers.size() != 1) {
          block(t, i, Waiter{&t, AccessMode::Write, true}, true);
          return Acquire::Blocked;
        }
        f.readers.clear();
        f.writer = t.txn_;
      } else {
        if (f.writer || !f.readers.empty() || !f.queue.empty()) {
          block(t, i, Waiter{&t, AccessMode::Write, false}, false);
          return Acquire::Blocked;
        }
        f.writer = t.txn_;
      }
      add_claim(t, i, want);
      touched_[i] = true;
      emit(t, EventKind::Grant, i, want);
    }
    t.next_field_ = fields_.size();
    t.phase_ = TicketPhase::Granted;
    finish_entry();
    return Acquire::Granted;
  }

  // Sleeps until the ticket leaves its queue (granted or cancelled).
  void wait(Ticket& t) {
    std::unique_lock lock(mu_);
    t.cv_.wait(lock, [&] { return t.phase() != TicketPhase::Queued; });
  }

  // in_control + wait until done.
  Acquire acquire(Ticket& t) {
    for (;;) {
      Acquire r = in_control(t);
      if (r != Acquire::Blocked) return r;
      wait(t);
    }
  }

  [[nodiscard]] bool queued(const Ticket& t) const {
    std::lock_guard lock(mu_);
    return t.phase() == TicketPhase::Queued;
  }

  void out_control(Ticket& t, const AccessVector& dynamic) {
    std::lock_guard lock(mu_);
    if (t.phase() != TicketPhase::Granted) throw ProtocolError("out_control before in_control completed");
    if (dynamic.size() != fields_.size()) throw DimensionError("dynamic vector has the wrong dimension");
    if (!vector_leq(dynamic, t.request_)) {
      throw ProtocolError("dynamic vector " + dynamic.to_string() + " exceeds request " +
                          t.request_.to_string());
    }
    ++stats_.entry_calls;
    for (std::size_t k = fields_.size(); k-- > 0;) {
      ++stats_.field_visits;
      const AccessMode s = t.request_[k];
      const AccessMode d = dynamic[k];
      if ((s == AccessMode::Read && d == AccessMode::Null) ||
          (s == AccessMode::Write && d != AccessMode::Write)) {
        emit(t, EventKind::Downgrade, k, d);
        if (lower_claim(t, k, d)) ++stats_.early_releases;
      }
    }
    t.phase_ = TicketPhase::Finished;
    finish_entry();
  }

  void commit_or_reject(Ticket& t) {
    std::lock_guard lock(mu_);
    switch (t.phase()) {
      case TicketPhase::Granted:
      case TicketPhase::Finished:
      case TicketPhase::Cancelled: break;
      case TicketPhase::Released: throw ProtocolError("double release of " + t.op_);
      default: throw ProtocolError("commit_or_reject while " + t.op_ + " is still acquiring");
    }
    ++stats_.entry_calls;
    for (std::size_t k = fields_.size(); k-- > 0;) {
      ++stats_.field_visits;
      if (t.claim_[k] == AccessMode::Null) continue;
      emit(t, EventKind::Release, k, t.claim_[k]);
      lower_claim(t, k, AccessMode::Null);
    }
    t.phase_ = TicketPhase::Released;
    finish_entry();
  }

  // Withdraw a queued request. Fields acquired before it stay claimed until
  // commit_or_reject. Returns false if the ticket was not queued.
  bool cancel(Ticket& t) {
    std::lock_guard lock(mu_);
    ++stats_.entry_calls;
    if (t.phase() != TicketPhase::Queued) {
      finish_entry();
      return false;
    }
    const std::size_t i = t.next_field_;
    auto& q = fields_[i].queue;
    q.erase(std::find_if(q.begin(), q.end(), [&](const Waiter& w) { return w.ticket == &t; }));
    t.phase_ = TicketPhase::Cancelled;
    touched_[i] = true;
    pump(i);
    finish_entry();
    t.cv_.notify_all();
    return true;
  }

  // rcv/wcv over transaction-level holdings.
  [[nodiscard]] ControlVectors control_vectors() const {
    std::lock_guard lock(mu_);
    return control_vectors_locked();
  }

  [[nodiscard]] std::vector<std::pair<TxnId, AccessMode>> queue_snapshot(std::size_t field) const {
    std::lock_guard lock(mu_);
    std::vector<std::pair<TxnId, AccessMode>> out;
    for (const auto& w : fields_.at(field).queue) out.emplace_back(w.ticket->txn_, w.mode);
    return out;
  }

  [[nodiscard]] MonitorStats stats() const {
    std::lock_guard lock(mu_);
    return stats_;
  }

 private:
  struct Waiter {
    Ticket* ticket;
    AccessMode mode;
    bool upgrade;
  };

  struct FieldState {
    std::vector<TxnId> readers;
    std::optional<TxnId> writer;
    std::deque<Waiter> queue;
  };

  // Per transaction, per field: number of tickets claiming Read and Write.
  using ClaimCounts = std::vector<std::array<std::uint32_t, 2>>;

  [[nodiscard]] AccessMode effective(TxnId txn, std::size_t i) const {
    auto it = claims_.find(txn);
    if (it == claims_.end()) return AccessMode::Null;
    const auto& c = it->second[i];
    if (c[1] != 0) return AccessMode::Write;
    if (c[0] != 0) return AccessMode::Read;
    return AccessMode::Null;
  }

  void add_claim(Ticket& t, std::size_t i, AccessMode m) {
    auto& counts = claims_.try_emplace(t.txn_, ClaimCounts(fields_.size(), {0, 0})).first->second;
    if (t.claim_[i] != AccessMode::Null) --counts[i][t.claim_[i] == AccessMode::Write ? 1 : 0];
    ++counts[i][m == AccessMode::Write ? 1 : 0];
    t.claim_[i] = m;
  }

  // Lower one ticket's claim and apply the resulting change of the
  // transaction's mode. Returns true when that mode dropped.
  bool lower_claim(Ticket& t, std::size_t i, AccessMode to) {
    const AccessMode from_claim = t.claim_[i];
    if (to == from_claim) return false;
    const AccessMode before = effective(t.txn_, i);
    auto& counts = claims_.at(t.txn_);
    --counts[i][from_claim == AccessMode::Write ? 1 : 0];
    if (to != AccessMode::Null) ++counts[i][to == AccessMode::Write ? 1 : 0];
    t.claim_[i] = to;
    const AccessMode after = effective(t.txn_, i);
    touched_[i] = true;
    if (after == before) return false;

    FieldState& f = fields_[i];
    if (before == AccessMode::Write) {
      f.writer.reset();
      if (after == AccessMode::Read) {
        f.readers.assign(1, t.txn_);
        unblock_reader(i);
      } else {
        unblock_any(i);
      }
    } else {
      f.readers.erase(std::find(f.readers.begin(), f.readers.end(), t.txn_));
      if (f.readers.empty()) unblock_any(i);
      else try_upgrade(i);
    }
    return true;
  }

  void block(Ticket& t, std::size_t i, Waiter w, bool front) {
    auto& q = fields_[i].queue;
    if (front) {
      auto pos = std::find_if(q.begin(), q.end(), [](const Waiter& x) { return !x.upgrade; });
      q.insert(pos, w);
    } else {
      q.push_back(w);
    }
    t.phase_ = TicketPhase::Queued;
    ++stats_.block_events;
    touched_[i] = true;
    emit(t, EventKind::Block, i, w.mode);
    finish_entry();
  }

  void grant_waiter(std::size_t i) {
    FieldState& f = fields_[i];
    Waiter w = f.queue.front();
    f.queue.pop_front();
    Ticket& t = *w.ticket;
    if (w.mode == AccessMode::Read) {
      f.readers.push_back(t.txn_);
    } else {
      if (w.upgrade) f.readers.clear();
      f.writer = t.txn_;
    }
    add_claim(t, i, w.mode);
    emit(t, EventKind::Grant, i, w.mode);
    t.next_field_ = i + 1;
    t.cascade_on_resume_ = w.mode == AccessMode::Read;
    t.phase_ = TicketPhase::Woken;
    touched_[i] = true;
    t.cv_.notify_all();
  }

  // Field just became free: wake the head, whatever it is.
  void unblock_any(std::size_t i) {
    if (!fields_[i].queue.empty()) grant_waiter(i);
  }

  // Field is read-held: wake the head only if it is a reader.
  void unblock_reader(std::size_t i) {
    const auto& q = fields_[i].queue;
    if (!q.empty() && q.front().mode == AccessMode::Read) grant_waiter(i);
  }

  // A queued upgrade proceeds once its transaction is the last reader.
  void try_upgrade(std::size_t i) {
    const FieldState& f = fields_[i];
    if (f.queue.empty() || !f.queue.front().upgrade || f.writer) return;
    if (f.readers.size() == 1 && f.readers.front() == f.queue.front().ticket->txn_) grant_waiter(i);
  }

  // After a cancellation the new head may be grantable.
  void pump(std::size_t i) {
    const FieldState& f = fields_[i];
    if (f.queue.empty() || f.writer) return;
    const Waiter& head = f.queue.front();
    if (head.upgrade) try_upgrade(i);
    else if (head.mode == AccessMode::Read) grant_waiter(i);
    else if (f.readers.empty()) grant_waiter(i);
  }

  void emit(const Ticket& t, EventKind kind, std::size_t i, AccessMode m) {
    if (sink_ == nullptr) return;
    TraceEvent e;
    e.txn = t.txn_;
    e.op = t.op_;
    e.op_seq = t.seq_;
    e.instance = name_;
    e.kind = kind;
    e.field = i + 1;
    e.mode = m;
    sink_->emit(std::move(e));
  }

  [[nodiscard]] ControlVectors control_vectors_locked() const {
    ControlVectors cv{std::vector<std::uint64_t>(fields_.size(), 0),
                      std::vector<std::uint64_t>(fields_.size(), 0)};
    for (const auto& [txn, counts] : claims_) {
      for (std::size_t i = 0; i < fields_.size(); ++i) {
        if (counts[i][1] != 0) ++cv.wcv[i];
        else if (counts[i][0] != 0) ++cv.rcv[i];
      }
    }
    return cv;
  }

  // The granted bag must satisfy the reader/writer exclusion, and the field
  // state must agree with the transactions' claims.
  void check_invariant() {
    ++stats_.invariant_checks;
    ControlVectors cv = control_vectors_locked();
    bool ok = control_invariant_holds(cv);
    for (std::size_t i = 0; ok && i < fields_.size(); ++i) {
      const FieldState& f = fields_[i];
      ok = cv.rcv[i] == f.readers.size() && cv.wcv[i] == (f.writer ? 1u : 0u) &&
           !(f.writer && !f.readers.empty());
    }
    if (!ok) ++stats_.invariant_violations;
  }

  void finish_entry() {
    for (auto it = claims_.begin(); it != claims_.end();) {
      bool empty = std::all_of(it->second.begin(), it->second.end(),
                               [](const auto& c) { return c[0] == 0 && c[1] == 0; });
      it = empty ? claims_.erase(it) : std::next(it);
    }
    if (options_.check_invariant) check_invariant();
    if (observer_ != nullptr) {
      for (std::size_t i = 0; i < fields_.size(); ++i) {
        if (touched_[i]) observer_->waits_changed(id_, i, wait_infos(i));
      }
    }
    std::fill(touched_.begin(), touched_.end(), false);
  }

  // Waiters wait for incompatible holders and for incompatible requests
  // queued ahead of them.
  [[nodiscard]] std::vector<WaitInfo> wait_infos(std::size_t i) const {
    const FieldState& f = fields_[i];
    std::vector<WaitInfo> out;
    for (std::size_t k = 0; k < f.queue.size(); ++k) {
      const Waiter& w = f.queue[k];
      WaitInfo info{w.ticket->txn_, w.ticket, {}};
      auto add = [&](TxnId other) {
        if (other != info.waiter &&
            std::find(info.blockers.begin(), info.blockers.end(), other) == info.blockers.end()) {
          info.blockers.push_back(other);
        }
      };
      if (f.writer) add(*f.writer);
      if (w.mode == AccessMode::Write) {
        for (TxnId r : f.readers) add(r);
      }
      for (std::size_t j = 0; j < k; ++j) {
        if (!compatible(f.queue[j].mode, w.mode)) add(f.queue[j].ticket->txn_);
      }
      out.push_back(std::move(info));
    }
    return out;
  }

  InstanceId id_;
  std::string name_;
  EventSink* sink_;
  WaitObserver* observer_;
  MonitorOptions options_;

  mutable std::mutex mu_;
  std::vector<FieldState> fields_;
  std::unordered_map<TxnId, ClaimCounts> claims_;
  std::vector<bool> touched_;
  MonitorStats stats_;
};

}  // namespace fieldlock
