#pragma once

// Transaction manager: strict two-phase locking over instance monitors.
//
// Each operation goes through in_control, execution, and out_control. Commit
// or reject then calls commit_or_reject for every operation in reverse order.
// Rejects first restore before-images (newest first) without touching any
// monitor, then release.
//
// Deadlocks across instances are found on the wait-for graph whenever new
// wait edges appear; the youngest transaction of each cycle is rejected.
//
// Two ways to drive it:
//   - run_operation(): blocks the calling thread while waiting;
//   - start_operation() / acquire() / execute() / finish(): one step at a
//     time, for a deterministic single-threaded scheduler.

#include <atomic>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "fieldlock/core.hpp"
#include "fieldlock/dsl.hpp"
#include "fieldlock/interp.hpp"
#include "fieldlock/monitor.hpp"
#include "fieldlock/trace.hpp"
#include "fieldlock/waitfor.hpp"

namespace fieldlock {

// How operations are presented to the monitors.
enum class SchedulerMode {
  Compat,     // whole-object readers/writers (dimension-1 vectors)
  StaticAv,   // per-field static vectors, no downgrading
  DynamicAv,  // per-field static vectors, downgraded at out_control
};

[[nodiscard]] inline std::string_view mode_name(SchedulerMode m) noexcept {
  switch (m) {
    case SchedulerMode::Compat: return "compat";
    case SchedulerMode::StaticAv: return "static-av";
    case SchedulerMode::DynamicAv: return "dynamic-av";
  }
  return "?";
}

[[nodiscard]] inline std::optional<SchedulerMode> parse_mode(std::string_view s) {
  if (s == "compat") return SchedulerMode::Compat;
  if (s == "static-av") return SchedulerMode::StaticAv;
  if (s == "dynamic-av") return SchedulerMode::DynamicAv;
  return std::nullopt;
}

enum class TxnStatus { Active, Committed, Rejected };

enum class AbortReason { None, Deadlock, Fault, Requested };

struct LogRecord {
  TxnId txn = 0;
  std::string txn_name;
  std::string instance;
  std::string op;
  std::map<std::size_t, Value> before_image;
  AccessVector dynamic;
};

// `LOG <txn> <instance> <op> <field>=<old-value> ...`
[[nodiscard]] inline std::string format_log_record(const LogRecord& rec, const AdtSchema& schema) {
  std::string out = "LOG " + rec.txn_name + " " + rec.instance + " " + rec.op;
  for (const auto& [field, value] : rec.before_image) {
    out += " " + schema.fields.at(field).name + "=" + format_value(value);
  }
  return out;
}

class Transaction;

class Operation {
 public:
  Operation(Transaction& txn, InstanceId instance, const OperationDef& def, std::vector<Value> args,
            std::uint64_t seq, AccessVector request, TxnId txn_id)
      : txn_(txn), instance_(instance), def_(def), args_(std::move(args)), ticket_(txn_id, def.name, seq, std::move(request)) {}

  [[nodiscard]] Transaction& transaction() const noexcept { return txn_; }
  [[nodiscard]] InstanceId instance() const noexcept { return instance_; }
  [[nodiscard]] const OperationDef& def() const noexcept { return def_; }
  [[nodiscard]] const std::vector<Value>& args() const noexcept { return args_; }
  [[nodiscard]] const Ticket& ticket() const noexcept { return ticket_; }
  [[nodiscard]] const std::optional<ExecutionRecord>& record() const noexcept { return record_; }

 private:
  friend class TransactionManager;
  Transaction& txn_;
  InstanceId instance_;
  const OperationDef& def_;
  std::vector<Value> args_;
  Ticket ticket_;
  std::optional<ExecutionRecord> record_;
};

class Transaction {
 public:
  Transaction(TxnId id, std::string name) : id_(id), name_(std::move(name)) {}

  [[nodiscard]] TxnId id() const noexcept { return id_; }
  [[nodiscard]] const std::string& name() const noexcept { return name_; }
  [[nodiscard]] TxnStatus status() const noexcept { return status_.load(); }
  [[nodiscard]] AbortReason abort_reason() const noexcept { return reason_; }
  [[nodiscard]] const std::vector<std::unique_ptr<Operation>>& operations() const noexcept { return ops_; }

 private:
  friend class TransactionManager;
  TxnId id_;
  std::string name_;
  std::atomic<TxnStatus> status_{TxnStatus::Active};
  AbortReason reason_ = AbortReason::None;
  std::vector<std::unique_ptr<Operation>> ops_;
};

class TransactionAborted : public std::runtime_error {
 public:
  TransactionAborted(TxnId txn, AbortReason reason, const std::string& message)
      : std::runtime_error(message), txn_(txn), reason_(reason) {}
  [[nodiscard]] TxnId txn() const noexcept { return txn_; }
  [[nodiscard]] AbortReason reason() const noexcept { return reason_; }

 private:
  TxnId txn_;
  AbortReason reason_;
};

struct ManagerStats {
  std::uint64_t committed = 0;
  std::uint64_t rejected = 0;
  std::uint64_t deadlock_victims = 0;
  std::uint64_t faults = 0;
  MonitorStats monitors;  // summed over instances
};

class TransactionManager final : private WaitObserver {
 public:
  enum class AcquireResult { Granted, Blocked, Aborted };
  enum class ExecResult { Ok, Faulted };

  explicit TransactionManager(SchedulerMode mode = SchedulerMode::DynamicAv, EventSink* sink = nullptr,
                              MonitorOptions monitor_options = {})
      : mode_(mode), sink_(sink), monitor_options_(monitor_options) {}

  TransactionManager(const TransactionManager&) = delete;
  TransactionManager& operator=(const TransactionManager&) = delete;

  [[nodiscard]] SchedulerMode mode() const noexcept { return mode_; }

  // Setup only; not safe while transactions run.
  InstanceId add_instance(std::string name, InstanceValue value) {
    if (!value.conforms()) throw ExecutionError("instance '" + name + "' does not conform to its adt");
    for (const auto& inst : instances_) {
      if (inst->name == name) throw std::invalid_argument("duplicate instance '" + name + "'");
    }
    const InstanceId id = instances_.size();
    const std::size_t dim = mode_ == SchedulerMode::Compat ? 1 : value.schema->dimension();
    auto inst = std::make_unique<Instance>();
    inst->name = name;
    inst->value = std::move(value);
    inst->monitor = std::make_unique<InstanceMonitor>(dim, id, name, sink_, static_cast<WaitObserver*>(this),
                                                     monitor_options_);
    instances_.push_back(std::move(inst));
    return id;
  }

  [[nodiscard]] std::optional<InstanceId> find_instance(std::string_view name) const {
    for (std::size_t i = 0; i < instances_.size(); ++i) {
      if (instances_[i]->name == name) return i;
    }
    return std::nullopt;
  }

  [[nodiscard]] std::size_t instance_count() const noexcept { return instances_.size(); }
  [[nodiscard]] const std::string& instance_name(InstanceId id) const { return instances_.at(id)->name; }

  // Current field values. Only meaningful when no transaction is running on
  // the instance.
  [[nodiscard]] const InstanceValue& value(InstanceId id) const { return instances_.at(id)->value; }

  [[nodiscard]] InstanceMonitor& monitor(InstanceId id) { return *instances_.at(id)->monitor; }
  [[nodiscard]] const InstanceMonitor& monitor(InstanceId id) const { return *instances_.at(id)->monitor; }

  Transaction& begin(std::string name = {}) {
    std::lock_guard lock(txns_mu_);
    const TxnId id = next_txn_++;
    if (name.empty()) name = "T" + std::to_string(id);
    txns_.push_back(std::make_unique<Transaction>(id, std::move(name)));
    return *txns_.back();
  }

  // The vector presented to the monitor for `op`.
  [[nodiscard]] AccessVector control_vector(const OperationDef& op) const {
    return mode_ == SchedulerMode::Compat ? collapse_to_object(op.static_dav) : op.static_dav;
  }

  Operation& start_operation(Transaction& txn, InstanceId instance, const OperationDef& def,
                             std::vector<Value> args) {
    require_active(txn);
    const Instance& inst = *instances_.at(instance);
    if (inst.value.schema->find_operation(def.name) != &def) {
      throw ProtocolError("operation '" + def.name + "' does not belong to instance '" + inst.name + "'");
    }
    if (!txn.ops_.empty()) {
      TicketPhase last = txn.ops_.back()->ticket_.phase();
      if (last != TicketPhase::Finished && last != TicketPhase::Released) {
        throw ProtocolError("transaction " + txn.name_ + " issues operations one at a time");
      }
    }
    const std::uint64_t seq = txn.ops_.size();
    txn.ops_.push_back(std::make_unique<Operation>(txn, instance, def, std::move(args), seq,
                                                   control_vector(def), txn.id_));
    return *txn.ops_.back();
  }

  // One in_control step. A deadlock victim is rejected before returning
  // Aborted.
  AcquireResult acquire(Operation& op) {
    InstanceMonitor& mon = monitor(op.instance_);
    InstanceMonitor::Acquire r = mon.in_control(op.ticket_);
    resolve_deadlocks();
    if (r == InstanceMonitor::Acquire::Blocked && op.ticket_.phase() == TicketPhase::Cancelled) {
      r = InstanceMonitor::Acquire::Cancelled;
    }
    if (r == InstanceMonitor::Acquire::Cancelled) {
      ++deadlock_victims_;
      reject(op.txn_, AbortReason::Deadlock);
      return AcquireResult::Aborted;
    }
    return r == InstanceMonitor::Acquire::Granted ? AcquireResult::Granted : AcquireResult::Blocked;
  }

  [[nodiscard]] bool waiting(const Operation& op) const { return monitor(op.instance_).queued(op.ticket_); }

  void wait(Operation& op) { monitor(op.instance_).wait(op.ticket_); }

  // Runs the body outside any monitor. On a fault the partial writes are
  // undone through the reject path.
  ExecResult execute(Operation& op) {
    if (op.ticket_.phase() != TicketPhase::Granted) throw ProtocolError("execute before acquisition");
    Instance& inst = *instances_[op.instance_];
    ExecResult result = ExecResult::Ok;
    try {
      op.record_ = fieldlock::execute(op.def_, op.args_, inst.value);
    } catch (const ExecutionFault& fault) {
      op.record_ = fault.partial();
      result = ExecResult::Faulted;
    }
    append_log(op);
    if (result == ExecResult::Faulted) {
      ++faults_;
      finish(op);
      reject(op.txn_, AbortReason::Fault);
    }
    return result;
  }

  // out_control with the dynamic vector in dynamic-av mode, or with the
  // request itself (no downgrade) otherwise.
  void finish(Operation& op) {
    if (!op.record_) throw ProtocolError("finish before execute");
    const AccessVector& dyn = mode_ == SchedulerMode::DynamicAv ? op.record_->dynamic_dav : op.ticket_.request();
    monitor(op.instance_).out_control(op.ticket_, dyn);
    resolve_deadlocks();
  }

  std::optional<Value> run_operation(Transaction& txn, InstanceId instance, const OperationDef& def,
                                     std::vector<Value> args) {
    Operation& op = start_operation(txn, instance, def, std::move(args));
    for (;;) {
      AcquireResult r = acquire(op);
      if (r == AcquireResult::Granted) break;
      if (r == AcquireResult::Aborted) {
        throw TransactionAborted(txn.id_, AbortReason::Deadlock,
                                 "transaction " + txn.name_ + " rejected as deadlock victim");
      }
      wait(op);
    }
    if (execute(op) == ExecResult::Faulted) {
      throw TransactionAborted(txn.id_, AbortReason::Fault,
                               "transaction " + txn.name_ + " rejected after a fault in " + def.name);
    }
    finish(op);
    return op.record_->result;
  }

  void commit(Transaction& txn) {
    require_active(txn);
    for (auto it = txn.ops_.rbegin(); it != txn.ops_.rend(); ++it) release(**it);
    txn.status_ = TxnStatus::Committed;
    ++committed_;
    retire(txn);
    resolve_deadlocks();
  }

  void reject(Transaction& txn) { reject(txn, AbortReason::Requested); }

  // Finds cycles and cancels their victims' waits; victims reject themselves
  // when their acquire() observes the cancellation.
  std::vector<TxnId> detect_deadlocks() { return resolve_deadlocks(true); }

  [[nodiscard]] std::vector<WaitForEdge> wait_edges() const { return graph_.edges(); }

  // Receives one formatted line per log record with a non-empty before-image.
  void set_log_writer(std::function<void(const std::string&)> writer) {
    std::lock_guard lock(log_mu_);
    log_writer_ = std::move(writer);
  }

  [[nodiscard]] std::vector<LogRecord> live_log() const {
    std::lock_guard lock(log_mu_);
    std::vector<LogRecord> out;
    for (const auto& [_, records] : log_) out.insert(out.end(), records.begin(), records.end());
    return out;
  }

  [[nodiscard]] ManagerStats stats() const {
    ManagerStats s;
    s.committed = committed_;
    s.rejected = rejected_;
    s.deadlock_victims = deadlock_victims_;
    s.faults = faults_;
    for (const auto& inst : instances_) {
      MonitorStats m = inst->monitor->stats();
      s.monitors.entry_calls += m.entry_calls;
      s.monitors.field_visits += m.field_visits;
      s.monitors.invariant_checks += m.invariant_checks;
      s.monitors.invariant_violations += m.invariant_violations;
      s.monitors.block_events += m.block_events;
      s.monitors.early_releases += m.early_releases;
    }
    return s;
  }

 private:
  struct Instance {
    std::string name;
    InstanceValue value;
    std::unique_ptr<InstanceMonitor> monitor;
  };

  static void require_active(const Transaction& txn) {
    if (txn.status() != TxnStatus::Active) {
      throw ProtocolError("transaction " + txn.name() + " has already terminated");
    }
  }

  void reject(Transaction& txn, AbortReason reason) {
    require_active(txn);
    for (auto it = txn.ops_.rbegin(); it != txn.ops_.rend(); ++it) {
      const Operation& op = **it;
      if (op.record_) apply_inverse(*op.record_, instances_[op.instance_]->value);
    }
    for (auto it = txn.ops_.rbegin(); it != txn.ops_.rend(); ++it) release(**it);
    txn.reason_ = reason;
    txn.status_ = TxnStatus::Rejected;
    ++rejected_;
    retire(txn);
    resolve_deadlocks();
  }

  void release(Operation& op) {
    switch (op.ticket_.phase()) {
      case TicketPhase::Idle:
      case TicketPhase::Released: return;
      case TicketPhase::Granted:
      case TicketPhase::Finished:
      case TicketPhase::Cancelled: break;
      default: throw ProtocolError("operation " + op.def_.name + " is still acquiring");
    }
    monitor(op.instance_).commit_or_reject(op.ticket_);
  }

  void append_log(const Operation& op) {
    LogRecord rec;
    rec.txn = op.txn_.id_;
    rec.txn_name = op.txn_.name_;
    rec.instance = instances_[op.instance_]->name;
    rec.op = op.def_.name;
    rec.before_image = op.record_->before_image;
    rec.dynamic = op.record_->dynamic_dav;
    std::lock_guard lock(log_mu_);
    if (log_writer_ && !rec.before_image.empty()) {
      log_writer_(format_log_record(rec, *instances_[op.instance_]->value.schema));
    }
    log_[rec.txn].push_back(std::move(rec));
  }

  void retire(const Transaction& txn) {
    {
      std::lock_guard lock(log_mu_);
      log_.erase(txn.id_);
    }
    graph_.forget(txn.id_);
  }

  std::vector<TxnId> resolve_deadlocks(bool force = false) {
    if (!force && !graph_.dirty()) return {};
    std::vector<TxnId> victims = graph_.detect_deadlocks();
    for (TxnId v : victims) {
      auto w = graph_.waiting(v);
      if (!w || w->ticket == nullptr || !monitor(w->site.instance).cancel(*w->ticket)) graph_.spare(v);
    }
    return victims;
  }

  void waits_changed(InstanceId instance, std::size_t field, std::span<const WaitInfo> waiting) override {
    graph_.field_changed(instance, field, waiting);
  }

  SchedulerMode mode_;
  EventSink* sink_;
  MonitorOptions monitor_options_;
  std::vector<std::unique_ptr<Instance>> instances_;

  std::mutex txns_mu_;
  TxnId next_txn_ = 1;
  std::deque<std::unique_ptr<Transaction>> txns_;

  WaitForGraph graph_;

  mutable std::mutex log_mu_;
  std::function<void(const std::string&)> log_writer_;
  std::map<TxnId, std::vector<LogRecord>> log_;

  std::atomic<std::uint64_t> committed_{0};
  std::atomic<std::uint64_t> rejected_{0};
  std::atomic<std::uint64_t> deadlock_victims_{0};
  std::atomic<std::uint64_t> faults_{0};
};

}  // namespace fieldlock
