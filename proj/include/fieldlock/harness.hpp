#pragma once

// Runs a workload under one scheduler mode and checks the result.
//
// Two drivers:
//   - step driver (workers == 0): one thread, a seeded scheduler picks which
//     transaction advances by one step; the trace clock counts steps, so the
//     same seed replays the same trace;
//   - threaded driver (workers >= 1): transactions run on worker threads; the
//     trace clock is the emission order.
//
// Each iteration starts from the workload's initial state. Verification
// replays the committed transactions serially (oracle), checks that the
// conflict graph is acyclic and that no monitor invariant check failed.

#include <algorithm>
#include <cstdint>
#include <exception>
#include <map>
#include <optional>
#include <random>
#include <tuple>
#include <string>
#include <thread>
#include <vector>

#include "fieldlock/oracle.hpp"
#include "fieldlock/trace.hpp"
#include "fieldlock/txn.hpp"
#include "fieldlock/workload.hpp"

namespace fieldlock {

enum class Interleave { Random, RoundRobin };

struct RunConfig {
  SchedulerMode mode = SchedulerMode::DynamicAv;
  std::size_t workers = 0;  // 0 selects the step driver
  std::uint64_t seed = 0;
  std::size_t iterations = 1;
  Interleave interleave = Interleave::Random;
  bool verify = true;
};

struct MetricsReport {
  SchedulerMode mode = SchedulerMode::DynamicAv;
  std::uint64_t transactions = 0;
  std::uint64_t committed = 0;
  std::uint64_t rejected = 0;
  std::uint64_t deadlock_victims = 0;
  std::uint64_t faults = 0;
  std::uint64_t block_events = 0;
  std::uint64_t early_releases = 0;
  double mean_queue_wait = 0.0;
  std::uint64_t max_queue_wait = 0;
  std::uint64_t conflict_edges = 0;
  std::uint64_t entry_calls = 0;
  std::uint64_t field_visits = 0;
  std::uint64_t invariant_checks = 0;
  std::uint64_t invariant_violations = 0;
};

enum class Verdict { Pass, Fail, Skipped };

[[nodiscard]] inline std::string_view verdict_name(Verdict v) noexcept {
  switch (v) {
    case Verdict::Pass: return "pass";
    case Verdict::Fail: return "fail";
    case Verdict::Skipped: return "skipped";
  }
  return "?";
}

struct IterationResult {
  std::vector<TraceEvent> trace;
  std::vector<std::string> log;
  Outcome outcome;
  ManagerStats stats;
};

struct RunReport {
  MetricsReport metrics;
  Verdict verdict = Verdict::Pass;
  std::vector<std::string> problems;  // verification failures and warnings
  std::vector<IterationResult> iterations;
};

namespace detail {

// Per-transaction bookkeeping shared by both drivers.
struct TxnRun {
  Transaction* txn = nullptr;
  const TxnScript* script = nullptr;
  std::vector<std::optional<Value>> results;
};

inline std::vector<TxnRun> begin_all(TransactionManager& tm, const Workload& w) {
  std::vector<TxnRun> runs;
  for (const auto& script : w.txns) runs.push_back({&tm.begin(script.name), &script, {}});
  return runs;
}

inline Outcome collect_outcome(const TransactionManager& tm, const Workload& w, const std::vector<TxnRun>& runs) {
  Outcome o;
  for (std::size_t i = 0; i < w.instances.size(); ++i) o.finals[w.instances[i].name] = tm.value(i).values;
  for (const auto& r : runs) {
    if (r.txn->status() == TxnStatus::Committed) {
      o.committed.insert(r.script->name);
      o.returns[r.script->name] = r.results;
    }
  }
  return o;
}

class StepDriver {
 public:
  StepDriver(TransactionManager& tm, std::vector<TxnRun>& runs, Interleave interleave, std::uint64_t seed,
             std::uint64_t& clock)
      : tm_(tm), runs_(runs), interleave_(interleave), rng_(seed), clock_(clock), ctx_(runs.size()) {}

  void run() {
    for (;;) {
      std::vector<std::size_t> ready;
      bool unfinished = false;
      for (std::size_t i = 0; i < ctx_.size(); ++i) {
        if (ctx_[i].phase == Phase::Done) continue;
        unfinished = true;
        if (ctx_[i].phase == Phase::Waiting && tm_.waiting(*ctx_[i].op)) continue;
        ready.push_back(i);
      }
      if (!unfinished) return;
      if (ready.empty()) {
        // Every live transaction is queued; only a missed cycle can cause this.
        if (tm_.detect_deadlocks().empty()) throw std::logic_error("step driver stalled without a deadlock");
        continue;
      }
      ++clock_;
      step(pick(ready));
    }
  }

 private:
  enum class Phase { Next, Waiting, Execute, Finish, Done };
  struct Context {
    Phase phase = Phase::Next;
    std::size_t next_step = 0;
    Operation* op = nullptr;
  };

  std::size_t pick(const std::vector<std::size_t>& ready) {
    if (interleave_ == Interleave::Random) {
      return ready[std::uniform_int_distribution<std::size_t>(0, ready.size() - 1)(rng_)];
    }
    // Round-robin: first ready context after the previous pick.
    auto it = std::upper_bound(ready.begin(), ready.end(), last_);
    last_ = it == ready.end() ? ready.front() : *it;
    return last_;
  }

  void acquire(Context& c) {
    switch (tm_.acquire(*c.op)) {
      case TransactionManager::AcquireResult::Granted: c.phase = Phase::Execute; break;
      case TransactionManager::AcquireResult::Blocked: c.phase = Phase::Waiting; break;
      case TransactionManager::AcquireResult::Aborted: c.phase = Phase::Done; break;
    }
  }

  void step(std::size_t i) {
    Context& c = ctx_[i];
    TxnRun& run = runs_[i];
    if (run.txn->status() != TxnStatus::Active) {
      c.phase = Phase::Done;
      return;
    }
    switch (c.phase) {
      case Phase::Next:
        if (c.next_step == run.script->steps.size()) {
          tm_.commit(*run.txn);
          c.phase = Phase::Done;
          return;
        } else {
          const ScriptStep& s = run.script->steps[c.next_step++];
          c.op = &tm_.start_operation(*run.txn, s.instance, *s.op, s.args);
          acquire(c);
        }
        return;
      case Phase::Waiting: acquire(c); return;
      case Phase::Execute:
        if (tm_.execute(*c.op) == TransactionManager::ExecResult::Faulted) {
          c.phase = Phase::Done;
        } else {
          run.results.push_back(c.op->record()->result);
          c.phase = Phase::Finish;
        }
        return;
      case Phase::Finish:
        tm_.finish(*c.op);
        c.phase = Phase::Next;
        return;
      case Phase::Done: return;
    }
  }

  TransactionManager& tm_;
  std::vector<TxnRun>& runs_;
  Interleave interleave_;
  std::mt19937_64 rng_;
  std::uint64_t& clock_;
  std::vector<Context> ctx_;
  std::size_t last_ = static_cast<std::size_t>(-1);
};

inline void run_threaded(TransactionManager& tm, std::vector<TxnRun>& runs, std::size_t workers) {
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> threads;
  for (std::size_t k = 0; k < workers; ++k) {
    threads.emplace_back([&, k] {
      try {
        for (std::size_t i = next++; i < runs.size(); i = next++) {
          TxnRun& run = runs[i];
          try {
            for (const auto& s : run.script->steps) {
              run.results.push_back(tm.run_operation(*run.txn, s.instance, *s.op, s.args));
            }
            tm.commit(*run.txn);
          } catch (const TransactionAborted&) {
          }
        }
      } catch (...) {
        errors[k] = std::current_exception();
      }
    });
  }
  for (auto& t : threads) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace detail

// One execution of the workload from its initial state.
[[nodiscard]] inline IterationResult run_iteration(const Workload& w, const RunConfig& config,
                                                   std::uint64_t seed) {
  std::uint64_t clock = 0;
  TraceLog trace = config.workers == 0 ? TraceLog([&clock] { return clock; }) : TraceLog();
  TransactionManager tm(config.mode, &trace);
  IterationResult result;
  tm.set_log_writer([&result](const std::string& line) { result.log.push_back(line); });
  for (const auto& inst : w.instances) tm.add_instance(inst.name, inst.initial);

  auto runs = detail::begin_all(tm, w);
  if (config.workers == 0) {
    detail::StepDriver(tm, runs, config.interleave, seed, clock).run();
  } else {
    detail::run_threaded(tm, runs, config.workers);
  }
  result.trace = trace.events();
  result.outcome = detail::collect_outcome(tm, w, runs);
  result.stats = tm.stats();
  return result;
}

// Queue wait of every block that ended in a grant, in trace clock units.
[[nodiscard]] inline std::vector<std::uint64_t> queue_waits(const std::vector<TraceEvent>& trace) {
  using Key = std::tuple<TxnId, std::uint64_t, std::string, std::size_t>;
  std::map<Key, std::uint64_t> blocked_at;
  std::vector<std::uint64_t> waits;
  for (const auto& e : trace) {
    Key key{e.txn, e.op_seq, e.instance, e.field};
    if (e.kind == EventKind::Block) {
      blocked_at[key] = e.ts;
    } else if (e.kind == EventKind::Grant) {
      auto it = blocked_at.find(key);
      if (it != blocked_at.end()) {
        waits.push_back(e.ts - it->second);
        blocked_at.erase(it);
      }
    }
  }
  return waits;
}

[[nodiscard]] inline RunReport run_workload(const Workload& w, const RunConfig& config) {
  RunReport report;
  MetricsReport& m = report.metrics;
  m.mode = config.mode;
  std::mt19937_64 seeds(config.seed);
  std::uint64_t wait_sum = 0;
  std::uint64_t wait_count = 0;
  bool skipped = false;

  for (std::size_t iter = 0; iter < config.iterations; ++iter) {
    const std::uint64_t seed = iter == 0 ? config.seed : seeds();
    IterationResult it = run_iteration(w, config, seed);
    const std::string where = config.iterations > 1 ? "iteration " + std::to_string(iter) + ": " : "";

    m.transactions += w.txns.size();
    m.committed += it.stats.committed;
    m.rejected += it.stats.rejected;
    m.deadlock_victims += it.stats.deadlock_victims;
    m.faults += it.stats.faults;
    m.block_events += it.stats.monitors.block_events;
    m.early_releases += it.stats.monitors.early_releases;
    m.entry_calls += it.stats.monitors.entry_calls;
    m.field_visits += it.stats.monitors.field_visits;
    m.invariant_checks += it.stats.monitors.invariant_checks;
    m.invariant_violations += it.stats.monitors.invariant_violations;
    for (auto wait : queue_waits(it.trace)) {
      wait_sum += wait;
      ++wait_count;
      m.max_queue_wait = std::max(m.max_queue_wait, wait);
    }
    ConflictGraph graph = conflict_graph(it.trace);
    m.conflict_edges += graph.edges.size();

    if (config.verify) {
      if (it.stats.monitors.invariant_violations != 0) {
        report.problems.push_back(where + "monitor invariant violated " +
                                  std::to_string(it.stats.monitors.invariant_violations) + " times");
        report.verdict = Verdict::Fail;
      }
      if (!graph.acyclic()) {
        report.problems.push_back(where + "conflict graph has a cycle");
        report.verdict = Verdict::Fail;
      }
      try {
        if (!check_serializable(w, it.outcome)) {
          report.problems.push_back(where + "outcome matches no serial order:\n" + format_outcome(it.outcome));
          report.verdict = Verdict::Fail;
        }
      } catch (const OracleBoundExceeded& e) {
        report.problems.push_back(where + "warning: serializability check skipped: " + e.what());
        skipped = true;
      }
    }
    report.iterations.push_back(std::move(it));
  }
  if (wait_count != 0) m.mean_queue_wait = static_cast<double>(wait_sum) / static_cast<double>(wait_count);
  if (!config.verify || (skipped && report.verdict == Verdict::Pass)) report.verdict = Verdict::Skipped;
  return report;
}

}  // namespace fieldlock
