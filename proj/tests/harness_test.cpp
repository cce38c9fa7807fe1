#include <gtest/gtest.h>

#include <map>

#include "fieldlock/harness.hpp"
#include "support/random_workload.hpp"

using namespace fieldlock;

namespace {

Workload demo(const std::string& name) { return load_workload(std::string(FIELDLOCK_DEMOS "/") + name); }

RunConfig config(SchedulerMode mode, Interleave interleave = Interleave::RoundRobin) {
  RunConfig c;
  c.mode = mode;
  c.interleave = interleave;
  return c;
}

const std::vector<SchedulerMode> kModes = {SchedulerMode::Compat, SchedulerMode::StaticAv, SchedulerMode::DynamicAv};

}  // namespace

TEST(Workload, ParsesDemo) {
  auto w = demo("account.wl");
  EXPECT_EQ(w.instances.size(), 2u);
  ASSERT_EQ(w.txns.size(), 4u);
  EXPECT_EQ(w.txns[0].name, "pay");
  EXPECT_EQ(w.txns[0].steps.size(), 2u);
  EXPECT_EQ(w.txns[0].steps[1].op->name, "deposit");
  EXPECT_EQ(w.instance_index("savings"), std::optional<std::size_t>(1));
}

TEST(Workload, Errors) {
  auto adts = parse_module("adt C(x: integer, s: text) op f(a: integer) { x := a } op g() { }");
  auto bad = [&](const std::string& text) {
    EXPECT_ANY_THROW((void)parse_workload(text, adts)) << text;
  };
  bad("instance c: D(x=1)");
  bad("instance c: C(z=1)");
  bad("instance c: C(x=true)");
  bad("instance c: C(x=1)\ninstance c: C(x=2)");
  bad("instance c: C(x=1)\ntxn t { c.h() }");
  bad("instance c: C(x=1)\ntxn t { c.f() }");
  bad("instance c: C(x=1)\ntxn t { c.f(\"no\") }");
  bad("instance c: C(x=1)\ntxn t { d.g() }");
  bad("instance c: C(x=1)\ntxn t { c.g() }\ntxn t { c.g() }");
  bad("instance c: C(x=1)\ntxn t { c.g() ");
  bad("use nowhere.adt\n");
  EXPECT_NO_THROW((void)parse_workload("instance c: C(x=1)\ntxn t { c.g(); }\ntxn e { }", adts));
}

TEST(Workload, UnsetFieldsTakeDefaults) {
  auto adts = parse_module("adt C(x: integer, s: text, b: boolean)");
  auto w = parse_workload("instance c: C(x=3)", adts);
  EXPECT_EQ(w.instances[0].initial.values,
            (std::vector<Value>{std::int64_t{3}, std::string(), false}));
}

TEST(Harness, EmptyWorkload) {
  auto w = demo("empty.wl");
  for (auto mode : kModes) {
    auto report = run_workload(w, config(mode));
    EXPECT_EQ(report.verdict, Verdict::Pass);
    EXPECT_EQ(report.metrics.transactions, 0u);
    EXPECT_TRUE(report.iterations.at(0).trace.empty());
  }
}

TEST(Harness, SameSeedSameTrace) {
  auto w = demo("account.wl");
  RunConfig c = config(SchedulerMode::DynamicAv, Interleave::Random);
  for (std::uint64_t seed : {1u, 7u, 42u}) {
    c.seed = seed;
    auto first = run_iteration(w, c, seed);
    auto second = run_iteration(w, c, seed);
    EXPECT_EQ(format_trace(first.trace), format_trace(second.trace));
    EXPECT_EQ(first.log, second.log);
  }
}

TEST(Harness, DisjointWritersOnlyBlockUnderCompat) {
  auto w = demo("disjoint.wl");
  EXPECT_GT(run_workload(w, config(SchedulerMode::Compat)).metrics.block_events, 0u);
  EXPECT_EQ(run_workload(w, config(SchedulerMode::StaticAv)).metrics.block_events, 0u);
  EXPECT_EQ(run_workload(w, config(SchedulerMode::DynamicAv)).metrics.block_events, 0u);
}

TEST(Harness, ConditionalWriteReleasesEarly) {
  auto w = demo("conditional.wl");
  auto fixed = run_workload(w, config(SchedulerMode::StaticAv));
  auto dynamic = run_workload(w, config(SchedulerMode::DynamicAv));
  EXPECT_EQ(fixed.verdict, Verdict::Pass);
  EXPECT_EQ(dynamic.verdict, Verdict::Pass);
  EXPECT_EQ(fixed.metrics.early_releases, 0u);
  EXPECT_GT(dynamic.metrics.early_releases, 0u);
  EXPECT_LT(dynamic.metrics.max_queue_wait, fixed.metrics.max_queue_wait);
}

TEST(Harness, MultipleIterationsAccumulate) {
  auto w = demo("account.wl");
  RunConfig c = config(SchedulerMode::StaticAv, Interleave::Random);
  c.iterations = 5;
  auto report = run_workload(w, c);
  EXPECT_EQ(report.iterations.size(), 5u);
  EXPECT_EQ(report.metrics.transactions, 20u);
  EXPECT_EQ(report.metrics.committed + report.metrics.rejected, 20u);
  EXPECT_EQ(report.verdict, Verdict::Pass);
}

TEST(Harness, ThreadedRunsVerify) {
  auto w = demo("account.wl");
  for (auto mode : kModes) {
    RunConfig c = config(mode);
    c.workers = 4;
    c.iterations = 20;
    auto report = run_workload(w, c);
    EXPECT_EQ(report.verdict, Verdict::Pass) << mode_name(mode);
    EXPECT_EQ(report.metrics.invariant_violations, 0u);
  }
}

TEST(Harness, QueueWaits) {
  auto trace = parse_trace(
      "ts=2 txn=2 op=get#0 instance=p event=block field=1 mode=R\n"
      "ts=9 txn=2 op=get#0 instance=p event=grant field=1 mode=R\n"
      "ts=10 txn=3 op=get#0 instance=p event=grant field=1 mode=R\n");
  EXPECT_EQ(queue_waits(trace), (std::vector<std::uint64_t>{7}));
}

// Strict two-phase locking: once a transaction releases anything it asks for
// nothing more.
TEST(Property, StrictTwoPhase) {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    auto g = fieldlock::testing::random_workload(seed);
    for (auto mode : kModes) {
      auto it = run_iteration(g.workload, config(mode), seed);
      std::map<TxnId, bool> released;
      for (const auto& e : it.trace) {
        if (e.kind == EventKind::Release) released[e.txn] = true;
        if (e.kind == EventKind::Request || e.kind == EventKind::Grant) {
          ASSERT_FALSE(released[e.txn]) << g.workload_text << format_trace(it.trace);
        }
      }
    }
  }
}
