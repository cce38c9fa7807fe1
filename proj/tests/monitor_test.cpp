#include <gtest/gtest.h>

#include <atomic>
#include <random>
#include <thread>

#include "fieldlock/monitor.hpp"
#include "support/scenarios.hpp"

using namespace fieldlock;
using Acq = InstanceMonitor::Acquire;

namespace {

constexpr auto N = AccessMode::Null;
constexpr auto R = AccessMode::Read;
constexpr auto W = AccessMode::Write;

using Counts = std::vector<std::uint64_t>;

}  // namespace

TEST(InControl, EmptyMonitorGrantsImmediately) {
  InstanceMonitor mon(2);
  Ticket t(1, "op", 0, {R, W});
  EXPECT_EQ(mon.in_control(t), Acq::Granted);
  EXPECT_EQ(mon.control_vectors().rcv, (Counts{1, 0}));
  EXPECT_EQ(mon.control_vectors().wcv, (Counts{0, 1}));
  EXPECT_EQ(t.claim(), (AccessVector{R, W}));
}

TEST(InControl, WriterBlocksBehindReader) {
  InstanceMonitor mon(2);
  Ticket reader(1, "r", 0, {R, N});
  Ticket writer(2, "w", 0, {W, N});
  ASSERT_EQ(mon.in_control(reader), Acq::Granted);
  EXPECT_EQ(mon.in_control(writer), Acq::Blocked);
  EXPECT_TRUE(mon.queued(writer));
  auto q = mon.queue_snapshot(0);
  ASSERT_EQ(q.size(), 1u);
  EXPECT_EQ(q[0], (std::pair<TxnId, AccessMode>{2, W}));
  EXPECT_EQ(mon.stats().block_events, 1u);
}

TEST(InControl, DimensionMismatch) {
  InstanceMonitor mon(2);
  Ticket t(1, "op", 0, {R});
  EXPECT_THROW((void)mon.in_control(t), DimensionError);
  EXPECT_THROW(InstanceMonitor(0), DimensionError);
}

TEST(InControl, CascadeWakesConsecutiveReadersOnly) {
  InstanceMonitor mon(1);
  Ticket holder(1, "w", 0, {W});
  Ticket r1(2, "r", 0, {R}), r2(3, "r", 0, {R}), w2(4, "w", 0, {W});
  mon.in_control(holder);
  EXPECT_EQ(mon.in_control(r1), Acq::Blocked);
  EXPECT_EQ(mon.in_control(r2), Acq::Blocked);
  EXPECT_EQ(mon.in_control(w2), Acq::Blocked);
  mon.out_control(holder, {W});
  mon.commit_or_reject(holder);
  // One wakeup per release: only the head.
  EXPECT_EQ(r1.phase(), TicketPhase::Woken);
  EXPECT_EQ(r2.phase(), TicketPhase::Queued);
  EXPECT_EQ(mon.in_control(r1), Acq::Granted);
  EXPECT_EQ(r2.phase(), TicketPhase::Woken);
  EXPECT_EQ(mon.in_control(r2), Acq::Granted);
  EXPECT_EQ(w2.phase(), TicketPhase::Queued);
  EXPECT_EQ(mon.control_vectors().rcv, (Counts{2}));
}

TEST(OutControl, WriteToReadDowngradeAdmitsReader) {
  InstanceMonitor mon(1);
  Ticket holder(1, "cap", 0, {W});
  Ticket reader(2, "get", 0, {R});
  mon.in_control(holder);
  ASSERT_EQ(mon.in_control(reader), Acq::Blocked);
  mon.out_control(holder, {R});
  EXPECT_EQ(reader.phase(), TicketPhase::Woken);
  EXPECT_EQ(mon.control_vectors().rcv, (Counts{2}));
  EXPECT_EQ(mon.control_vectors().wcv, (Counts{0}));
  EXPECT_EQ(mon.in_control(reader), Acq::Granted);
  EXPECT_EQ(mon.stats().early_releases, 1u);
}

TEST(OutControl, DynamicEqualsStaticKeepsHoldings) {
  InstanceMonitor mon(2);
  Ticket t(1, "op", 0, {R, W});
  mon.in_control(t);
  auto before = mon.control_vectors();
  mon.out_control(t, {R, W});
  EXPECT_EQ(mon.control_vectors(), before);
  EXPECT_EQ(mon.stats().early_releases, 0u);
}

TEST(OutControl, WriteToNullReleasesField) {
  InstanceMonitor mon(2);
  Ticket t(1, "op", 0, {W, N});
  Ticket waiter(2, "op", 0, {W, N});
  mon.in_control(t);
  mon.in_control(waiter);
  mon.out_control(t, {N, N});
  EXPECT_EQ(waiter.phase(), TicketPhase::Woken);
  EXPECT_EQ(mon.in_control(waiter), Acq::Granted);
  EXPECT_EQ(mon.control_vectors().wcv, (Counts{1, 0}));
}

TEST(OutControl, ReadToNullReleasesField) {
  InstanceMonitor mon(1);
  Ticket t(1, "op", 0, {R});
  Ticket writer(2, "op", 0, {W});
  mon.in_control(t);
  mon.in_control(writer);
  mon.out_control(t, {N});
  EXPECT_EQ(writer.phase(), TicketPhase::Woken);
}

TEST(OutControl, ProtocolErrors) {
  InstanceMonitor mon(1);
  Ticket t(1, "op", 0, {R});
  EXPECT_THROW(mon.out_control(t, {R}), ProtocolError);
  mon.in_control(t);
  EXPECT_THROW(mon.out_control(t, {W}), ProtocolError);
  EXPECT_THROW(mon.out_control(t, {R, R}), DimensionError);
}

TEST(CommitOrReject, ReleasesAndWakesBothQueues) {
  InstanceMonitor mon(2);
  Ticket t(1, "op", 0, {R, W});
  Ticket w1(2, "a", 0, {W, N});
  Ticket w2(3, "b", 0, {N, R});
  mon.in_control(t);
  mon.in_control(w1);
  mon.in_control(w2);
  mon.out_control(t, {R, W});
  mon.commit_or_reject(t);
  EXPECT_EQ(w1.phase(), TicketPhase::Woken);
  EXPECT_EQ(w2.phase(), TicketPhase::Woken);
  EXPECT_EQ(mon.control_vectors().rcv, (Counts{0, 1}));
  EXPECT_EQ(mon.control_vectors().wcv, (Counts{1, 0}));
}

TEST(CommitOrReject, AllNullIsNoop) {
  TraceLog log;
  InstanceMonitor mon(2, 0, "x", &log);
  Ticket t(1, "op", 0, {N, N});
  mon.in_control(t);
  mon.out_control(t, {N, N});
  mon.commit_or_reject(t);
  EXPECT_TRUE(log.events().empty());
}

TEST(CommitOrReject, DoubleReleaseFaults) {
  InstanceMonitor mon(1);
  Ticket t(1, "op", 0, {W});
  mon.in_control(t);
  mon.out_control(t, {W});
  mon.commit_or_reject(t);
  EXPECT_THROW(mon.commit_or_reject(t), ProtocolError);
  Ticket q(2, "op", 0, {W});
  Ticket blocker(3, "op", 0, {W});
  mon.in_control(blocker);
  mon.in_control(q);
  EXPECT_THROW(mon.commit_or_reject(q), ProtocolError);
}

TEST(Reentrancy, SameTransactionDoesNotBlockItself) {
  InstanceMonitor mon(2);
  Ticket deposit(1, "deposit", 0, {W, N});
  Ticket owner(1, "getOwner", 1, {N, R});
  Ticket again(1, "getBalance", 2, {R, N});
  Ticket other(2, "deposit", 0, {W, N});
  mon.in_control(deposit);
  mon.out_control(deposit, {W, N});
  ASSERT_EQ(mon.in_control(other), Acq::Blocked);
  EXPECT_EQ(mon.in_control(owner), Acq::Granted);
  // Read under its own Write is granted even with a queued writer.
  EXPECT_EQ(mon.in_control(again), Acq::Granted);
  EXPECT_EQ(mon.stats().invariant_violations, 0u);
}

TEST(Reentrancy, UpgradeWaitsToBeSoleReader) {
  InstanceMonitor mon(1);
  Ticket a_read(1, "get", 0, {R});
  Ticket b_read(2, "get", 0, {R});
  Ticket c_write(3, "put", 0, {W});
  Ticket a_write(1, "put", 1, {W});
  mon.in_control(a_read);
  mon.in_control(b_read);
  mon.in_control(c_write);
  EXPECT_EQ(mon.in_control(a_write), Acq::Blocked);
  // The upgrade goes ahead of the queued writer.
  auto q = mon.queue_snapshot(0);
  ASSERT_EQ(q.size(), 2u);
  EXPECT_EQ(q[0].first, 1u);
  mon.out_control(b_read, {R});
  mon.commit_or_reject(b_read);
  EXPECT_EQ(a_write.phase(), TicketPhase::Woken);
  EXPECT_EQ(mon.in_control(a_write), Acq::Granted);
  EXPECT_EQ(mon.control_vectors().wcv, (Counts{1}));
  EXPECT_EQ(mon.control_vectors().rcv, (Counts{0}));
  // Dropping the Write claim leaves the transaction's own Read in place.
  mon.out_control(a_write, {N});
  EXPECT_EQ(mon.control_vectors().rcv, (Counts{1}));
  EXPECT_EQ(c_write.phase(), TicketPhase::Queued);
  mon.out_control(a_read, {R});
  mon.commit_or_reject(a_read);
  mon.commit_or_reject(a_write);
  EXPECT_EQ(c_write.phase(), TicketPhase::Woken);
  EXPECT_EQ(mon.stats().invariant_violations, 0u);
}

TEST(Cancel, RemovesWaiterAndPumpsQueue) {
  InstanceMonitor mon(1);
  Ticket holder(1, "get", 0, {R});
  Ticket writer(2, "put", 0, {W});
  Ticket reader(3, "get", 0, {R});
  mon.in_control(holder);
  mon.in_control(writer);
  ASSERT_EQ(mon.in_control(reader), Acq::Blocked);
  EXPECT_TRUE(mon.cancel(writer));
  EXPECT_EQ(writer.phase(), TicketPhase::Cancelled);
  EXPECT_EQ(mon.in_control(writer), Acq::Cancelled);
  EXPECT_EQ(reader.phase(), TicketPhase::Woken);
  EXPECT_FALSE(mon.cancel(reader));
  mon.commit_or_reject(writer);
}

TEST(Cancel, KeepsEarlierFieldsUntilRelease) {
  InstanceMonitor mon(2);
  Ticket blocker(1, "b", 0, {N, W});
  Ticket t(2, "t", 0, {W, W});
  mon.in_control(blocker);
  ASSERT_EQ(mon.in_control(t), Acq::Blocked);
  EXPECT_EQ(mon.control_vectors().wcv, (Counts{1, 1}));
  mon.cancel(t);
  EXPECT_EQ(mon.control_vectors().wcv, (Counts{1, 1}));
  mon.commit_or_reject(t);
  EXPECT_EQ(mon.control_vectors().wcv, (Counts{0, 1}));
}

TEST(Fairness, WriterBeforeLaterReaderExactTrace) {
  auto run = fieldlock::testing::run_fairness_scenario();
  EXPECT_TRUE(run.third_reader_blocked);
  EXPECT_TRUE(run.writer_granted_before_third);
  EXPECT_TRUE(run.readers_granted_together);
  EXPECT_EQ(format_trace(run.trace), fieldlock::testing::kFairnessTrace);
}

TEST(Cost, FieldVisitsEqualDimension) {
  for (std::size_t n : {1u, 4u, 16u, 64u}) {
    InstanceMonitor mon(n);
    // Busy queues on every other field.
    AccessVector odd(n), even(n);
    for (std::size_t i = 0; i < n; ++i) (i % 2 ? odd : even)[i] = W;
    Ticket holder(1, "h", 0, odd);
    Ticket waiter(2, "w", 0, odd);
    mon.in_control(holder);
    mon.in_control(waiter);
    Ticket t(3, "t", 0, even);
    auto before = mon.stats().field_visits;
    ASSERT_EQ(mon.in_control(t), Acq::Granted);
    EXPECT_EQ(mon.stats().field_visits - before, n);
    before = mon.stats().field_visits;
    mon.out_control(t, AccessVector(n));
    EXPECT_EQ(mon.stats().field_visits - before, n);
  }
}

TEST(Trace, FieldsAreOneBasedAndDowngradeCarriesNewMode) {
  TraceLog log;
  InstanceMonitor mon(2, 0, "acct", &log);
  Ticket t(7, "cap", 0, {W, R});
  mon.in_control(t);
  mon.out_control(t, {R, R});
  mon.commit_or_reject(t);
  EXPECT_EQ(format_trace(log.events()),
            "ts=0 txn=7 op=cap#0 instance=acct event=request field=1 mode=W\n"
            "ts=1 txn=7 op=cap#0 instance=acct event=grant field=1 mode=W\n"
            "ts=2 txn=7 op=cap#0 instance=acct event=request field=2 mode=R\n"
            "ts=3 txn=7 op=cap#0 instance=acct event=grant field=2 mode=R\n"
            "ts=4 txn=7 op=cap#0 instance=acct event=downgrade field=1 mode=R\n"
            "ts=5 txn=7 op=cap#0 instance=acct event=release field=2 mode=R\n"
            "ts=6 txn=7 op=cap#0 instance=acct event=release field=1 mode=R\n");
}

TEST(Trace, ParseRoundTripAndErrors) {
  auto run = fieldlock::testing::run_fairness_scenario();
  EXPECT_EQ(parse_trace(format_trace(run.trace)), run.trace);
  EXPECT_THROW((void)parse_event("ts=1 txn=1"), TraceFormatError);
  EXPECT_THROW((void)parse_event("ts=x txn=1 op=a#0 instance=i event=grant field=1 mode=R"), TraceFormatError);
  EXPECT_THROW((void)parse_event("ts=1 txn=1 op=a#0 instance=i event=jump field=1 mode=R"), TraceFormatError);
  EXPECT_THROW((void)parse_event("ts=1 txn=1 op=a#0 instance=i event=grant field=0 mode=R"), TraceFormatError);
  EXPECT_THROW((void)parse_event("ts=1 txn=1 op=a instance=i event=grant field=1 mode=R"), TraceFormatError);
  EXPECT_THROW((void)parse_event("ts=1 txn=1 op=a#0 instance=i event=grant field=1 mode=Q"), TraceFormatError);
  EXPECT_EQ(parse_trace("# header\n\n").size(), 0u);
}

// Threads hammer one monitor with random requests; every entry exit checks
// the invariant.
TEST(Stress, InvariantHoldsUnderConcurrency) {
  constexpr std::size_t kDim = 4;
  InstanceMonitor mon(kDim);
  std::atomic<TxnId> next_txn{1};
  auto worker = [&](std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    for (int round = 0; round < 300; ++round) {
      AccessVector req(kDim);
      for (std::size_t i = 0; i < kDim; ++i) req[i] = kAllModes[rng() % 3];
      Ticket t(next_txn++, "op", 0, req);
      ASSERT_EQ(mon.acquire(t), Acq::Granted);
      AccessVector dyn = req;
      for (std::size_t i = 0; i < kDim; ++i) {
        if (rng() % 3 == 0) dyn[i] = kAllModes[rng() % (static_cast<std::size_t>(req[i]) + 1)];
      }
      std::this_thread::yield();
      mon.out_control(t, dyn);
      mon.commit_or_reject(t);
    }
  };
  std::vector<std::thread> threads;
  for (int k = 0; k < 4; ++k) threads.emplace_back(worker, 100 + k);
  for (auto& t : threads) t.join();
  auto s = mon.stats();
  EXPECT_GT(s.invariant_checks, 1000u);
  EXPECT_EQ(s.invariant_violations, 0u);
  EXPECT_EQ(mon.control_vectors().rcv, (Counts(kDim, 0)));
  EXPECT_EQ(mon.control_vectors().wcv, (Counts(kDim, 0)));
}
