#pragma once

// Fixed monitor scenarios shared by the unit tests and the acceptance run.

#include <memory>
#include <string>
#include <vector>

#include "fieldlock/monitor.hpp"
#include "fieldlock/trace.hpp"

namespace fieldlock::testing {

// Two readers hold field 1; a writer queues behind them; a third reader
// arrives, then a fourth. Expected: the third reader queues behind the writer
// (FIFO); when both readers finish, the writer is granted; when the writer
// releases, the third reader is woken, and its resumption wakes the fourth.
struct FairnessRun {
  std::vector<TraceEvent> trace;
  bool third_reader_blocked = false;
  bool writer_granted_before_third = false;
  bool readers_granted_together = false;
};

inline FairnessRun run_fairness_scenario() {
  TraceLog log;
  InstanceMonitor mon(1, 0, "obj", &log);
  const AccessVector read{AccessMode::Read};
  const AccessVector write{AccessMode::Write};
  Ticket r1(1, "get", 0, read), r2(2, "get", 0, read), w(3, "put", 0, write), r3(4, "get", 0, read),
      r4(5, "get", 0, read);

  FairnessRun out;
  mon.in_control(r1);
  mon.in_control(r2);
  mon.in_control(w);
  out.third_reader_blocked = mon.in_control(r3) == InstanceMonitor::Acquire::Blocked;
  mon.in_control(r4);

  for (Ticket* t : {&r1, &r2}) {
    mon.out_control(*t, read);
    mon.commit_or_reject(*t);
  }
  out.writer_granted_before_third = w.phase() == TicketPhase::Woken && r3.phase() == TicketPhase::Queued;
  mon.in_control(w);
  mon.out_control(w, write);
  mon.commit_or_reject(w);
  // r3 was woken by the release; resuming it wakes r4 as well.
  mon.in_control(r3);
  out.readers_granted_together = r4.phase() == TicketPhase::Woken;
  mon.in_control(r4);
  for (Ticket* t : {&r3, &r4}) {
    mon.out_control(*t, read);
    mon.commit_or_reject(*t);
  }
  out.trace = log.events();
  return out;
}

// The exact trace expected from run_fairness_scenario().
inline const char* kFairnessTrace =
    "ts=0 txn=1 op=get#0 instance=obj event=request field=1 mode=R\n"
    "ts=1 txn=1 op=get#0 instance=obj event=grant field=1 mode=R\n"
    "ts=2 txn=2 op=get#0 instance=obj event=request field=1 mode=R\n"
    "ts=3 txn=2 op=get#0 instance=obj event=grant field=1 mode=R\n"
    "ts=4 txn=3 op=put#0 instance=obj event=request field=1 mode=W\n"
    "ts=5 txn=3 op=put#0 instance=obj event=block field=1 mode=W\n"
    "ts=6 txn=4 op=get#0 instance=obj event=request field=1 mode=R\n"
    "ts=7 txn=4 op=get#0 instance=obj event=block field=1 mode=R\n"
    "ts=8 txn=5 op=get#0 instance=obj event=request field=1 mode=R\n"
    "ts=9 txn=5 op=get#0 instance=obj event=block field=1 mode=R\n"
    "ts=10 txn=1 op=get#0 instance=obj event=release field=1 mode=R\n"
    "ts=11 txn=2 op=get#0 instance=obj event=release field=1 mode=R\n"
    "ts=12 txn=3 op=put#0 instance=obj event=grant field=1 mode=W\n"
    "ts=13 txn=3 op=put#0 instance=obj event=release field=1 mode=W\n"
    "ts=14 txn=4 op=get#0 instance=obj event=grant field=1 mode=R\n"
    "ts=15 txn=5 op=get#0 instance=obj event=grant field=1 mode=R\n"
    "ts=16 txn=4 op=get#0 instance=obj event=release field=1 mode=R\n"
    "ts=17 txn=5 op=get#0 instance=obj event=release field=1 mode=R\n";

}  // namespace fieldlock::testing
