#pragma once

// Serializability checks.
//
// check_serializable() replays the committed transactions of a workload in
// every order, each from the initial state, and accepts an observed outcome
// equal to one of the replays (same final field values, same return values).
// conflict_graph() builds the field-level precedence graph of a trace.

#include <algorithm>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <tuple>
#include <utility>
#include <vector>

#include "fieldlock/interp.hpp"
#include "fieldlock/trace.hpp"
#include "fieldlock/workload.hpp"

namespace fieldlock {

constexpr std::size_t kOracleMaxCommitted = 6;

class OracleBoundExceeded : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Outcome {
  std::map<std::string, std::vector<Value>> finals;                    // instance -> field values
  std::map<std::string, std::vector<std::optional<Value>>> returns;    // committed txn -> results
  std::set<std::string> committed;

  friend bool operator==(const Outcome&, const Outcome&) = default;
  friend bool operator<(const Outcome& a, const Outcome& b) {
    return std::tie(a.finals, a.returns, a.committed) < std::tie(b.finals, b.returns, b.committed);
  }
};

[[nodiscard]] inline std::string format_outcome(const Outcome& o) {
  std::string out;
  for (const auto& [name, values] : o.finals) {
    out += name + "(";
    for (std::size_t i = 0; i < values.size(); ++i) out += (i ? ", " : "") + format_value(values[i]);
    out += ")\n";
  }
  for (const auto& [txn, results] : o.returns) {
    out += txn + ":";
    for (const auto& r : results) out += " " + (r ? format_value(*r) : std::string("-"));
    out += "\n";
  }
  return out;
}

// Runs the listed transactions one after another from the initial state.
// Returns nothing if one of them faults, since no concurrent run can have
// committed it in that position.
[[nodiscard]] inline std::optional<Outcome> run_serial(const Workload& w, const std::vector<std::size_t>& order) {
  std::vector<InstanceValue> state;
  for (const auto& inst : w.instances) state.push_back(inst.initial);
  Outcome out;
  for (std::size_t t : order) {
    const TxnScript& script = w.txns.at(t);
    std::vector<std::optional<Value>> results;
    for (const auto& step : script.steps) {
      try {
        results.push_back(execute(*step.op, step.args, state[step.instance]).result);
      } catch (const ExecutionFault&) {
        return std::nullopt;
      }
    }
    out.returns[script.name] = std::move(results);
    out.committed.insert(script.name);
  }
  for (std::size_t i = 0; i < w.instances.size(); ++i) out.finals[w.instances[i].name] = state[i].values;
  return out;
}

[[nodiscard]] inline std::set<Outcome> serial_outcomes(const Workload& w, const std::set<std::string>& committed) {
  if (committed.size() > kOracleMaxCommitted) {
    throw OracleBoundExceeded(std::to_string(committed.size()) + " committed transactions; at most " +
                              std::to_string(kOracleMaxCommitted) + " can be enumerated");
  }
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < w.txns.size(); ++i) {
    if (committed.count(w.txns[i].name)) order.push_back(i);
  }
  if (order.size() != committed.size()) throw std::invalid_argument("committed set names unknown transactions");
  std::set<Outcome> outcomes;
  do {
    if (auto o = run_serial(w, order)) outcomes.insert(std::move(*o));
  } while (std::next_permutation(order.begin(), order.end()));
  return outcomes;
}

[[nodiscard]] inline bool check_serializable(const Workload& w, const Outcome& observed) {
  return serial_outcomes(w, observed.committed).count(observed) != 0;
}

// Precedence graph over transactions: T -> T' when an access of T to some
// (instance, field) conflicts with a later-granted access of T'. An access is
// one operation's hold on one field, with the mode it kept after any
// downgrade; accesses downgraded to Null never happened.
struct ConflictGraph {
  std::set<TxnId> nodes;
  std::set<std::pair<TxnId, TxnId>> edges;

  [[nodiscard]] bool acyclic() const {
    std::map<TxnId, std::size_t> indegree;
    for (TxnId n : nodes) indegree[n] = 0;
    for (const auto& [from, to] : edges) ++indegree[to];
    std::vector<TxnId> ready;
    for (const auto& [n, d] : indegree) {
      if (d == 0) ready.push_back(n);
    }
    std::size_t removed = 0;
    while (!ready.empty()) {
      TxnId n = ready.back();
      ready.pop_back();
      ++removed;
      for (auto it = edges.lower_bound({n, 0}); it != edges.end() && it->first == n; ++it) {
        if (--indegree[it->second] == 0) ready.push_back(it->second);
      }
    }
    return removed == indegree.size();
  }
};

[[nodiscard]] inline ConflictGraph conflict_graph(const std::vector<TraceEvent>& events) {
  struct Access {
    TxnId txn;
    AccessMode mode;
  };
  using Site = std::pair<std::string, std::size_t>;
  using OpKey = std::tuple<TxnId, std::uint64_t, std::string, std::size_t>;

  ConflictGraph g;
  std::map<Site, std::vector<Access>> by_site;  // in grant order
  std::map<OpKey, std::pair<Site, std::size_t>> open;  // live access -> slot in by_site

  for (const auto& e : events) {
    g.nodes.insert(e.txn);
    const Site site{e.instance, e.field};
    const OpKey key{e.txn, e.op_seq, e.instance, e.field};
    switch (e.kind) {
      case EventKind::Request:
      case EventKind::Block: break;
      case EventKind::Grant: {
        if (e.mode == AccessMode::Null) throw TraceFormatError("grant of mode N");
        auto it = open.find(key);
        if (it != open.end()) {
          throw TraceFormatError("second grant for " + e.op + "#" + std::to_string(e.op_seq) + " on field " +
                                 std::to_string(e.field));
        }
        auto& list = by_site[site];
        list.push_back({e.txn, e.mode});
        open.emplace(key, std::pair{site, list.size() - 1});
        break;
      }
      case EventKind::Downgrade:
      case EventKind::Release: {
        auto it = open.find(key);
        if (it == open.end()) {
          throw TraceFormatError(std::string(event_name(e.kind)) + " without grant for " + e.op + "#" +
                                 std::to_string(e.op_seq) + " on field " + std::to_string(e.field));
        }
        Access& a = by_site[it->second.first][it->second.second];
        if (!mode_leq(e.mode, a.mode)) throw TraceFormatError("downgrade raises the mode");
        if (e.kind == EventKind::Downgrade) {
          a.mode = e.mode;
          if (e.mode == AccessMode::Null) open.erase(it);
        } else {
          if (e.mode != a.mode) throw TraceFormatError("release mode differs from the held mode");
          open.erase(it);
        }
        break;
      }
    }
  }

  for (const auto& [site, list] : by_site) {
    for (std::size_t i = 0; i < list.size(); ++i) {
      for (std::size_t j = i + 1; j < list.size(); ++j) {
        if (list[i].txn != list[j].txn && !compatible(list[i].mode, list[j].mode)) {
          g.edges.insert({list[i].txn, list[j].txn});
        }
      }
    }
  }
  return g;
}

[[nodiscard]] inline ConflictGraph conflict_graph(std::string_view trace_text) {
  return conflict_graph(parse_trace(trace_text));
}

}  // namespace fieldlock
