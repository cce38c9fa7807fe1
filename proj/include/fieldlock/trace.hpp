#pragma once

// Scheduler event trace. One line per event:
//
//   ts=7 txn=2 op=deposit#0 instance=acct event=grant field=1 mode=W
//
// `ts` is the scheduler clock (steps in deterministic runs, emission order
// otherwise); trace order is emission order. Fields are numbered from 1.

#include <atomic>
#include <cstdint>
#include <functional>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "fieldlock/core.hpp"

namespace fieldlock {

using TxnId = std::uint64_t;

enum class EventKind : std::uint8_t { Request, Block, Grant, Downgrade, Release };

[[nodiscard]] inline std::string_view event_name(EventKind k) noexcept {
  switch (k) {
    case EventKind::Request: return "request";
    case EventKind::Block: return "block";
    case EventKind::Grant: return "grant";
    case EventKind::Downgrade: return "downgrade";
    case EventKind::Release: return "release";
  }
  return "?";
}

struct TraceEvent {
  std::uint64_t ts = 0;
  TxnId txn = 0;
  std::string op;
  std::uint64_t op_seq = 0;  // position of the operation within its transaction
  std::string instance;
  EventKind kind = EventKind::Request;
  std::size_t field = 1;
  AccessMode mode = AccessMode::Null;

  friend bool operator==(const TraceEvent&, const TraceEvent&) = default;
};

[[nodiscard]] inline std::string format_event(const TraceEvent& e) {
  std::string out;
  out += "ts=" + std::to_string(e.ts);
  out += " txn=" + std::to_string(e.txn);
  out += " op=" + e.op + "#" + std::to_string(e.op_seq);
  out += " instance=" + e.instance;
  out += " event=" + std::string(event_name(e.kind));
  out += " field=" + std::to_string(e.field);
  out += " mode=";
  out += mode_char(e.mode);
  return out;
}

class TraceFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

[[nodiscard]] inline TraceEvent parse_event(std::string_view line) {
  TraceEvent e;
  std::istringstream in{std::string(line)};
  std::string token;
  int seen = 0;
  auto number = [&](const std::string& v) -> std::uint64_t {
    try {
      std::size_t used = 0;
      auto n = std::stoull(v, &used);
      if (used != v.size()) throw TraceFormatError("bad number '" + v + "'");
      return n;
    } catch (const std::logic_error&) {
      throw TraceFormatError("bad number '" + v + "' in: " + std::string(line));
    }
  };
  while (in >> token) {
    auto eq = token.find('=');
    if (eq == std::string::npos) throw TraceFormatError("malformed trace token '" + token + "'");
    std::string key = token.substr(0, eq);
    std::string value = token.substr(eq + 1);
    if (key == "ts") {
      e.ts = number(value);
    } else if (key == "txn") {
      e.txn = number(value);
    } else if (key == "op") {
      auto hash = value.rfind('#');
      if (hash == std::string::npos) throw TraceFormatError("op without sequence: " + value);
      e.op = value.substr(0, hash);
      e.op_seq = number(value.substr(hash + 1));
    } else if (key == "instance") {
      e.instance = value;
    } else if (key == "event") {
      if (value == "request") e.kind = EventKind::Request;
      else if (value == "block") e.kind = EventKind::Block;
      else if (value == "grant") e.kind = EventKind::Grant;
      else if (value == "downgrade") e.kind = EventKind::Downgrade;
      else if (value == "release") e.kind = EventKind::Release;
      else throw TraceFormatError("unknown event '" + value + "'");
    } else if (key == "field") {
      e.field = number(value);
      if (e.field == 0) throw TraceFormatError("field indices start at 1");
    } else if (key == "mode") {
      if (value.size() != 1) throw TraceFormatError("bad mode '" + value + "'");
      try {
        e.mode = mode_from_char(value[0]);
      } catch (const std::invalid_argument& err) {
        throw TraceFormatError(err.what());
      }
    } else {
      throw TraceFormatError("unknown trace key '" + key + "'");
    }
    ++seen;
  }
  if (seen != 7) throw TraceFormatError("trace line needs 7 fields: " + std::string(line));
  return e;
}

[[nodiscard]] inline std::vector<TraceEvent> parse_trace(std::string_view text) {
  std::vector<TraceEvent> events;
  std::size_t start = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    auto line = text.substr(start, end - start);
    auto first = line.find_first_not_of(" \t\r");
    // '#' lines separate iterations in multi-run trace files.
    if (first != std::string_view::npos && line[first] != '#') {
      events.push_back(parse_event(line));
    }
    start = end + 1;
  }
  return events;
}

[[nodiscard]] inline std::string format_trace(const std::vector<TraceEvent>& events) {
  std::string out;
  for (const auto& e : events) {
    out += format_event(e);
    out += '\n';
  }
  return out;
}

class EventSink {
 public:
  virtual ~EventSink() = default;
  virtual void emit(TraceEvent event) = 0;
};

// Thread-safe in-memory trace. Timestamps come from the installed clock, or
// from the emission counter when none is set.
class TraceLog final : public EventSink {
 public:
  TraceLog() = default;
  explicit TraceLog(std::function<std::uint64_t()> clock) : clock_(std::move(clock)) {}

  void emit(TraceEvent event) override {
    std::lock_guard lock(mu_);
    event.ts = clock_ ? clock_() : events_.size();
    events_.push_back(std::move(event));
  }

  [[nodiscard]] std::vector<TraceEvent> events() const {
    std::lock_guard lock(mu_);
    return events_;
  }

  [[nodiscard]] std::size_t size() const {
    std::lock_guard lock(mu_);
    return events_.size();
  }

  void clear() {
    std::lock_guard lock(mu_);
    events_.clear();
  }

 private:
  mutable std::mutex mu_;
  std::function<std::uint64_t()> clock_;
  std::vector<TraceEvent> events_;
};

}  // namespace fieldlock
