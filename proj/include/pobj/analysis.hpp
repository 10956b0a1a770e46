#pragma once

// Offline trace analysis: validation, traffic matrices, broadcast-pattern
// detection and the guard/ordering audits used by the test suites.

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "pobj/trace.hpp"

namespace pobj {

class TraceValidationError : public std::runtime_error {
 public:
  explicit TraceValidationError(std::vector<std::string> offenders);
  const std::vector<std::string>& offenders() const { return offenders_; }

 private:
  std::vector<std::string> offenders_;
};

/// Merged events ordered by (agent, seq).
struct Trace {
  std::vector<TraceEvent> events;

  std::vector<AgentId> agents() const;
  std::vector<const TraceEvent*> wire() const;
};

/// Problems found: seq gaps per agent, wire records without a matching
/// issue (initiating tags) or exec_end (replies). Empty when valid.
std::vector<std::string> validate_events(const std::vector<TraceEvent>& events);

/// Sorts and validates; throws TraceValidationError.
Trace make_trace(std::vector<TraceEvent> events);

/// Reads JSON lines; an empty or unparsable file is a validation error.
Trace load_trace(const std::string& path);

struct TrafficCell {
  std::uint64_t messages = 0;
  std::uint64_t bytes = 0;
};

using TrafficMatrix = std::map<std::pair<AgentId, AgentId>, TrafficCell>;

/// Counts wire records per ordered (source, destination) pair.
TrafficMatrix traffic_matrix(const Trace& trace);

struct BroadcastGroup {
  AgentId source;
  std::uint64_t window = 0;  // number of drains on the source before the group
  std::uint64_t digest = 0;
  std::uint64_t payload_bytes = 0;
  std::set<AgentId> destinations;
  std::uint64_t count = 0;  // instructions in the group
  bool verified = false;    // second hash agrees on every member

  std::size_t fanout() const { return destinations.size(); }
  std::uint64_t bytes_saved() const {
    return fanout() < 2 ? 0 : payload_bytes * (fanout() - 1);
  }
};

/// Groups CopyBlock/WriteResult records from one source within one drain
/// window that carry byte-identical payloads to >= min_fanout agents.
std::vector<BroadcastGroup> detect_broadcast(const Trace& trace, std::size_t min_fanout = 2);

nlohmann::json summary_json(const TrafficMatrix& matrix, const std::vector<BroadcastGroup>& groups);
std::string format_report(const TrafficMatrix& matrix, const std::vector<BroadcastGroup>& groups);

// ---------------------------------------------------------------------------
// Audits

struct GuardAudit {
  std::uint64_t issued = 0;
  std::uint64_t released = 0;
  std::vector<std::string> violations;

  bool ok() const { return violations.empty() && issued == released; }
};

/// Every issued guard released exactly once; every WriteResult for a guard
/// leaves the executor before its ReleaseGuard; no wait ends before the
/// release it waits for.
GuardAudit audit_guards(const Trace& trace);

/// Distributed-sequential shape: in-flight guards (issue to wait_end),
/// ordered by timestamp across all agents, nest strictly; a new guard is
/// only issued while every older one is waiting on it. Returns violations.
std::vector<std::string> audit_sequential(const Trace& trace);

/// Execution of one work instruction, joined from issue/exec/release events.
struct ExecSpan {
  GuardRef guard;
  AgentId executor;
  std::uint64_t object = 0;
  std::optional<std::uint32_t> method;
  std::optional<std::uint32_t> kind_id;
  std::int64_t issue_ns = 0;
  std::int64_t start_ns = 0;
  std::int64_t end_ns = 0;
  std::int64_t release_ns = 0;  // release observed by the issuer
  bool error = false;
};

std::vector<ExecSpan> exec_spans(const Trace& trace);

/// Labelled local computations (local_begin/local_end pairs).
struct LocalSpan {
  AgentId agent;
  std::string label;
  std::int64_t begin_ns = 0;
  std::int64_t end_ns = 0;
};

std::vector<LocalSpan> local_spans(const Trace& trace);

}  // namespace pobj
