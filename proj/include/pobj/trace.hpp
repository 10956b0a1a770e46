#pragma once

// Runtime event log. Each agent appends events with a per-agent sequence
// number; `wire` events record every frame handed to the transport. The
// JSON-lines schema is documented in docs/trace_format.md.

#include <cstdint>
#include <iosfwd>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "pobj/wire.hpp"

namespace pobj {

enum class EventKind : std::uint8_t {
  issue,        // caller sent a work instruction carrying `guard`
  dispatch,     // dispatcher decoded an incoming frame
  exec_start,   // executor began a work instruction
  exec_end,     // executor finished (value or error)
  write_result, // caller filled a result slot
  release,      // caller released a guard
  wait_begin,
  wait_end,
  drain,        // a barrier finished draining its pending set
  local_begin,  // application-labelled local computation
  local_end,
  wire,         // frame handed to the transport
};

std::string_view to_string(EventKind kind);
std::optional<EventKind> event_kind_from(std::string_view name);

struct TraceEvent {
  std::uint64_t seq = 0;
  AgentId agent;
  EventKind kind = EventKind::issue;
  std::int64_t ns = 0;  // steady clock; comparable across processes on one host

  GuardRef guard;  // guard.guard == 0 when not applicable
  std::uint64_t object = 0;
  std::optional<std::uint32_t> method;
  std::optional<std::uint32_t> kind_id;
  std::uint64_t slot = 0;
  AgentId peer;  // destination for issue/wire, source for dispatch/exec
  std::optional<Tag> tag;
  std::uint64_t bytes = 0;    // wire: encoded envelope size
  std::uint64_t digest = 0;   // wire: FNV-1a of data payload
  std::uint64_t digest2 = 0;  // wire: independent second hash
  std::uint64_t data_bytes = 0;  // wire: data payload size
  bool error = false;
  std::string label;

  friend bool operator==(const TraceEvent&, const TraceEvent&) = default;
};

nlohmann::json to_json(const TraceEvent& event);
TraceEvent event_from_json(const nlohmann::json& j);

void write_jsonl(std::ostream& out, const std::vector<TraceEvent>& events);

std::int64_t now_ns();

std::uint64_t fnv1a64(std::span<const std::uint8_t> data);
std::uint64_t mix_hash64(std::span<const std::uint8_t> data);

/// Thread-safe per-agent event sink.
class TraceLog {
 public:
  explicit TraceLog(AgentId agent, bool enabled = true) : agent_(agent), enabled_(enabled) {}

  bool enabled() const { return enabled_; }

  /// Stamps seq, agent and ns, then appends.
  void record(TraceEvent event);

  std::vector<TraceEvent> snapshot() const;

 private:
  AgentId agent_;
  bool enabled_;
  mutable std::mutex mu_;
  std::uint64_t next_seq_ = 0;
  std::vector<TraceEvent> events_;
};

}  // namespace pobj
