#include "pobj/analysis.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <tuple>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

namespace pobj {

namespace {

std::string join_lines(const std::vector<std::string>& lines) {
  std::string out = "invalid trace:";
  const std::size_t shown = std::min<std::size_t>(lines.size(), 20);
  for (std::size_t i = 0; i < shown; ++i) out += "\n  " + lines[i];
  if (lines.size() > shown) out += fmt::format("\n  ... {} more", lines.size() - shown);
  return out;
}

std::string guard_text(const GuardRef& g) { return fmt::format("{}:{}", g.agent.value, g.guard); }

bool by_agent_seq(const TraceEvent& a, const TraceEvent& b) {
  return std::tie(a.agent, a.seq) < std::tie(b.agent, b.seq);
}

}  // namespace

TraceValidationError::TraceValidationError(std::vector<std::string> offenders)
    : std::runtime_error(join_lines(offenders)), offenders_(std::move(offenders)) {}

std::vector<AgentId> Trace::agents() const {
  std::set<AgentId> ids;
  for (const auto& e : events) ids.insert(e.agent);
  return {ids.begin(), ids.end()};
}

std::vector<const TraceEvent*> Trace::wire() const {
  std::vector<const TraceEvent*> out;
  for (const auto& e : events) {
    if (e.kind == EventKind::wire) out.push_back(&e);
  }
  return out;
}

std::vector<std::string> validate_events(const std::vector<TraceEvent>& events) {
  std::vector<std::string> problems;
  std::map<AgentId, std::vector<std::uint64_t>> seqs;
  std::set<std::pair<AgentId, GuardRef>> issued;
  std::set<std::pair<AgentId, GuardRef>> finished;
  for (const auto& e : events) {
    seqs[e.agent].push_back(e.seq);
    if (e.kind == EventKind::issue) issued.emplace(e.agent, e.guard);
    if (e.kind == EventKind::exec_end) finished.emplace(e.agent, e.guard);
  }
  for (auto& [agent, list] : seqs) {
    std::sort(list.begin(), list.end());
    for (std::size_t i = 0; i < list.size(); ++i) {
      if (list[i] != i) {
        problems.push_back(fmt::format("agent {}: sequence gap at seq {} (expected {})",
                                       agent.value, list[i], i));
        break;
      }
    }
  }
  for (const auto& e : events) {
    if (e.kind != EventKind::wire) continue;
    if (!e.tag) {
      problems.push_back(fmt::format("agent {} seq {}: wire record without tag", e.agent.value,
                                     e.seq));
      continue;
    }
    const bool reply = *e.tag == Tag::write_result || *e.tag == Tag::release_guard;
    const auto key = std::make_pair(e.agent, e.guard);
    if (reply ? !finished.count(key) : !issued.count(key)) {
      problems.push_back(fmt::format("agent {} seq {}: orphan {} wire record for guard {}",
                                     e.agent.value, e.seq, tag_name(*e.tag),
                                     guard_text(e.guard)));
    }
  }
  return problems;
}

Trace make_trace(std::vector<TraceEvent> events) {
  std::stable_sort(events.begin(), events.end(), by_agent_seq);
  auto problems = validate_events(events);
  if (!problems.empty()) throw TraceValidationError(std::move(problems));
  return Trace{std::move(events)};
}

Trace load_trace(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw TraceValidationError({"cannot open " + path});
  std::vector<TraceEvent> events;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      events.push_back(event_from_json(nlohmann::json::parse(line)));
    } catch (const std::exception& e) {
      throw TraceValidationError({fmt::format("{}:{}: {}", path, number, e.what())});
    }
  }
  if (events.empty()) throw TraceValidationError({path + ": trace is empty"});
  return make_trace(std::move(events));
}

TrafficMatrix traffic_matrix(const Trace& trace) {
  TrafficMatrix m;
  for (const auto* e : trace.wire()) {
    auto& cell = m[{e->agent, e->peer}];
    ++cell.messages;
    cell.bytes += e->bytes;
  }
  return m;
}

std::vector<BroadcastGroup> detect_broadcast(const Trace& trace, std::size_t min_fanout) {
  struct Key {
    AgentId source;
    std::uint64_t window;
    std::uint64_t digest;
    std::uint64_t payload_bytes;
    auto operator<=>(const Key&) const = default;
  };
  struct Acc {
    BroadcastGroup group;
    std::set<std::uint64_t> second;
  };
  std::map<Key, Acc> groups;
  std::map<AgentId, std::uint64_t> window;
  for (const auto& e : trace.events) {
    if (e.kind == EventKind::drain) {
      ++window[e.agent];
      continue;
    }
    if (e.kind != EventKind::wire || !e.tag) continue;
    if (*e.tag != Tag::copy_block && *e.tag != Tag::write_result) continue;
    const Key key{e.agent, window[e.agent], e.digest, e.data_bytes};
    auto& acc = groups[key];
    acc.group.source = e.agent;
    acc.group.window = key.window;
    acc.group.digest = e.digest;
    acc.group.payload_bytes = e.data_bytes;
    acc.group.destinations.insert(e.peer);
    ++acc.group.count;
    acc.second.insert(e.digest2);
  }
  std::vector<BroadcastGroup> out;
  for (auto& [_, acc] : groups) {
    if (acc.group.fanout() < std::max<std::size_t>(min_fanout, 2)) continue;
    // Equal first hashes with differing second hashes are a collision, not
    // a broadcast.
    acc.group.verified = acc.second.size() == 1;
    if (acc.group.verified) out.push_back(std::move(acc.group));
  }
  return out;
}

nlohmann::json summary_json(const TrafficMatrix& matrix, const std::vector<BroadcastGroup>& groups) {
  nlohmann::json j;
  j["matrix"] = nlohmann::json::array();
  std::uint64_t messages = 0;
  std::uint64_t bytes = 0;
  for (const auto& [pair, cell] : matrix) {
    j["matrix"].push_back({{"src", pair.first.value},
                           {"dst", pair.second.value},
                           {"messages", cell.messages},
                           {"bytes", cell.bytes}});
    messages += cell.messages;
    bytes += cell.bytes;
  }
  j["totals"] = {{"messages", messages}, {"bytes", bytes}};
  j["broadcast_groups"] = nlohmann::json::array();
  for (const auto& g : groups) {
    nlohmann::json dst = nlohmann::json::array();
    for (const auto& d : g.destinations) dst.push_back(d.value);
    j["broadcast_groups"].push_back({{"source", g.source.value},
                                     {"window", g.window},
                                     {"digest", fmt::format("{:016x}", g.digest)},
                                     {"payload_bytes", g.payload_bytes},
                                     {"fanout", g.fanout()},
                                     {"count", g.count},
                                     {"bytes_saved", g.bytes_saved()},
                                     {"destinations", dst}});
  }
  return j;
}

std::string format_report(const TrafficMatrix& matrix, const std::vector<BroadcastGroup>& groups) {
  std::ostringstream out;
  std::uint64_t messages = 0;
  std::uint64_t bytes = 0;
  out << "traffic matrix (src -> dst: messages, bytes)\n";
  for (const auto& [pair, cell] : matrix) {
    out << fmt::format("  {:>4} -> {:<4} {:>10} {:>14}\n", pair.first.value, pair.second.value,
                       cell.messages, cell.bytes);
    messages += cell.messages;
    bytes += cell.bytes;
  }
  out << fmt::format("  total        {:>10} {:>14}\n", messages, bytes);
  out << fmt::format("broadcast groups: {}\n", groups.size());
  for (const auto& g : groups) {
    out << fmt::format(
        "  source {} window {} digest {:016x}: {} bytes to {} agents ({} instructions), "
        "{} bytes saved if aggregated\n",
        g.source.value, g.window, g.digest, g.payload_bytes, g.fanout(), g.count,
        g.bytes_saved());
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Audits

GuardAudit audit_guards(const Trace& trace) {
  GuardAudit audit;
  struct Info {
    bool issued = false;
    int releases = 0;
    std::uint64_t release_seq = 0;
  };
  std::map<GuardRef, Info> guards;
  // Executor-side wire order per guard: last WriteResult seq, ReleaseGuard seq.
  std::map<std::pair<AgentId, GuardRef>, std::pair<std::uint64_t, std::uint64_t>> wire;

  for (const auto& e : trace.events) {
    switch (e.kind) {
      case EventKind::issue: {
        auto& info = guards[e.guard];
        if (info.issued) audit.violations.push_back("guard " + guard_text(e.guard) + " issued twice");
        info.issued = true;
        ++audit.issued;
        break;
      }
      case EventKind::release: {
        auto& info = guards[e.guard];
        if (++info.releases > 1) {
          audit.violations.push_back("guard " + guard_text(e.guard) + " released twice");
        } else {
          ++audit.released;
        }
        info.release_seq = e.seq;
        break;
      }
      case EventKind::wire: {
        if (!e.tag) break;
        auto& w = wire[{e.agent, e.guard}];
        if (*e.tag == Tag::write_result) {
          if (w.second != 0) {
            audit.violations.push_back(fmt::format(
                "agent {}: WriteResult for guard {} sent after its ReleaseGuard", e.agent.value,
                guard_text(e.guard)));
          }
          w.first = e.seq + 1;
        } else if (*e.tag == Tag::release_guard) {
          w.second = e.seq + 1;
        }
        break;
      }
      default:
        break;
    }
  }
  for (const auto& e : trace.events) {
    if (e.kind != EventKind::wait_end) continue;
    auto it = guards.find(e.guard);
    if (it == guards.end() || it->second.releases == 0) {
      audit.violations.push_back("wait on guard " + guard_text(e.guard) + " ended without release");
    } else if (it->second.release_seq > e.seq) {
      audit.violations.push_back("wait on guard " + guard_text(e.guard) +
                                 " ended before its release");
    }
  }
  for (const auto& [guard, info] : guards) {
    if (info.issued && info.releases == 0) {
      audit.violations.push_back("guard " + guard_text(guard) + " never released");
    }
    if (!info.issued && info.releases > 0) {
      audit.violations.push_back("guard " + guard_text(guard) + " released but never issued");
    }
  }
  return audit;
}

std::vector<std::string> audit_sequential(const Trace& trace) {
  std::vector<const TraceEvent*> points;
  for (const auto& e : trace.events) {
    if (e.kind == EventKind::issue || e.kind == EventKind::wait_end) points.push_back(&e);
  }
  std::stable_sort(points.begin(), points.end(), [](const TraceEvent* a, const TraceEvent* b) {
    return std::tie(a->ns, a->agent, a->seq) < std::tie(b->ns, b->agent, b->seq);
  });
  std::vector<std::string> violations;
  std::vector<GuardRef> stack;
  for (const auto* e : points) {
    if (e->kind == EventKind::issue) {
      stack.push_back(e->guard);
      continue;
    }
    // A wait on a guard this trace never saw issued (or already waited) is
    // outside the audit's scope.
    auto it = std::find(stack.begin(), stack.end(), e->guard);
    if (it == stack.end()) continue;
    if (it + 1 != stack.end()) {
      violations.push_back(fmt::format("guard {} completed while {} newer guard(s) in flight",
                                       guard_text(e->guard), stack.end() - it - 1));
    }
    stack.erase(it);
  }
  return violations;
}

std::vector<ExecSpan> exec_spans(const Trace& trace) {
  std::map<GuardRef, ExecSpan> spans;
  for (const auto& e : trace.events) {
    switch (e.kind) {
      case EventKind::issue: {
        auto& s = spans[e.guard];
        s.guard = e.guard;
        s.issue_ns = e.ns;
        s.object = e.object;
        s.method = e.method;
        if (e.kind_id) s.kind_id = e.kind_id;
        break;
      }
      case EventKind::exec_start: {
        auto& s = spans[e.guard];
        s.guard = e.guard;
        s.executor = e.agent;
        s.start_ns = e.ns;
        if (e.kind_id) s.kind_id = e.kind_id;
        break;
      }
      case EventKind::exec_end: {
        auto& s = spans[e.guard];
        s.end_ns = e.ns;
        s.error = e.error;
        break;
      }
      case EventKind::release:
        spans[e.guard].release_ns = e.ns;
        break;
      default:
        break;
    }
  }
  std::vector<ExecSpan> out;
  out.reserve(spans.size());
  for (auto& [_, s] : spans) out.push_back(s);
  std::sort(out.begin(), out.end(),
            [](const ExecSpan& a, const ExecSpan& b) { return a.start_ns < b.start_ns; });
  return out;
}

std::vector<LocalSpan> local_spans(const Trace& trace) {
  std::vector<LocalSpan> out;
  std::map<std::pair<AgentId, std::string>, std::vector<std::int64_t>> open;
  for (const auto& e : trace.events) {
    if (e.kind == EventKind::local_begin) {
      open[{e.agent, e.label}].push_back(e.ns);
    } else if (e.kind == EventKind::local_end) {
      auto& stack = open[{e.agent, e.label}];
      if (stack.empty()) continue;
      out.push_back(LocalSpan{e.agent, e.label, stack.back(), e.ns});
      stack.pop_back();
    }
  }
  return out;
}

}  // namespace pobj
