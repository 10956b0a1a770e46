#include "pobj/trace.hpp"

#include <array>
#include <chrono>
#include <ostream>

#include <nlohmann/json.hpp>

namespace pobj {

namespace {

constexpr std::array<std::string_view, 12> kEventNames = {
    "issue",    "dispatch", "exec_start", "exec_end",    "write_result", "release",
    "wait_begin", "wait_end", "drain",    "local_begin", "local_end",    "wire",
};

}  // namespace

std::string_view to_string(EventKind kind) { return kEventNames[static_cast<std::size_t>(kind)]; }

std::optional<EventKind> event_kind_from(std::string_view name) {
  for (std::size_t i = 0; i < kEventNames.size(); ++i) {
    if (kEventNames[i] == name) return static_cast<EventKind>(i);
  }
  return std::nullopt;
}

nlohmann::json to_json(const TraceEvent& e) {
  nlohmann::json j;
  j["seq"] = e.seq;
  j["agent"] = e.agent.value;
  j["kind"] = to_string(e.kind);
  j["ns"] = e.ns;
  if (e.guard.guard != 0) {
    j["guard_agent"] = e.guard.agent.value;
    j["guard"] = e.guard.guard;
  }
  if (e.object != 0) j["object"] = e.object;
  if (e.method) j["method"] = *e.method;
  if (e.kind_id) j["kind_id"] = *e.kind_id;
  if (e.slot != 0) j["slot"] = e.slot;
  j["peer"] = e.peer.value;
  if (e.tag) j["tag"] = tag_name(*e.tag);
  if (e.kind == EventKind::wire || e.data_bytes != 0) {
    j["bytes"] = e.bytes;
    j["data_bytes"] = e.data_bytes;
    j["digest"] = e.digest;
    j["digest2"] = e.digest2;
  }
  if (e.error) j["error"] = true;
  if (!e.label.empty()) j["label"] = e.label;
  return j;
}

TraceEvent event_from_json(const nlohmann::json& j) {
  TraceEvent e;
  e.seq = j.at("seq").get<std::uint64_t>();
  e.agent.value = j.at("agent").get<std::uint64_t>();
  const auto kind_name = j.at("kind").get<std::string>();
  const auto kind = event_kind_from(kind_name);
  if (!kind) throw std::invalid_argument("unknown event kind '" + kind_name + "'");
  e.kind = *kind;
  e.ns = j.at("ns").get<std::int64_t>();
  if (j.contains("guard")) {
    e.guard.guard = j["guard"].get<std::uint64_t>();
    e.guard.agent.value = j.value("guard_agent", std::uint64_t{0});
  }
  e.object = j.value("object", std::uint64_t{0});
  if (j.contains("method")) e.method = j["method"].get<std::uint32_t>();
  if (j.contains("kind_id")) e.kind_id = j["kind_id"].get<std::uint32_t>();
  e.slot = j.value("slot", std::uint64_t{0});
  e.peer.value = j.value("peer", std::uint64_t{0});
  if (j.contains("tag")) {
    const auto name = j["tag"].get<std::string>();
    e.tag = tag_from_name(name);
    if (!e.tag) throw std::invalid_argument("unknown instruction tag '" + name + "'");
  }
  e.bytes = j.value("bytes", std::uint64_t{0});
  e.data_bytes = j.value("data_bytes", std::uint64_t{0});
  e.digest = j.value("digest", std::uint64_t{0});
  e.digest2 = j.value("digest2", std::uint64_t{0});
  e.error = j.value("error", false);
  e.label = j.value("label", std::string{});
  return e;
}

void write_jsonl(std::ostream& out, const std::vector<TraceEvent>& events) {
  for (const auto& e : events) out << to_json(e).dump() << '\n';
}

std::int64_t now_ns() {
  return std::chrono::duration_cast<std::chrono::nanoseconds>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

std::uint64_t fnv1a64(std::span<const std::uint8_t> data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto b : data) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// splitmix64 finalizer folded over 8-byte words; unrelated to FNV so that a
// collision in one is not a collision in the other.
std::uint64_t mix_hash64(std::span<const std::uint8_t> data) {
  auto mix = [](std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  std::uint64_t h = mix(data.size() + 0x9e3779b97f4a7c15ULL);
  std::size_t i = 0;
  for (; i + 8 <= data.size(); i += 8) {
    std::uint64_t w = 0;
    for (int k = 0; k < 8; ++k) w |= std::uint64_t{data[i + k]} << (8 * k);
    h = mix(h ^ w) + 0x9e3779b97f4a7c15ULL;
  }
  std::uint64_t tail = 0;
  for (int k = 0; i < data.size(); ++i, ++k) tail |= std::uint64_t{data[i]} << (8 * k);
  return mix(h ^ tail);
}

void TraceLog::record(TraceEvent event) {
  if (!enabled_) return;
  std::lock_guard lock(mu_);
  event.seq = next_seq_++;
  event.agent = agent_;
  event.ns = now_ns();
  events_.push_back(std::move(event));
}

std::vector<TraceEvent> TraceLog::snapshot() const {
  std::lock_guard lock(mu_);
  return events_;
}

}  // namespace pobj
