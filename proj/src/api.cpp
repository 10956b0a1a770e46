#include "pobj/api.hpp"

#include <map>
#include <stdexcept>

#include <cereal/types/map.hpp>
#include <spdlog/spdlog.h>

namespace pobj {

namespace {

/// Common issue path: allocates guard and slots, records the issue event,
/// registers the future in the innermost scope, and posts the instruction.
template <class Build>
std::shared_ptr<FutureState> issue(AgentId dst, bool with_result, std::vector<RawArg> args,
                                   TraceEvent ev, Build build) {
  Activity& activity = require_activity();
  Agent& agent = *activity.agent;
  GuardTable& table = agent.guards();

  const GuardRef guard{agent.id(), table.create_guard()};
  const ResultSlot result{agent.id(), with_result ? table.create_slot() : 0};
  auto state = std::make_shared<FutureState>(agent, guard.guard, result.slot);

  ParamList params;
  params.reserve(args.size());
  for (auto& arg : args) {
    Param p;
    p.payload = std::move(arg.payload);
    if (arg.writeback) {
      p.mode = ParamMode::by_reference;
      p.writeback = ResultSlot{agent.id(), table.create_slot()};
      state->add_writeback(p.writeback.slot, std::move(arg.writeback));
    }
    params.push_back(std::move(p));
  }

  Instruction instruction = build(guard, result, std::move(params));
  ev.kind = EventKind::issue;
  ev.guard = guard;
  ev.slot = result.slot;
  ev.peer = dst;
  ev.tag = tag_of(instruction);
  agent.trace().record(std::move(ev));

  activity.scope->add(state);
  agent.post(dst, std::move(instruction), guard);
  if (agent.mode() == ExecMode::distributed_sequential) state->settle();
  return state;
}

}  // namespace

std::shared_ptr<FutureState> remote_construct(AgentId host, std::uint32_t kind_id,
                                              std::vector<RawArg> params) {
  TraceEvent ev;
  ev.kind_id = kind_id;
  return issue(host, true, std::move(params), std::move(ev),
               [&](GuardRef guard, ResultSlot result, ParamList p) -> Instruction {
                 return Construct{kind_id, result, guard, std::move(p)};
               });
}

std::shared_ptr<FutureState> remote_invoke(RemoteRef target, std::uint32_t method_id,
                                           std::vector<RawArg> params) {
  if (target.is_null()) throw std::invalid_argument("invoke on a null reference");
  TraceEvent ev;
  ev.object = target.object;
  ev.method = method_id;
  return issue(target.agent, true, std::move(params), std::move(ev),
               [&](GuardRef guard, ResultSlot result, ParamList p) -> Instruction {
                 return Invoke{target, method_id, result, guard, std::move(p)};
               });
}

std::shared_ptr<FutureState> remote_destroy(RemoteRef target) {
  if (target.is_null()) throw std::invalid_argument("destroy of a null reference");
  TraceEvent ev;
  ev.object = target.object;
  return issue(target.agent, false, {}, std::move(ev),
               [&](GuardRef guard, ResultSlot, ParamList) -> Instruction {
                 return Destroy{target, guard};
               });
}

std::shared_ptr<FutureState> remote_read(RemoteRef target, std::uint64_t offset,
                                         std::uint64_t length) {
  if (target.is_null()) throw std::invalid_argument("read from a null reference");
  TraceEvent ev;
  ev.object = target.object;
  ev.data_bytes = length;
  return issue(target.agent, true, {}, std::move(ev),
               [&](GuardRef guard, ResultSlot result, ParamList) -> Instruction {
                 return ReadBlock{target, offset, length, result, guard};
               });
}

std::shared_ptr<FutureState> remote_write(RemoteRef target, std::uint64_t offset, Bytes bytes) {
  if (target.is_null()) throw std::invalid_argument("write to a null reference");
  TraceEvent ev;
  ev.object = target.object;
  ev.data_bytes = bytes.size();
  return issue(target.agent, false, {}, std::move(ev),
               [&](GuardRef guard, ResultSlot, ParamList) -> Instruction {
                 return CopyBlock{target, offset, std::move(bytes), guard};
               });
}

AgentId this_agent() { return require_activity().agent->id(); }

ExecMode current_mode() { return require_activity().agent->mode(); }

void drain() {
  Activity& activity = require_activity();
  activity.scope->drain(*activity.agent);
}

namespace detail {

void record_local(EventKind kind, std::string_view label) {
  Activity* activity = current_activity();
  if (activity == nullptr || activity->agent == nullptr) return;
  TraceEvent ev;
  ev.kind = kind;
  ev.label = std::string(label);
  activity->agent->trace().record(std::move(ev));
}

}  // namespace detail

void run_child_activities(std::size_t n, const std::function<void(std::size_t)>& body) {
  Activity& parent = require_activity();
  Agent& agent = *parent.agent;
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::thread> children;
  children.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    children.emplace_back([&, i] {
      Scope root;
      Activity child{&agent, &root, false, parent.self};
      ActivityBinding bind(child);
      try {
        body(i);
        root.drain(agent);
      } catch (...) {
        errors[i] = std::current_exception();
        try {
          root.drain(agent);
        } catch (...) {
        }
      }
    });
  }
  agent.blocking([&] {
    for (auto& t : children) t.join();
  });
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

// ---------------------------------------------------------------------------
// Builtin kinds

namespace {

/// Name → agent assignment service living on agent 0.
class HostRegistry {
 public:
  HostRegistry(std::vector<AgentAddress> agents, std::uint64_t capacity)
      : agents_(std::move(agents)), capacity_(capacity) {}

  AgentAddress resolve(const std::string& name) {
    if (auto it = names_.find(name); it != names_.end()) return agents_[it->second];
    if (agents_.empty()) throw std::runtime_error("cluster has no application agents");
    if (capacity_ != 0 && names_.size() >= capacity_ * agents_.size()) {
      throw std::runtime_error("no capacity left for host '" + name + "' (" +
                               std::to_string(names_.size()) + " hosts assigned)");
    }
    const std::size_t index = next_++ % agents_.size();
    names_.emplace(name, index);
    spdlog::info("host '{}' -> agent {}", name, agents_[index].agent.value);
    return agents_[index];
  }

  std::map<std::string, std::uint64_t> assignments() const {
    std::map<std::string, std::uint64_t> out;
    for (const auto& [name, index] : names_) out.emplace(name, agents_[index].agent.value);
    return out;
  }

 private:
  std::vector<AgentAddress> agents_;
  std::uint64_t capacity_;
  std::map<std::string, std::size_t> names_;
  std::size_t next_ = 0;
};

class DoubleArray {
 public:
  explicit DoubleArray(std::uint64_t size) : data_(size, 0.0) {}
  std::uint64_t size() const { return data_.size(); }
  std::span<std::uint8_t> bytes() {
    return {reinterpret_cast<std::uint8_t*>(data_.data()), data_.size() * sizeof(double)};
  }

 private:
  std::vector<double> data_;
};

constexpr Kind<HostRegistry, std::vector<AgentAddress>, std::uint64_t> kHostRegistry{
    kHostRegistryKind};
constexpr Method<&HostRegistry::resolve> kResolve{1};
constexpr Method<&HostRegistry::assignments> kAssignments{2};

constexpr Kind<DoubleArray, std::uint64_t> kDoubleArray{kDoubleArrayKind};
constexpr Method<&DoubleArray::size> kArraySize{1};

}  // namespace

void register_builtin_kinds(KindRegistry& registry) {
  KindBuilder(kHostRegistry, "HostRegistry")
      .method(kResolve, "resolve")
      .method(kAssignments, "assignments")
      .register_in(registry);
  KindBuilder(kDoubleArray, "DoubleArray")
      .method(kArraySize, "size")
      .block([](DoubleArray& a) { return a.bytes(); })
      .register_in(registry);
}

Future<AgentAddress> create_host(const std::string& name) {
  return call(Remote<HostRegistry>(RemoteRef{kRegistryAgent, 1}), kResolve, name);
}

std::unique_ptr<Instance> make_host_registry(std::vector<AgentAddress> agents,
                                             std::uint64_t capacity) {
  return std::make_unique<Holder<HostRegistry>>(std::move(agents), capacity);
}

RemoteArray RemoteArray::create(AgentId host, std::uint64_t size) {
  auto ref = construct(kDoubleArray, host, size).get();
  return RemoteArray(ref.ref(), size);
}

void RemoteArray::check_range(std::uint64_t first, std::uint64_t count) const {
  if (first > size_ || count > size_ - first) {
    throw std::out_of_range("elements [" + std::to_string(first) + ", " +
                            std::to_string(first + count) + ") outside array of " +
                            std::to_string(size_));
  }
}

Future<double> RemoteArray::get(std::uint64_t index) const {
  // Reads are range-checked by the executor so the error travels back.
  return Future<double>(remote_read(ref_, index * sizeof(double), sizeof(double)), true);
}

Future<void> RemoteArray::set(std::uint64_t index, double value) const {
  check_range(index, 1);
  Bytes bytes(sizeof(double));
  std::memcpy(bytes.data(), &value, sizeof(double));
  return Future<void>(remote_write(ref_, index * sizeof(double), std::move(bytes)));
}

Future<std::vector<double>> RemoteArray::read(std::uint64_t first, std::uint64_t count) const {
  return Future<std::vector<double>>(
      remote_read(ref_, first * sizeof(double), count * sizeof(double)), true);
}

Future<void> RemoteArray::write(std::uint64_t first, std::span<const double> values) const {
  check_range(first, values.size());
  Bytes bytes(values.size() * sizeof(double));
  std::memcpy(bytes.data(), values.data(), bytes.size());
  return Future<void>(remote_write(ref_, first * sizeof(double), std::move(bytes)));
}

}  // namespace pobj
