#include "pobj/agent.hpp"

#include <cstring>

#include <spdlog/spdlog.h>

namespace pobj {

namespace {

thread_local WorkerPool* tl_pool = nullptr;

template <class... Fs>
struct Overloaded : Fs... {
  using Fs::operator()...;
};
template <class... Fs>
Overloaded(Fs...) -> Overloaded<Fs...>;

class ExecutionFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace

std::string_view to_string(ExecMode mode) {
  return mode == ExecMode::causal_async ? "causal" : "seq";
}

ExecMode parse_exec_mode(std::string_view text) {
  if (text == "causal" || text == "causal_async") return ExecMode::causal_async;
  if (text == "seq" || text == "sequential" || text == "distributed_sequential") {
    return ExecMode::distributed_sequential;
  }
  throw std::invalid_argument("unknown execution mode '" + std::string(text) + "'");
}

std::uint64_t split_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + (salt + 1) * 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

AgentHealth& AgentHealth::operator+=(const AgentHealth& other) {
  protocol_errors += other.protocol_errors;
  malformed_frames += other.malformed_frames;
  transport_errors += other.transport_errors;
  failed_executions += other.failed_executions;
  pool_exhausted = pool_exhausted || other.pool_exhausted;
  peak_workers = std::max(peak_workers, other.peak_workers);
  return *this;
}

// ---------------------------------------------------------------------------
// GuardTable

std::uint64_t GuardTable::create_guard() {
  std::lock_guard lock(mu_);
  const std::uint64_t id = next_guard_++;
  guards_.emplace(id, false);
  return id;
}

std::uint64_t GuardTable::create_slot() {
  std::lock_guard lock(mu_);
  const std::uint64_t id = next_slot_++;
  slots_.emplace(id, std::nullopt);
  return id;
}

GuardTable::Outcome GuardTable::release(std::uint64_t guard,
                                        const std::function<void()>& before_wake) {
  {
    std::lock_guard lock(mu_);
    auto it = guards_.find(guard);
    if (it == guards_.end()) return Outcome::unknown;
    if (it->second) return Outcome::duplicate;
    if (before_wake) before_wake();
    it->second = true;
  }
  cv_.notify_all();
  return Outcome::ok;
}

bool GuardTable::is_released(std::uint64_t guard) const {
  std::lock_guard lock(mu_);
  auto it = guards_.find(guard);
  return it != guards_.end() && it->second;
}

bool GuardTable::wait(std::uint64_t guard, std::chrono::milliseconds timeout) {
  std::unique_lock lock(mu_);
  auto released = [&] {
    auto it = guards_.find(guard);
    return it == guards_.end() || it->second;
  };
  if (timeout.count() <= 0) {
    cv_.wait(lock, released);
    return true;
  }
  return cv_.wait_for(lock, timeout, released);
}

GuardTable::Outcome GuardTable::write_slot(std::uint64_t slot, Bytes payload) {
  std::lock_guard lock(mu_);
  auto it = slots_.find(slot);
  if (it == slots_.end()) return Outcome::unknown;
  if (it->second) return Outcome::duplicate;
  it->second = std::move(payload);
  return Outcome::ok;
}

std::optional<Bytes> GuardTable::take_slot(std::uint64_t slot) {
  std::lock_guard lock(mu_);
  auto it = slots_.find(slot);
  if (it == slots_.end()) return std::nullopt;
  std::optional<Bytes> out = std::move(it->second);
  slots_.erase(it);
  return out;
}

void GuardTable::retire(std::uint64_t guard) {
  std::lock_guard lock(mu_);
  guards_.erase(guard);
}

std::size_t GuardTable::pending_guards() const {
  std::lock_guard lock(mu_);
  std::size_t n = 0;
  for (const auto& [_, released] : guards_) n += released ? 0 : 1;
  return n;
}

// ---------------------------------------------------------------------------
// WorkerPool

WorkerPool::WorkerPool(std::size_t initial, std::size_t ceiling, std::function<void()> on_exhausted)
    : initial_(std::max<std::size_t>(1, initial)),
      ceiling_(std::max(ceiling, std::max<std::size_t>(1, initial))),
      on_exhausted_(std::move(on_exhausted)) {}

WorkerPool::~WorkerPool() { stop(); }

void WorkerPool::start() {
  std::lock_guard lock(mu_);
  while (threads_.size() < initial_) spawn_locked();
}

void WorkerPool::spawn_locked() {
  threads_.emplace_back([this] { worker_loop(); });
  peak_ = std::max(peak_, threads_.size());
}

void WorkerPool::submit(std::function<void()> job) {
  {
    std::lock_guard lock(mu_);
    jobs_.push_back(std::move(job));
  }
  cv_.notify_one();
}

void WorkerPool::block_begin() {
  bool exhausted = false;
  {
    std::lock_guard lock(mu_);
    ++blocked_;
    if (idle_ == 0 && !stopping_) {
      if (threads_.size() < ceiling_) {
        spawn_locked();
      } else if (!exhausted_reported_) {
        exhausted_reported_ = true;
        exhausted = true;
      }
    }
  }
  if (exhausted && on_exhausted_) on_exhausted_();
}

void WorkerPool::block_end() {
  std::lock_guard lock(mu_);
  --blocked_;
}

void WorkerPool::worker_loop() {
  tl_pool = this;
  std::unique_lock lock(mu_);
  for (;;) {
    ++idle_;
    cv_.wait(lock, [&] { return stopping_ || !jobs_.empty(); });
    --idle_;
    if (jobs_.empty()) break;
    auto job = std::move(jobs_.front());
    jobs_.pop_front();
    lock.unlock();
    job();
    lock.lock();
  }
  tl_pool = nullptr;
}

void WorkerPool::stop() {
  std::vector<std::thread> threads;
  {
    std::lock_guard lock(mu_);
    stopping_ = true;
  }
  cv_.notify_all();
  // Workers may spawn replacements while finishing; join until none remain.
  for (;;) {
    {
      std::lock_guard lock(mu_);
      if (threads_.empty()) break;
      threads.swap(threads_);
    }
    for (auto& t : threads) t.join();
    threads.clear();
  }
}

std::size_t WorkerPool::size() const {
  std::lock_guard lock(mu_);
  return threads_.size();
}

std::size_t WorkerPool::peak() const {
  std::lock_guard lock(mu_);
  return peak_;
}

// ---------------------------------------------------------------------------
// Agent

Agent::Agent(AgentId id, std::shared_ptr<Endpoint> endpoint,
             std::shared_ptr<const KindRegistry> kinds, AgentConfig config)
    : id_(id),
      endpoint_(std::move(endpoint)),
      kinds_(std::move(kinds)),
      config_(config),
      trace_(id, config.trace),
      pool_(config.initial_workers, config.pool_ceiling,
            [this] {
              pool_exhausted_ = true;
              spdlog::error("agent {}: worker pool exhausted at ceiling {} (likely cyclic wait)",
                            id_.value, config_.pool_ceiling);
            }),
      dispatch_rng_(split_seed(config.seed, id.value * 2 + 1)),
      send_rng_(split_seed(config.seed, id.value * 2 + 2)) {}

Agent::~Agent() { stop(); }

void Agent::start() {
  if (started_) return;
  started_ = true;
  pool_.start();
  sender_ = std::thread([this] { send_loop(); });
  dispatcher_ = std::thread([this] { dispatch_loop(); });
}

void Agent::stop() {
  if (!started_ || stopped_) return;
  stopped_ = true;
  stopping_ = true;
  endpoint_->shutdown();
  dispatcher_.join();
  pool_.stop();
  {
    std::lock_guard lock(out_mu_);
    sender_stop_ = true;
  }
  out_cv_.notify_all();
  sender_.join();
}

AgentHealth Agent::health() const {
  AgentHealth h;
  h.protocol_errors = protocol_errors_;
  h.malformed_frames = malformed_frames_;
  h.transport_errors = transport_errors_;
  h.failed_executions = failed_executions_;
  h.pool_exhausted = pool_exhausted_;
  h.peak_workers = pool_.peak();
  return h;
}

void Agent::protocol_error(const std::string& what) {
  ++protocol_errors_;
  spdlog::error("agent {}: protocol error: {}", id_.value, what);
}

void Agent::post(AgentId dst, Instruction instruction, GuardRef context) {
  {
    std::lock_guard lock(out_mu_);
    outgoing_.push_back(Outgoing{dst, std::move(instruction), context});
  }
  out_cv_.notify_one();
}

void Agent::blocking(const std::function<void()>& fn) {
  const bool worker = tl_pool == &pool_;
  if (worker) pool_.block_begin();
  try {
    fn();
  } catch (...) {
    if (worker) pool_.block_end();
    throw;
  }
  if (worker) pool_.block_end();
}

void Agent::wait_guard(std::uint64_t guard) {
  if (guards_.is_released(guard)) return;
  bool released = false;
  blocking([&] { released = guards_.wait(guard, config_.wait_timeout); });
  if (!released) {
    throw WaitTimeout("agent " + std::to_string(id_.value) + ": guard " + std::to_string(guard) +
                      " not released within " + std::to_string(config_.wait_timeout.count()) +
                      " ms");
  }
}

RemoteRef Agent::install(std::uint32_t kind_id, std::unique_ptr<Instance> instance) {
  const KindDescriptor* kind = kinds_->find(kind_id);
  if (kind == nullptr) throw RegistrationError("unknown kind " + std::to_string(kind_id));
  auto entry = std::make_shared<ObjectEntry>();
  entry->kind = kind;
  entry->instance = std::move(instance);
  std::lock_guard lock(objects_mu_);
  entry->id = next_object_++;
  objects_.emplace(entry->id, entry);
  return RemoteRef{id_, entry->id};
}

std::size_t Agent::object_count() const {
  std::lock_guard lock(objects_mu_);
  return objects_.size();
}

std::shared_ptr<Agent::ObjectEntry> Agent::find_object(std::uint64_t id) const {
  std::lock_guard lock(objects_mu_);
  auto it = objects_.find(id);
  return it == objects_.end() ? nullptr : it->second;
}

void Agent::fuzz_delay(std::mt19937_64& rng, std::mutex& mu) {
  if (!config_.fuzz.enabled()) return;
  std::uint32_t us = 0;
  {
    std::lock_guard lock(mu);
    std::bernoulli_distribution hit(config_.fuzz.probability);
    if (!hit(rng)) return;
    std::uniform_int_distribution<std::uint32_t> dist(config_.fuzz.min_us, config_.fuzz.max_us);
    us = dist(rng);
  }
  if (us > 0) std::this_thread::sleep_for(std::chrono::microseconds(us));
}

void Agent::send_loop() {
  for (;;) {
    Outgoing out;
    {
      std::unique_lock lock(out_mu_);
      out_cv_.wait(lock, [&] { return sender_stop_ || !outgoing_.empty(); });
      if (outgoing_.empty()) return;
      out = std::move(outgoing_.front());
      outgoing_.pop_front();
    }
    fuzz_delay(send_rng_, send_rng_mu_);

    Envelope envelope{kWireVersion, id_, out.dst, std::move(out.instruction)};
    Bytes bytes = encode(envelope);
    if (trace_.enabled()) {
      TraceEvent ev;
      ev.kind = EventKind::wire;
      ev.peer = out.dst;
      ev.tag = tag_of(envelope.instruction);
      ev.guard = out.context;
      ev.bytes = bytes.size();
      const auto data = data_payload(envelope.instruction);
      ev.data_bytes = data.size();
      ev.digest = fnv1a64(data);
      ev.digest2 = mix_hash64(data);
      std::visit(Overloaded{
                     [&](const WriteResult& w) { ev.slot = w.slot.slot; },
                     [&](const Invoke& i) {
                       ev.object = i.target.object;
                       ev.method = i.method_id;
                     },
                     [&](const Destroy& i) { ev.object = i.target.object; },
                     [&](const CopyBlock& i) { ev.object = i.target.object; },
                     [&](const ReadBlock& i) { ev.object = i.target.object; },
                     [&](const Construct& i) { ev.kind_id = i.kind_id; },
                     [](const ReleaseGuard&) {},
                 },
                 envelope.instruction);
      trace_.record(std::move(ev));
    }
    try {
      endpoint_->send_frame(out.dst, std::move(bytes));
    } catch (const TransportError& e) {
      if (!stopping_) {
        ++transport_errors_;
        spdlog::error("agent {}: {}", id_.value, e.what());
      }
    }
  }
}

void Agent::dispatch_loop() {
  while (auto delivery = endpoint_->recv_frame()) {
    Envelope envelope;
    try {
      envelope = decode(delivery->frame);
    } catch (const MalformedFrame& e) {
      ++malformed_frames_;
      spdlog::error("agent {}: dropped frame from agent {}: {}", id_.value, delivery->src.value,
                    e.what());
      continue;
    }
    if (envelope.dst != id_) {
      protocol_error("frame addressed to agent " + std::to_string(envelope.dst.value));
      continue;
    }
    if (trace_.enabled()) {
      TraceEvent ev;
      ev.kind = EventKind::dispatch;
      ev.peer = delivery->src;
      ev.tag = tag_of(envelope.instruction);
      if (auto g = guard_of(envelope.instruction)) ev.guard = *g;
      if (const auto* w = std::get_if<WriteResult>(&envelope.instruction)) ev.slot = w->slot.slot;
      if (const auto* r = std::get_if<ReleaseGuard>(&envelope.instruction)) ev.guard = r->guard;
      trace_.record(std::move(ev));
    }
    fuzz_delay(dispatch_rng_, dispatch_rng_mu_);
    handle(std::move(envelope), delivery->src);
  }
}

void Agent::handle(Envelope envelope, AgentId src) {
  if (auto* w = std::get_if<WriteResult>(&envelope.instruction)) {
    if (w->slot.agent != id_) {
      protocol_error("result slot for agent " + std::to_string(w->slot.agent.value));
      return;
    }
    const auto slot = w->slot.slot;
    switch (guards_.write_slot(slot, std::move(w->payload))) {
      case GuardTable::Outcome::ok: {
        TraceEvent ev;
        ev.kind = EventKind::write_result;
        ev.slot = slot;
        ev.peer = src;
        trace_.record(std::move(ev));
        break;
      }
      case GuardTable::Outcome::unknown:
        protocol_error("write to unknown result slot " + std::to_string(slot));
        break;
      case GuardTable::Outcome::duplicate:
        protocol_error("second write to result slot " + std::to_string(slot));
        break;
    }
    return;
  }
  if (auto* r = std::get_if<ReleaseGuard>(&envelope.instruction)) {
    if (r->guard.agent != id_) {
      protocol_error("release of guard owned by agent " + std::to_string(r->guard.agent.value));
      return;
    }
    // The release event is recorded before any waiter can wake, so a
    // wait_end never precedes the release it observed.
    auto record = [&] {
      TraceEvent ev;
      ev.kind = EventKind::release;
      ev.guard = r->guard;
      ev.peer = src;
      trace_.record(std::move(ev));
    };
    switch (guards_.release(r->guard.guard, record)) {
      case GuardTable::Outcome::ok:
        break;
      case GuardTable::Outcome::unknown:
        protocol_error("release of unknown guard " + std::to_string(r->guard.guard));
        break;
      case GuardTable::Outcome::duplicate:
        protocol_error("second release of guard " + std::to_string(r->guard.guard));
        break;
    }
    return;
  }
  schedule(Job{std::move(envelope.instruction), src});
}

void Agent::schedule(Job job) {
  if (std::holds_alternative<Construct>(job.instruction)) {
    pool_.submit([this, job = std::move(job)]() mutable { execute(std::move(job)); });
    return;
  }
  const RemoteRef target = std::visit(
      Overloaded{
          [](const Invoke& i) { return i.target; },
          [](const Destroy& i) { return i.target; },
          [](const CopyBlock& i) { return i.target; },
          [](const ReadBlock& i) { return i.target; },
          [](const auto&) { return RemoteRef{}; },
      },
      job.instruction);
  auto entry = target.agent == id_ ? find_object(target.object) : nullptr;
  if (!entry || entry->kind->concurrent) {
    pool_.submit([this, job = std::move(job)]() mutable { execute(std::move(job)); });
    return;
  }
  bool start = false;
  {
    std::lock_guard lock(entry->mu);
    entry->mailbox.push_back(std::move(job));
    if (!entry->running) {
      entry->running = true;
      start = true;
    }
  }
  if (start) pool_.submit([this, entry] { drain_mailbox(entry); });
}

void Agent::drain_mailbox(const std::shared_ptr<ObjectEntry>& entry) {
  for (;;) {
    Job job;
    {
      std::lock_guard lock(entry->mu);
      if (entry->mailbox.empty()) {
        entry->running = false;
        return;
      }
      job = std::move(entry->mailbox.front());
      entry->mailbox.pop_front();
    }
    execute(std::move(job));
  }
}

void Agent::execute(Job job) {
  const GuardRef guard = *guard_of(job.instruction);
  std::optional<ResultSlot> result_slot;

  TraceEvent ev;
  ev.kind = EventKind::exec_start;
  ev.guard = guard;
  ev.peer = job.src;
  ev.tag = tag_of(job.instruction);
  RemoteRef self;
  std::visit(Overloaded{
                 [&](const Construct& i) {
                   ev.kind_id = i.kind_id;
                   result_slot = i.result;
                 },
                 [&](const Invoke& i) {
                   ev.object = i.target.object;
                   ev.method = i.method_id;
                   result_slot = i.result;
                   self = i.target;
                 },
                 [&](const ReadBlock& i) {
                   ev.object = i.target.object;
                   result_slot = i.result;
                 },
                 [&](const auto& i) {
                   if constexpr (requires { i.target; }) ev.object = i.target.object;
                 },
             },
             job.instruction);

  std::shared_ptr<ObjectEntry> entry;
  auto target_entry = [&](const RemoteRef& target) -> ObjectEntry& {
    if (target.agent != id_) {
      throw ExecutionFailure("object " + std::to_string(target.object) + " lives on agent " +
                             std::to_string(target.agent.value));
    }
    entry = find_object(target.object);
    if (!entry || entry->destroyed) {
      throw ExecutionFailure("unknown object " + std::to_string(target.object) + " on agent " +
                             std::to_string(id_.value));
    }
    ev.kind_id = entry->kind->kind_id;
    return *entry;
  };
  auto block_of = [&](ObjectEntry& e, std::uint64_t offset,
                      std::uint64_t length) -> std::span<std::uint8_t> {
    if (!e.kind->block) {
      throw ExecutionFailure("kind " + e.kind->name + " has no block accessor");
    }
    auto bytes = e.kind->block(*e.instance);
    if (offset > bytes.size() || length > bytes.size() - offset) {
      throw ExecutionFailure("block range [" + std::to_string(offset) + ", " +
                             std::to_string(offset + length) + ") outside object of " +
                             std::to_string(bytes.size()) + " bytes");
    }
    return bytes.subspan(offset, length);
  };

  Bytes value;
  std::vector<Bytes> payloads;
  std::string error;
  bool failed = false;
  Scope root;
  Activity activity{this, &root, tl_pool == &pool_, self};
  {
    ActivityBinding bind(activity);
    trace_.record(ev);
    try {
      std::visit(
          Overloaded{
              [&](Construct& i) {
                const KindDescriptor* kind = kinds_->find(i.kind_id);
                if (kind == nullptr) {
                  spdlog::warn("agent {}: construct of unregistered kind {}", id_.value, i.kind_id);
                  throw ExecutionFailure("unknown kind " + std::to_string(i.kind_id));
                }
                for (auto& p : i.params) payloads.push_back(std::move(p.payload));
                value = encode_value(install(i.kind_id, kind->constructor(payloads)));
              },
              [&](Invoke& i) {
                ObjectEntry& e = target_entry(i.target);
                auto m = e.kind->methods.find(i.method_id);
                if (m == e.kind->methods.end()) {
                  throw ExecutionFailure("unknown method " + std::to_string(i.method_id) +
                                         " on kind " + e.kind->name);
                }
                for (auto& p : i.params) payloads.push_back(std::move(p.payload));
                value = m->second.fn(*e.instance, payloads);
              },
              [&](Destroy& i) {
                ObjectEntry& e = target_entry(i.target);
                e.destroyed = true;
                std::lock_guard lock(objects_mu_);
                objects_.erase(e.id);
              },
              [&](CopyBlock& i) {
                ObjectEntry& e = target_entry(i.target);
                auto dst = block_of(e, i.offset, i.payload.size());
                std::memcpy(dst.data(), i.payload.data(), i.payload.size());
              },
              [&](ReadBlock& i) {
                ObjectEntry& e = target_entry(i.target);
                auto src = block_of(e, i.offset, i.length);
                value.assign(src.begin(), src.end());
              },
              [](auto&) {},
          },
          job.instruction);
      root.drain(*this);
    } catch (const std::exception& e) {
      failed = true;
      error = e.what();
    } catch (...) {
      failed = true;
      error = "unknown exception";
    }
    if (failed) {
      try {
        root.drain(*this);
      } catch (...) {
      }
    }
  }
  if (failed) ++failed_executions_;

  ev.kind = EventKind::exec_end;
  ev.error = failed;
  trace_.record(std::move(ev));

  if (const auto* invoke = std::get_if<Invoke>(&job.instruction); invoke != nullptr && !failed) {
    for (std::size_t k = 0; k < invoke->params.size() && k < payloads.size(); ++k) {
      const Param& p = invoke->params[k];
      if (p.mode != ParamMode::by_reference) continue;
      post(p.writeback.agent, WriteResult{p.writeback, ok_cell(payloads[k])}, guard);
    }
  }
  if (result_slot) {
    post(result_slot->agent,
         WriteResult{*result_slot, failed ? error_cell(error) : ok_cell(value)}, guard);
  }
  post(guard.agent, ReleaseGuard{guard}, guard);
}

}  // namespace pobj
