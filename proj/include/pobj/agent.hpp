#pragma once

// The virtual host. An agent owns an object table, a dispatcher that decodes
// incoming frames, a worker pool that executes work instructions, and one
// dedicated sender that serializes outgoing instructions in posting order.

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <thread>
#include <vector>

#include "pobj/activity.hpp"
#include "pobj/kind.hpp"
#include "pobj/trace.hpp"
#include "pobj/transport.hpp"
#include "pobj/wire.hpp"

namespace pobj {

enum class ExecMode { causal_async, distributed_sequential };

std::string_view to_string(ExecMode mode);
ExecMode parse_exec_mode(std::string_view text);

/// Seeded delay injection at dispatch and send points. A delay is drawn
/// uniformly from [min_us, max_us] with the given probability.
struct FuzzConfig {
  std::uint32_t min_us = 0;
  std::uint32_t max_us = 0;
  double probability = 0.25;

  bool enabled() const { return max_us > 0; }
};

struct AgentConfig {
  std::size_t initial_workers = 4;
  std::size_t pool_ceiling = 1024;
  ExecMode mode = ExecMode::causal_async;
  FuzzConfig fuzz;
  std::uint64_t seed = 0;
  bool trace = true;
  std::chrono::milliseconds wait_timeout{0};  // 0: wait forever
};

struct AgentHealth {
  std::uint64_t protocol_errors = 0;
  std::uint64_t malformed_frames = 0;
  std::uint64_t transport_errors = 0;
  std::uint64_t failed_executions = 0;  // errors returned to callers; not a fault
  bool pool_exhausted = false;
  std::size_t peak_workers = 0;

  bool healthy() const {
    return protocol_errors == 0 && malformed_frames == 0 && transport_errors == 0 &&
           !pool_exhausted;
  }
  AgentHealth& operator+=(const AgentHealth& other);
};

/// Guard and result-slot cells for activities running on one agent.
class GuardTable {
 public:
  enum class Outcome { ok, unknown, duplicate };

  std::uint64_t create_guard();
  std::uint64_t create_slot();

  /// `before_wake` runs under the table lock once the release is accepted.
  Outcome release(std::uint64_t guard, const std::function<void()>& before_wake = {});
  bool is_released(std::uint64_t guard) const;

  /// Blocks until released. Returns false on timeout (timeout 0 = none).
  bool wait(std::uint64_t guard, std::chrono::milliseconds timeout);

  Outcome write_slot(std::uint64_t slot, Bytes payload);
  /// Removes and returns the slot's payload if it was written.
  std::optional<Bytes> take_slot(std::uint64_t slot);

  /// Forgets a settled guard; a later release of it is reported as unknown.
  void retire(std::uint64_t guard);

  std::size_t pending_guards() const;

 private:
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::uint64_t next_guard_ = 1;
  std::uint64_t next_slot_ = 1;
  std::map<std::uint64_t, bool> guards_;
  std::map<std::uint64_t, std::optional<Bytes>> slots_;
};

/// Unbounded-by-default pool that adds a worker whenever one blocks and no
/// idle worker is left, up to a ceiling.
class WorkerPool {
 public:
  WorkerPool(std::size_t initial, std::size_t ceiling, std::function<void()> on_exhausted);
  ~WorkerPool();

  void start();
  void submit(std::function<void()> job);
  void block_begin();
  void block_end();
  /// Runs every queued job, then joins all workers.
  void stop();

  std::size_t size() const;
  std::size_t peak() const;

 private:
  void spawn_locked();
  void worker_loop();

  std::size_t initial_;
  std::size_t ceiling_;
  std::function<void()> on_exhausted_;

  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::deque<std::function<void()>> jobs_;
  std::vector<std::thread> threads_;
  std::size_t idle_ = 0;
  std::size_t blocked_ = 0;
  std::size_t peak_ = 0;
  bool stopping_ = false;
  bool exhausted_reported_ = false;
};

class Agent {
 public:
  Agent(AgentId id, std::shared_ptr<Endpoint> endpoint, std::shared_ptr<const KindRegistry> kinds,
        AgentConfig config);
  ~Agent();

  Agent(const Agent&) = delete;
  Agent& operator=(const Agent&) = delete;

  void start();
  /// Drains the inbox, the pool and the sender, then joins all threads.
  void stop();

  AgentId id() const { return id_; }
  ExecMode mode() const { return config_.mode; }
  const AgentConfig& config() const { return config_; }
  TraceLog& trace() { return trace_; }
  GuardTable& guards() { return guards_; }
  const KindRegistry& kinds() const { return *kinds_; }
  AgentHealth health() const;

  /// Queues an instruction for the sender. `context` is the guard the
  /// instruction belongs to; it is recorded on the wire trace record.
  void post(AgentId dst, Instruction instruction, GuardRef context);

  /// Waits on a local guard. From a worker thread, the pool is told the
  /// worker is blocked. Throws WaitTimeout.
  void wait_guard(std::uint64_t guard);

  /// Runs `fn` marked as blocked if the calling thread is one of this
  /// agent's workers.
  void blocking(const std::function<void()>& fn);

  /// Places an already-built instance in the object table.
  RemoteRef install(std::uint32_t kind_id, std::unique_ptr<Instance> instance);

  std::size_t object_count() const;
  std::size_t worker_count() const { return pool_.size(); }

 private:
  struct Job {
    Instruction instruction;
    AgentId src;
  };

  struct ObjectEntry {
    const KindDescriptor* kind = nullptr;
    std::unique_ptr<Instance> instance;
    std::uint64_t id = 0;
    std::mutex mu;
    std::deque<Job> mailbox;
    bool running = false;
    bool destroyed = false;
  };

  struct Outgoing {
    AgentId dst;
    Instruction instruction;
    GuardRef context;
  };

  void dispatch_loop();
  void send_loop();
  void handle(Envelope envelope, AgentId src);
  void schedule(Job job);
  void drain_mailbox(const std::shared_ptr<ObjectEntry>& entry);
  void execute(Job job);
  std::shared_ptr<ObjectEntry> find_object(std::uint64_t id) const;
  void fuzz_delay(std::mt19937_64& rng, std::mutex& mu);
  void protocol_error(const std::string& what);

  AgentId id_;
  std::shared_ptr<Endpoint> endpoint_;
  std::shared_ptr<const KindRegistry> kinds_;
  AgentConfig config_;
  TraceLog trace_;
  GuardTable guards_;
  WorkerPool pool_;

  mutable std::mutex objects_mu_;
  std::map<std::uint64_t, std::shared_ptr<ObjectEntry>> objects_;
  std::uint64_t next_object_ = 1;

  std::mutex out_mu_;
  std::condition_variable out_cv_;
  std::deque<Outgoing> outgoing_;
  bool sender_stop_ = false;

  std::mt19937_64 dispatch_rng_;
  std::mt19937_64 send_rng_;
  std::mutex dispatch_rng_mu_;
  std::mutex send_rng_mu_;

  std::atomic<std::uint64_t> protocol_errors_{0};
  std::atomic<std::uint64_t> malformed_frames_{0};
  std::atomic<std::uint64_t> transport_errors_{0};
  std::atomic<std::uint64_t> failed_executions_{0};
  std::atomic<bool> pool_exhausted_{false};
  std::atomic<bool> stopping_{false};

  std::thread dispatcher_;
  std::thread sender_;
  bool started_ = false;
  bool stopped_ = false;
};

/// Derives an independent 64-bit stream seed from a run seed and a salt.
std::uint64_t split_seed(std::uint64_t seed, std::uint64_t salt);

}  // namespace pobj
