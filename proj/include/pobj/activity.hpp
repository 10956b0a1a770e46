#pragma once

// Activities, scopes and future state.
//
// An activity is a logical thread of application code bound to one agent:
// the driver's main body, a method executing on a worker, or a child spawned
// by an iteration combinator. Every remote issue registers its future in the
// innermost open scope of the issuing activity.

#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "pobj/wire.hpp"

namespace pobj {

class Agent;

/// A remote execution failed; carries the executor's message.
class RemoteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A guard wait exceeded the configured timeout (likely a cyclic wait).
class WaitTimeout : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Remote operations need an agent; thrown when none is bound to the thread.
class NoActivity : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class FutureState {
 public:
  using Writeback = std::function<void(std::span<const std::uint8_t>)>;

  /// slot == 0 for instructions without a result (Destroy, CopyBlock).
  FutureState(Agent& agent, std::uint64_t guard, std::uint64_t slot)
      : agent_(&agent), guard_(guard), slot_(slot) {}

  void add_writeback(std::uint64_t slot, Writeback apply) {
    writebacks_.emplace_back(slot, std::move(apply));
  }

  /// Waits for the guard once; later calls return immediately. Applies
  /// by-reference write-backs on the settling thread. Remote failures are
  /// stored, not thrown; only WaitTimeout escapes.
  void settle();

  /// settle(), then throw RemoteError if the remote side failed. An error
  /// thrown here counts as observed and is not re-raised by scope drains.
  void check();
  bool error_observed() const;

  bool settled() const;
  bool failed() const;
  std::string error() const;
  GuardRef guard() const;

  /// Value bytes of a settled, successful result (without the status byte).
  std::span<const std::uint8_t> value() const;

 private:
  Agent* agent_;
  std::uint64_t guard_;
  std::uint64_t slot_;
  std::vector<std::pair<std::uint64_t, Writeback>> writebacks_;

  mutable std::mutex mu_;
  std::atomic<bool> settled_{false};
  bool failed_ = false;
  bool observed_ = false;
  Bytes cell_;
};

class Scope {
 public:
  explicit Scope(Scope* parent = nullptr) : parent_(parent) {}
  Scope(const Scope&) = delete;
  Scope& operator=(const Scope&) = delete;

  Scope* parent() const { return parent_; }
  void add(std::shared_ptr<FutureState> state);
  std::size_t pending() const;

  /// Settles every pending future, then throws the first failure, if any.
  /// Records a `drain` trace event on `agent` when `label` is non-empty.
  void drain(Agent& agent, std::string_view label = {});

  /// Moves the pending set into the parent scope.
  void hand_to_parent();

 private:
  Scope* parent_;
  mutable std::mutex mu_;
  std::vector<std::shared_ptr<FutureState>> pending_;
};

struct Activity {
  Agent* agent = nullptr;
  Scope* scope = nullptr;
  bool in_worker = false;
  RemoteRef self;  // object whose method is executing, if any
};

/// The activity bound to the calling thread, or nullptr.
Activity* current_activity();

/// Throws NoActivity when the thread has no agent.
Activity& require_activity();

class ActivityBinding {
 public:
  explicit ActivityBinding(Activity& activity);
  ~ActivityBinding();
  ActivityBinding(const ActivityBinding&) = delete;
  ActivityBinding& operator=(const ActivityBinding&) = delete;

 private:
  Activity* previous_;
};

/// Pushes a child scope onto the current activity for its lifetime.
class ScopeGuard {
 public:
  ScopeGuard();
  ~ScopeGuard();
  ScopeGuard(const ScopeGuard&) = delete;
  ScopeGuard& operator=(const ScopeGuard&) = delete;
  Scope& scope() { return scope_; }

 private:
  Activity& activity_;
  Scope scope_;
};

}  // namespace pobj
