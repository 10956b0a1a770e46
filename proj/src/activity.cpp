#include "pobj/activity.hpp"

#include "pobj/agent.hpp"
#include "pobj/codec.hpp"

namespace pobj {

namespace {
thread_local Activity* tl_activity = nullptr;
}

void FutureState::settle() {
  std::lock_guard lock(mu_);
  if (settled_) return;

  TraceEvent begin;
  begin.kind = EventKind::wait_begin;
  begin.guard = guard();
  begin.slot = slot_;
  agent_->trace().record(begin);
  agent_->wait_guard(guard_);
  begin.kind = EventKind::wait_end;
  agent_->trace().record(std::move(begin));

  auto& table = agent_->guards();
  if (slot_ != 0) {
    auto cell = table.take_slot(slot_);
    if (!cell || cell->empty()) {
      failed_ = true;
      cell_ = error_cell("guard released without a result");
    } else {
      cell_ = std::move(*cell);
      failed_ = cell_[0] != static_cast<std::uint8_t>(CellStatus::ok);
    }
  }
  for (auto& [slot, apply] : writebacks_) {
    auto cell = table.take_slot(slot);
    if (failed_ || !cell || cell->empty() ||
        (*cell)[0] != static_cast<std::uint8_t>(CellStatus::ok)) {
      continue;
    }
    apply(std::span<const std::uint8_t>(*cell).subspan(1));
  }
  table.retire(guard_);
  settled_ = true;
}

void FutureState::check() {
  settle();
  std::string message;
  {
    std::lock_guard lock(mu_);
    if (!failed_) return;
    observed_ = true;
    message.assign(cell_.begin() + 1, cell_.end());
  }
  throw RemoteError(message);
}

bool FutureState::error_observed() const {
  std::lock_guard lock(mu_);
  return observed_;
}

bool FutureState::settled() const { return settled_.load(); }

bool FutureState::failed() const {
  std::lock_guard lock(mu_);
  return failed_;
}

std::string FutureState::error() const {
  std::lock_guard lock(mu_);
  if (!failed_ || cell_.size() < 1) return {};
  return std::string(cell_.begin() + 1, cell_.end());
}

GuardRef FutureState::guard() const { return GuardRef{agent_->id(), guard_}; }

std::span<const std::uint8_t> FutureState::value() const {
  std::lock_guard lock(mu_);
  if (!settled_ || failed_ || cell_.empty()) return {};
  return std::span<const std::uint8_t>(cell_).subspan(1);
}

void Scope::add(std::shared_ptr<FutureState> state) {
  std::lock_guard lock(mu_);
  pending_.push_back(std::move(state));
}

std::size_t Scope::pending() const {
  std::lock_guard lock(mu_);
  return pending_.size();
}

void Scope::drain(Agent& agent, std::string_view label) {
  std::vector<std::shared_ptr<FutureState>> pending;
  {
    std::lock_guard lock(mu_);
    pending.swap(pending_);
  }
  std::string first_error;
  bool failed = false;
  for (auto& state : pending) {
    state->settle();
    if (state->failed() && !state->error_observed() && !failed) {
      failed = true;
      first_error = state->error();
    }
  }
  if (!label.empty()) {
    TraceEvent ev;
    ev.kind = EventKind::drain;
    ev.label = std::string(label);
    ev.slot = pending.size();
    agent.trace().record(std::move(ev));
  }
  if (failed) throw RemoteError(first_error);
}

void Scope::hand_to_parent() {
  if (parent_ == nullptr) return;
  std::vector<std::shared_ptr<FutureState>> pending;
  {
    std::lock_guard lock(mu_);
    pending.swap(pending_);
  }
  for (auto& state : pending) parent_->add(std::move(state));
}

Activity* current_activity() { return tl_activity; }

Activity& require_activity() {
  if (tl_activity == nullptr || tl_activity->agent == nullptr) {
    throw NoActivity("no agent is bound to this thread; run inside Cluster::run_main or a method");
  }
  return *tl_activity;
}

ActivityBinding::ActivityBinding(Activity& activity) : previous_(tl_activity) {
  tl_activity = &activity;
}

ActivityBinding::~ActivityBinding() { tl_activity = previous_; }

ScopeGuard::ScopeGuard() : activity_(require_activity()), scope_(activity_.scope) {
  activity_.scope = &scope_;
}

ScopeGuard::~ScopeGuard() {
  scope_.hand_to_parent();
  activity_.scope = scope_.parent();
}

}  // namespace pobj
