#pragma once

// Programmer-facing surface: typed remote construction and invocation with
// implicit futures, block reads/writes, scopes, barriers and the iteration
// combinators.
//
//   auto w = pobj::construct(kWorker, host);            // Future<Remote<Worker>>
//   auto r = pobj::call(w, kCompute, 3.0);              // Future<double>
//   pobj::barrier_scope([&] { ... });                   // drains before and after
//
// All calls must run on a thread bound to an agent (Cluster::run_main, a
// method executing on a worker, or a combinator's child activity).

#include <cstring>
#include <exception>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <type_traits>
#include <utility>
#include <vector>

#include "pobj/activity.hpp"
#include "pobj/agent.hpp"
#include "pobj/codec.hpp"
#include "pobj/kind.hpp"
#include "pobj/transport.hpp"

namespace pobj {

template <class T>
class Remote {
 public:
  Remote() = default;
  explicit Remote(RemoteRef ref) : ref_(ref) {}

  RemoteRef ref() const { return ref_; }
  AgentId agent() const { return ref_.agent; }
  bool is_null() const { return ref_.is_null(); }

  friend bool operator==(const Remote&, const Remote&) = default;

  template <class Archive>
  void serialize(Archive& ar) {
    ar(ref_);
  }

 private:
  RemoteRef ref_;
};

template <class T>
inline constexpr bool is_remote_v = false;
template <class T>
inline constexpr bool is_remote_v<Remote<T>> = true;

template <class T>
struct is_vector : std::false_type {};
template <class T, class A>
struct is_vector<std::vector<T, A>> : std::true_type {};

/// Implicit future. Reading the value waits for the guard; an error payload
/// surfaces as RemoteError on every read. Copies share one state.
template <class T>
class Future {
 public:
  Future() = default;
  explicit Future(std::shared_ptr<FutureState> state, bool raw = false)
      : state_(std::move(state)), raw_(raw) {}

  /// Waits, then decodes. Repeated reads return the same value.
  T get() const {
    state_->check();
    const auto bytes = state_->value();
    if (!raw_) return decode_value<T>(bytes);
    if constexpr (std::is_trivially_copyable_v<T>) {
      if (bytes.size() != sizeof(T)) throw CodecError("block size does not match value size");
      T value;
      std::memcpy(&value, bytes.data(), sizeof(T));
      return value;
    } else if constexpr (is_vector<T>::value) {
      using E = typename T::value_type;
      if (bytes.size() % sizeof(E) != 0) throw CodecError("block size not a multiple of element");
      T value(bytes.size() / sizeof(E));
      std::memcpy(value.data(), bytes.data(), bytes.size());
      return value;
    } else {
      throw CodecError("raw block cannot be decoded as this type");
    }
  }
  operator T() const { return get(); }  // NOLINT: implicit on purpose

  void wait() const { state_->settle(); }
  bool valid() const { return state_ != nullptr; }
  bool ready() const { return state_->settled(); }
  bool failed() const { return state_->failed(); }
  std::string error() const { return state_->error(); }
  GuardRef guard() const { return state_->guard(); }
  const std::shared_ptr<FutureState>& state() const { return state_; }

 private:
  std::shared_ptr<FutureState> state_;
  bool raw_ = false;
};

template <>
class Future<void> {
 public:
  Future() = default;
  explicit Future(std::shared_ptr<FutureState> state, bool = false) : state_(std::move(state)) {}

  void get() const { state_->check(); }
  void wait() const { state_->settle(); }
  bool valid() const { return state_ != nullptr; }
  bool ready() const { return state_->settled(); }
  bool failed() const { return state_->failed(); }
  std::string error() const { return state_->error(); }
  GuardRef guard() const { return state_->guard(); }
  const std::shared_ptr<FutureState>& state() const { return state_; }

 private:
  std::shared_ptr<FutureState> state_;
};

// ---------------------------------------------------------------------------
// Untyped issue

/// One encoded parameter. A set `writeback` makes it by-reference: the
/// executor sends the parameter back and `writeback` receives the bytes.
struct RawArg {
  Bytes payload;
  FutureState::Writeback writeback;
};

std::shared_ptr<FutureState> remote_construct(AgentId host, std::uint32_t kind_id,
                                              std::vector<RawArg> params);
std::shared_ptr<FutureState> remote_invoke(RemoteRef target, std::uint32_t method_id,
                                           std::vector<RawArg> params);
std::shared_ptr<FutureState> remote_destroy(RemoteRef target);
/// ReadBlock: the future's value is the raw bytes.
std::shared_ptr<FutureState> remote_read(RemoteRef target, std::uint64_t offset,
                                         std::uint64_t length);
/// CopyBlock: completes without a value; range errors are reported by the
/// executor's health counters and trace, not through the future.
std::shared_ptr<FutureState> remote_write(RemoteRef target, std::uint64_t offset, Bytes bytes);

AgentId this_agent();
ExecMode current_mode();

// ---------------------------------------------------------------------------
// Typed issue

namespace detail {

template <class P, class A>
RawArg make_arg(A&& arg) {
  using D = std::remove_cvref_t<P>;
  if constexpr (is_by_reference_v<P>) {
    static_assert(std::is_lvalue_reference_v<A&&> &&
                      std::is_same_v<std::remove_cvref_t<A>, D> &&
                      !std::is_const_v<std::remove_reference_t<A>>,
                  "by-reference parameters need a mutable lvalue of the exact type");
    D* target = &arg;
    return RawArg{encode_value<D>(arg),
                  [target](std::span<const std::uint8_t> bytes) {
                    *target = decode_value<D>(bytes);
                  }};
  } else {
    return RawArg{encode_value<D>(D(std::forward<A>(arg))), {}};
  }
}

template <class Params, class... A, std::size_t... I>
std::vector<RawArg> make_args(std::index_sequence<I...>, A&&... args) {
  std::vector<RawArg> out;
  out.reserve(sizeof...(A));
  (out.push_back(make_arg<std::tuple_element_t<I, Params>>(std::forward<A>(args))), ...);
  return out;
}

}  // namespace detail

template <class T, class... C, class... A>
Future<Remote<T>> construct(Kind<T, C...> kind, AgentId host, A&&... args) {
  static_assert(sizeof...(A) == sizeof...(C), "constructor argument count mismatch");
  auto params = detail::make_args<std::tuple<const C&...>>(std::index_sequence_for<A...>{},
                                                           std::forward<A>(args)...);
  return Future<Remote<T>>(remote_construct(host, kind.id, std::move(params)));
}

template <class T, class... C, class... A>
Future<Remote<T>> construct(Kind<T, C...> kind, const AgentAddress& host, A&&... args) {
  return construct(kind, host.agent, std::forward<A>(args)...);
}

template <auto Fn, class T, class... A>
auto call(const Remote<T>& target, Method<Fn> method, A&&... args) {
  using Tr = typename Method<Fn>::traits;
  using Args = typename Tr::Args;
  using R = std::remove_cvref_t<typename Tr::Result>;
  static_assert(std::is_base_of_v<typename Tr::Class, T>, "method does not belong to target kind");
  static_assert(sizeof...(A) == std::tuple_size_v<Args>, "method argument count mismatch");
  auto params =
      detail::make_args<Args>(std::index_sequence_for<A...>{}, std::forward<A>(args)...);
  return Future<R>(remote_invoke(target.ref(), method.id, std::move(params)));
}

/// Calling through a future reference waits for the reference first.
template <auto Fn, class T, class... A>
auto call(const Future<Remote<T>>& target, Method<Fn> method, A&&... args) {
  return call(target.get(), method, std::forward<A>(args)...);
}

template <class T>
Future<void> destroy(const Remote<T>& target) {
  return Future<void>(remote_destroy(target.ref()));
}

// ---------------------------------------------------------------------------
// Hosts

/// Resolves a host name to an agent through the registry on agent 0. The
/// same name always yields the same agent within a run.
Future<AgentAddress> create_host(const std::string& name);

// ---------------------------------------------------------------------------
// Scopes and combinators

/// Plain compound statement: pending work propagates to the enclosing scope.
template <class F>
void scope_run(F&& body) {
  ScopeGuard guard;
  std::forward<F>(body)();
}

namespace detail {
void drain_current(std::string_view label);
void record_local(EventKind kind, std::string_view label);
}  // namespace detail

/// Barrier statement: drains the enclosing scope, runs `body`, then drains
/// everything the body issued.
template <class F>
void barrier_scope(F&& body, std::string_view label = "barrier") {
  Activity& activity = require_activity();
  activity.scope->drain(*activity.agent);
  ScopeGuard guard;
  try {
    std::forward<F>(body)();
  } catch (...) {
    try {
      guard.scope().drain(*activity.agent, label);
    } catch (...) {
    }
    throw;
  }
  guard.scope().drain(*activity.agent, label);
}

/// Waits for everything issued so far in the current scope.
void drain();

/// Labelled local computation; bracketed by local_begin/local_end events.
template <class F>
decltype(auto) local(std::string_view label, F&& fn) {
  detail::record_local(EventKind::local_begin, label);
  struct End {
    std::string_view label;
    ~End() { detail::record_local(EventKind::local_end, label); }
  } end{label};
  return std::forward<F>(fn)();
}

/// Runs `body` on a new thread bound to the caller's agent with its own root
/// scope, drained before the thread ends. Used by the combinators.
void run_child_activities(std::size_t n, const std::function<void(std::size_t)>& body);

/// (a) all iterations issue without waiting.
template <class F>
void iter_parallel(std::size_t n, F&& body) {
  scope_run([&] {
    for (std::size_t i = 0; i < n; ++i) body(i);
  });
}

/// (b) one barrier per iteration: iteration i completes before i+1 starts.
template <class F>
void iter_seq_iterations(std::size_t n, F&& body) {
  for (std::size_t i = 0; i < n; ++i) {
    barrier_scope([&] { body(i); }, "iteration");
  }
}

/// (c) iterations run concurrently; within one, A(i) completes before B(i).
template <class A, class B>
void iter_parallel_iterations(std::size_t n, A&& step_a, B&& step_b) {
  if (current_mode() == ExecMode::distributed_sequential) {
    for (std::size_t i = 0; i < n; ++i) {
      step_a(i);
      barrier_scope([&] { step_b(i); }, "iteration");
    }
    return;
  }
  run_child_activities(n, [&](std::size_t i) {
    step_a(i);
    barrier_scope([&] { step_b(i); }, "iteration");
  });
}

/// (d) total order A(0), B(0), A(1), B(1), ... B(i) stays pending in the
/// enclosing scope until the next barrier (A(i+1)'s) drains it.
template <class A, class B>
void iter_sequential(std::size_t n, A&& step_a, B&& step_b) {
  for (std::size_t i = 0; i < n; ++i) {
    barrier_scope([&] { step_a(i); }, "iteration");
    step_b(i);
  }
}

// ---------------------------------------------------------------------------
// Builtin kinds

inline constexpr std::uint32_t kHostRegistryKind = 0xFFFF0001;
inline constexpr std::uint32_t kDoubleArrayKind = 0xFFFF0002;

/// Registers the registry and array kinds; every agent needs them.
void register_builtin_kinds(KindRegistry& registry);

/// The registry instance the cluster installs as object 1 on agent 0.
/// `capacity` bounds hosts per agent (0: unbounded).
std::unique_ptr<Instance> make_host_registry(std::vector<AgentAddress> agents,
                                             std::uint64_t capacity);

/// Remote array of doubles (zero-initialized) addressed through
/// ReadBlock/CopyBlock at element granularity.
class RemoteArray {
 public:
  RemoteArray() = default;
  RemoteArray(RemoteRef ref, std::uint64_t size) : ref_(ref), size_(size) {}

  /// Constructs the array on `host` and waits for the reference.
  static RemoteArray create(AgentId host, std::uint64_t size);

  Future<double> get(std::uint64_t index) const;
  /// Throws std::out_of_range at issue.
  Future<void> set(std::uint64_t index, double value) const;
  Future<std::vector<double>> read(std::uint64_t first, std::uint64_t count) const;
  Future<void> write(std::uint64_t first, std::span<const double> values) const;

  RemoteRef ref() const { return ref_; }
  std::uint64_t size() const { return size_; }

 private:
  void check_range(std::uint64_t first, std::uint64_t count) const;

  RemoteRef ref_;
  std::uint64_t size_ = 0;
};

}  // namespace pobj
