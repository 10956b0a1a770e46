#pragma once

// Object kinds: how an agent constructs instances and dispatches method ids.
//
// A kind is described once by a `Kind<T, CtorArgs...>` constant and a set of
// `Method<&T::fn>` constants. The same constants drive both registration on
// the executing side (KindBuilder) and typed calls on the issuing side
// (pobj::construct / pobj::call), so the two cannot drift apart.

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <tuple>
#include <type_traits>
#include <utility>
#include <vector>

#include "pobj/codec.hpp"
#include "pobj/wire.hpp"

namespace pobj {

class RegistrationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Type-erased object instance held in an agent's object table.
class Instance {
 public:
  virtual ~Instance() = default;
};

template <class T>
class Holder final : public Instance {
 public:
  template <class... A>
  explicit Holder(A&&... args) : value(std::forward<A>(args)...) {}
  T value;
};

template <class T>
T& instance_cast(Instance& instance) {
  return static_cast<Holder<T>&>(instance).value;
}

using ConstructorFn = std::function<std::unique_ptr<Instance>(std::vector<Bytes>& params)>;
/// Receives mutable parameter payloads; by-reference parameters are sent
/// back from whatever the handler leaves in their slot.
using MethodFn = std::function<Bytes(Instance&, std::vector<Bytes>& params)>;
using BlockFn = std::function<std::span<std::uint8_t>(Instance&)>;

struct MethodEntry {
  std::string name;
  MethodFn fn;
};

struct KindDescriptor {
  std::uint32_t kind_id = 0;
  std::string name;
  ConstructorFn constructor;
  std::map<std::uint32_t, MethodEntry> methods;
  BlockFn block;            // optional raw byte view for CopyBlock/ReadBlock
  bool concurrent = false;  // false: one executing instruction per object at a time
};

struct KindHandle {
  std::uint32_t kind_id = 0;
};

class KindRegistry {
 public:
  /// Throws RegistrationError on a duplicate kind id.
  KindHandle add(KindDescriptor descriptor);
  const KindDescriptor* find(std::uint32_t kind_id) const;
  std::vector<std::uint32_t> ids() const;

 private:
  std::map<std::uint32_t, KindDescriptor> kinds_;
};

// ---------------------------------------------------------------------------
// Typed descriptors

template <class T, class... CtorArgs>
struct Kind {
  std::uint32_t id;
  using type = T;
  using ctor_args = std::tuple<CtorArgs...>;
};

template <class Fn>
struct FnTraits;

template <class C, class R, class... A>
struct FnTraits<R (C::*)(A...)> {
  using Class = C;
  using Result = R;
  using Args = std::tuple<A...>;
};

template <class C, class R, class... A>
struct FnTraits<R (C::*)(A...) const> {
  using Class = C;
  using Result = R;
  using Args = std::tuple<A...>;
};

template <auto Fn>
struct Method {
  std::uint32_t id;
  using traits = FnTraits<decltype(Fn)>;
  static constexpr auto fn = Fn;
};

/// Non-const lvalue reference parameters travel by reference: they are sent
/// to the executor and written back to the caller after the method returns.
template <class A>
inline constexpr bool is_by_reference_v =
    std::is_lvalue_reference_v<A> && !std::is_const_v<std::remove_reference_t<A>>;

namespace detail {

template <class Args, std::size_t... I>
auto decode_args(std::vector<Bytes>& params, std::index_sequence<I...>) {
  return std::tuple<std::remove_cvref_t<std::tuple_element_t<I, Args>>...>{
      decode_value<std::remove_cvref_t<std::tuple_element_t<I, Args>>>(params[I])...};
}

inline void check_arity(const std::vector<Bytes>& params, std::size_t expected) {
  if (params.size() != expected) {
    throw CodecError("expected " + std::to_string(expected) + " parameters, got " +
                     std::to_string(params.size()));
  }
}

template <auto Fn, std::size_t... I>
Bytes call_decoded(Instance& instance, std::vector<Bytes>& params, std::index_sequence<I...> seq) {
  using Tr = FnTraits<decltype(Fn)>;
  using Args = typename Tr::Args;
  using R = typename Tr::Result;
  auto& object = instance_cast<typename Tr::Class>(instance);
  auto values = decode_args<Args>(params, seq);
  Bytes result;
  if constexpr (std::is_void_v<R>) {
    (object.*Fn)(std::get<I>(values)...);
  } else {
    result = encode_value<std::remove_cvref_t<R>>((object.*Fn)(std::get<I>(values)...));
  }
  (
      [&] {
        if constexpr (is_by_reference_v<std::tuple_element_t<I, Args>>) {
          params[I] = encode_value(std::get<I>(values));
        }
      }(),
      ...);
  return result;
}

}  // namespace detail

template <class T>
class KindBuilder {
 public:
  template <class... CtorArgs>
  explicit KindBuilder(Kind<T, CtorArgs...> kind, std::string name) {
    desc_.kind_id = kind.id;
    desc_.name = std::move(name);
    desc_.constructor = [](std::vector<Bytes>& params) -> std::unique_ptr<Instance> {
      detail::check_arity(params, sizeof...(CtorArgs));
      auto values = detail::decode_args<std::tuple<CtorArgs...>>(
          params, std::index_sequence_for<CtorArgs...>{});
      return std::apply(
          [](auto&&... a) { return std::make_unique<Holder<T>>(std::move(a)...); }, values);
    };
  }

  template <auto Fn>
  KindBuilder& method(Method<Fn> m, std::string name) {
    using Tr = FnTraits<decltype(Fn)>;
    static_assert(std::is_base_of_v<typename Tr::Class, T>, "method does not belong to kind");
    constexpr std::size_t arity = std::tuple_size_v<typename Tr::Args>;
    MethodFn fn = [](Instance& instance, std::vector<Bytes>& params) {
      detail::check_arity(params, arity);
      return detail::call_decoded<Fn>(instance, params, std::make_index_sequence<arity>{});
    };
    if (!desc_.methods.emplace(m.id, MethodEntry{std::move(name), std::move(fn)}).second) {
      throw RegistrationError("duplicate method id " + std::to_string(m.id) + " in kind " +
                              desc_.name);
    }
    return *this;
  }

  /// Raw handler for callers that work with payloads directly.
  KindBuilder& raw_method(std::uint32_t id, std::string name, MethodFn fn) {
    if (!desc_.methods.emplace(id, MethodEntry{std::move(name), std::move(fn)}).second) {
      throw RegistrationError("duplicate method id " + std::to_string(id) + " in kind " +
                              desc_.name);
    }
    return *this;
  }

  /// Exposes the object's storage to CopyBlock/ReadBlock.
  template <class F>
  KindBuilder& block(F view) {
    desc_.block = [view](Instance& instance) -> std::span<std::uint8_t> {
      return view(instance_cast<T>(instance));
    };
    return *this;
  }

  KindBuilder& concurrent(bool value = true) {
    desc_.concurrent = value;
    return *this;
  }

  KindDescriptor build() const { return desc_; }

  KindHandle register_in(KindRegistry& registry) const { return registry.add(desc_); }

 private:
  KindDescriptor desc_;
};

}  // namespace pobj
