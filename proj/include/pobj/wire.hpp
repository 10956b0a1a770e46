#pragma once

// IR instruction set and its canonical binary encoding.
//
// Every byte that crosses between agents is an encoded Envelope wrapped in a
// length-prefixed frame. The layout is documented in docs/wire_format.md;
// the golden vectors in tests/wire_vectors.hpp pin it.

#include <compare>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace pobj {

using Bytes = std::vector<std::uint8_t>;

struct AgentId {
  std::uint64_t value = 0;

  friend auto operator<=>(const AgentId&, const AgentId&) = default;
};

/// Agent 0 hosts the launcher/registry service.
inline constexpr AgentId kRegistryAgent{0};

/// Generalized pointer: the agent that hosts an object plus the object's id
/// inside that agent. Object id 0 is the null reference.
struct RemoteRef {
  AgentId agent;
  std::uint64_t object = 0;

  bool is_null() const { return object == 0; }
  friend auto operator<=>(const RemoteRef&, const RemoteRef&) = default;

  template <class Archive>
  void serialize(Archive& ar) {
    ar(agent.value, object);
  }
};

struct GuardRef {
  AgentId agent;  // the waiting side
  std::uint64_t guard = 0;

  friend auto operator<=>(const GuardRef&, const GuardRef&) = default;
};

struct ResultSlot {
  AgentId agent;
  std::uint64_t slot = 0;

  friend auto operator<=>(const ResultSlot&, const ResultSlot&) = default;
};

enum class ParamMode : std::uint8_t { by_value = 0, by_reference = 1 };

struct Param {
  ParamMode mode = ParamMode::by_value;
  ResultSlot writeback;  // meaningful only for by_reference
  Bytes payload;

  friend bool operator==(const Param&, const Param&) = default;
};

using ParamList = std::vector<Param>;

enum class Tag : std::uint8_t {
  construct = 0x01,
  invoke = 0x02,
  write_result = 0x03,
  release_guard = 0x04,
  destroy = 0x05,
  copy_block = 0x06,
  read_block = 0x07,
};

struct Construct {
  std::uint32_t kind_id = 0;
  ResultSlot result;
  GuardRef guard;
  ParamList params;
  friend bool operator==(const Construct&, const Construct&) = default;
};

struct Invoke {
  RemoteRef target;
  std::uint32_t method_id = 0;
  ResultSlot result;
  GuardRef guard;
  ParamList params;
  friend bool operator==(const Invoke&, const Invoke&) = default;
};

struct WriteResult {
  ResultSlot slot;
  Bytes payload;
  friend bool operator==(const WriteResult&, const WriteResult&) = default;
};

struct ReleaseGuard {
  GuardRef guard;
  friend bool operator==(const ReleaseGuard&, const ReleaseGuard&) = default;
};

struct Destroy {
  RemoteRef target;
  GuardRef guard;
  friend bool operator==(const Destroy&, const Destroy&) = default;
};

struct CopyBlock {
  RemoteRef target;
  std::uint64_t offset = 0;
  Bytes payload;
  GuardRef guard;
  friend bool operator==(const CopyBlock&, const CopyBlock&) = default;
};

struct ReadBlock {
  RemoteRef target;
  std::uint64_t offset = 0;
  std::uint64_t length = 0;
  ResultSlot result;
  GuardRef guard;
  friend bool operator==(const ReadBlock&, const ReadBlock&) = default;
};

using Instruction =
    std::variant<Construct, Invoke, WriteResult, ReleaseGuard, Destroy, CopyBlock, ReadBlock>;

inline constexpr std::uint16_t kWireVersion = 1;

struct Envelope {
  std::uint16_t version = kWireVersion;
  AgentId src;
  AgentId dst;
  Instruction instruction;

  friend bool operator==(const Envelope&, const Envelope&) = default;
};

Tag tag_of(const Instruction& instruction);
std::string_view tag_name(Tag tag);
std::optional<Tag> tag_from_name(std::string_view name);

/// True for instructions that start remote work and therefore carry a guard.
bool initiates_work(Tag tag);

/// The guard carried by a work-initiating instruction, if any.
std::optional<GuardRef> guard_of(const Instruction& instruction);

/// The opaque payload an instruction carries for broadcast analysis
/// (CopyBlock block, WriteResult value); empty span otherwise.
std::span<const std::uint8_t> data_payload(const Instruction& instruction);

class MalformedFrame : public std::runtime_error {
 public:
  MalformedFrame(const std::string& what, std::size_t offset);
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

class TruncatedFrame : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

Bytes encode(const Envelope& envelope);

/// Exact inverse of encode; consumes the whole input or throws MalformedFrame.
Envelope decode(std::span<const std::uint8_t> bytes);

/// u32 little-endian length prefix followed by the payload.
Bytes write_frame(std::span<const std::uint8_t> payload);

/// Minimal blocking byte source used by read_frame.
class ByteSource {
 public:
  virtual ~ByteSource() = default;
  /// Reads up to out.size() bytes; returns 0 on end of stream.
  virtual std::size_t read_some(std::span<std::uint8_t> out) = 0;
};

/// Reads one frame. Returns nullopt on a clean end of stream at a frame
/// boundary; throws TruncatedFrame if the stream closes mid-frame.
std::optional<Bytes> read_frame(ByteSource& source);

/// ByteSource over an in-memory buffer.
class BufferSource : public ByteSource {
 public:
  explicit BufferSource(std::span<const std::uint8_t> data) : data_(data) {}
  std::size_t read_some(std::span<std::uint8_t> out) override;

 private:
  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
};

}  // namespace pobj
