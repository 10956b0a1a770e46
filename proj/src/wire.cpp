#include "pobj/wire.hpp"

#include <algorithm>
#include <array>
#include <cstring>
#include <limits>

namespace pobj {

namespace {

class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u16(std::uint16_t v) { put_le(v, 2); }
  void u32(std::uint32_t v) { put_le(v, 4); }
  void u64(std::uint64_t v) { put_le(v, 8); }

  void blob(std::span<const std::uint8_t> data) {
    if (data.size() > std::numeric_limits<std::uint32_t>::max()) {
      throw std::length_error("blob exceeds u32 length field");
    }
    u32(static_cast<std::uint32_t>(data.size()));
    out_.insert(out_.end(), data.begin(), data.end());
  }

  void slot(const ResultSlot& s) {
    u64(s.agent.value);
    u64(s.slot);
  }
  void guard(const GuardRef& g) {
    u64(g.agent.value);
    u64(g.guard);
  }
  void ref(const RemoteRef& r) {
    u64(r.agent.value);
    u64(r.object);
  }

  void params(const ParamList& list) {
    if (list.size() > std::numeric_limits<std::uint16_t>::max()) {
      throw std::length_error("parameter list exceeds u16 count");
    }
    u16(static_cast<std::uint16_t>(list.size()));
    for (const auto& p : list) {
      u8(static_cast<std::uint8_t>(p.mode));
      if (p.mode == ParamMode::by_reference) slot(p.writeback);
      blob(p.payload);
    }
  }

  Bytes take() { return std::move(out_); }

 private:
  void put_le(std::uint64_t v, int width) {
    for (int i = 0; i < width; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }

  Bytes out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}

  std::size_t offset() const { return pos_; }
  bool at_end() const { return pos_ == in_.size(); }

  std::uint8_t u8() { return static_cast<std::uint8_t>(get_le(1)); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(get_le(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get_le(4)); }
  std::uint64_t u64() { return get_le(8); }

  Bytes blob() {
    const std::size_t at = pos_;
    const std::uint32_t n = u32();
    if (in_.size() - pos_ < n) {
      throw MalformedFrame("truncated blob of " + std::to_string(n) + " bytes", at);
    }
    Bytes out(in_.begin() + static_cast<std::ptrdiff_t>(pos_),
              in_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return out;
  }

  ResultSlot slot() {
    ResultSlot s;
    s.agent.value = u64();
    s.slot = u64();
    return s;
  }
  GuardRef guard() {
    GuardRef g;
    g.agent.value = u64();
    g.guard = u64();
    return g;
  }
  GuardRef work_guard() {
    const std::size_t at = pos_;
    GuardRef g = guard();
    if (g.guard == 0) throw MalformedFrame("work instruction without a guard", at);
    return g;
  }
  RemoteRef ref() {
    RemoteRef r;
    r.agent.value = u64();
    r.object = u64();
    return r;
  }

  ParamList params() {
    ParamList list(u16());
    for (auto& p : list) {
      const std::size_t at = pos_;
      const std::uint8_t mode = u8();
      if (mode > 1) throw MalformedFrame("unknown parameter mode " + std::to_string(mode), at);
      p.mode = static_cast<ParamMode>(mode);
      if (p.mode == ParamMode::by_reference) p.writeback = slot();
      p.payload = blob();
    }
    return list;
  }

 private:
  std::uint64_t get_le(int width) {
    if (in_.size() - pos_ < static_cast<std::size_t>(width)) {
      throw MalformedFrame("truncated body", pos_);
    }
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) v |= std::uint64_t{in_[pos_ + i]} << (8 * i);
    pos_ += static_cast<std::size_t>(width);
    return v;
  }

  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

template <class... Fs>
struct Overloaded : Fs... {
  using Fs::operator()...;
};
template <class... Fs>
Overloaded(Fs...) -> Overloaded<Fs...>;

}  // namespace

MalformedFrame::MalformedFrame(const std::string& what, std::size_t offset)
    : std::runtime_error("malformed frame at byte " + std::to_string(offset) + ": " + what),
      offset_(offset) {}

Tag tag_of(const Instruction& instruction) {
  return static_cast<Tag>(instruction.index() + 1);
}

std::string_view tag_name(Tag tag) {
  switch (tag) {
    case Tag::construct: return "construct";
    case Tag::invoke: return "invoke";
    case Tag::write_result: return "write_result";
    case Tag::release_guard: return "release_guard";
    case Tag::destroy: return "destroy";
    case Tag::copy_block: return "copy_block";
    case Tag::read_block: return "read_block";
  }
  return "unknown";
}

std::optional<Tag> tag_from_name(std::string_view name) {
  for (std::uint8_t t = 1; t <= 7; ++t) {
    if (tag_name(static_cast<Tag>(t)) == name) return static_cast<Tag>(t);
  }
  return std::nullopt;
}

bool initiates_work(Tag tag) {
  return tag != Tag::write_result && tag != Tag::release_guard;
}

std::optional<GuardRef> guard_of(const Instruction& instruction) {
  return std::visit(Overloaded{
                        [](const WriteResult&) -> std::optional<GuardRef> { return std::nullopt; },
                        [](const ReleaseGuard&) -> std::optional<GuardRef> { return std::nullopt; },
                        [](const auto& i) -> std::optional<GuardRef> { return i.guard; },
                    },
                    instruction);
}

std::span<const std::uint8_t> data_payload(const Instruction& instruction) {
  if (const auto* c = std::get_if<CopyBlock>(&instruction)) return c->payload;
  if (const auto* w = std::get_if<WriteResult>(&instruction)) return w->payload;
  return {};
}

Bytes encode(const Envelope& envelope) {
  Writer w;
  w.u16(envelope.version);
  w.u64(envelope.src.value);
  w.u64(envelope.dst.value);
  w.u8(static_cast<std::uint8_t>(tag_of(envelope.instruction)));
  std::visit(Overloaded{
                 [&](const Construct& i) {
                   w.u32(i.kind_id);
                   w.slot(i.result);
                   w.guard(i.guard);
                   w.params(i.params);
                 },
                 [&](const Invoke& i) {
                   w.ref(i.target);
                   w.u32(i.method_id);
                   w.slot(i.result);
                   w.guard(i.guard);
                   w.params(i.params);
                 },
                 [&](const WriteResult& i) {
                   w.slot(i.slot);
                   w.blob(i.payload);
                 },
                 [&](const ReleaseGuard& i) { w.guard(i.guard); },
                 [&](const Destroy& i) {
                   w.ref(i.target);
                   w.guard(i.guard);
                 },
                 [&](const CopyBlock& i) {
                   w.ref(i.target);
                   w.u64(i.offset);
                   w.blob(i.payload);
                   w.guard(i.guard);
                 },
                 [&](const ReadBlock& i) {
                   w.ref(i.target);
                   w.u64(i.offset);
                   w.u64(i.length);
                   w.slot(i.result);
                   w.guard(i.guard);
                 },
             },
             envelope.instruction);
  return w.take();
}

Envelope decode(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  Envelope e;
  e.version = r.u16();
  if (e.version != kWireVersion) {
    throw MalformedFrame("unsupported version " + std::to_string(e.version), 0);
  }
  e.src.value = r.u64();
  e.dst.value = r.u64();
  const std::size_t tag_offset = r.offset();
  const std::uint8_t tag = r.u8();
  switch (static_cast<Tag>(tag)) {
    case Tag::construct: {
      Construct i;
      i.kind_id = r.u32();
      i.result = r.slot();
      i.guard = r.work_guard();
      i.params = r.params();
      e.instruction = std::move(i);
      break;
    }
    case Tag::invoke: {
      Invoke i;
      i.target = r.ref();
      i.method_id = r.u32();
      i.result = r.slot();
      i.guard = r.work_guard();
      i.params = r.params();
      e.instruction = std::move(i);
      break;
    }
    case Tag::write_result: {
      WriteResult i;
      i.slot = r.slot();
      i.payload = r.blob();
      e.instruction = std::move(i);
      break;
    }
    case Tag::release_guard:
      e.instruction = ReleaseGuard{r.guard()};
      break;
    case Tag::destroy: {
      Destroy i;
      i.target = r.ref();
      i.guard = r.work_guard();
      e.instruction = i;
      break;
    }
    case Tag::copy_block: {
      CopyBlock i;
      i.target = r.ref();
      i.offset = r.u64();
      i.payload = r.blob();
      i.guard = r.work_guard();
      e.instruction = std::move(i);
      break;
    }
    case Tag::read_block: {
      ReadBlock i;
      i.target = r.ref();
      i.offset = r.u64();
      i.length = r.u64();
      i.result = r.slot();
      i.guard = r.work_guard();
      e.instruction = i;
      break;
    }
    default:
      throw MalformedFrame("unknown instruction tag 0x" +
                               std::string{"0123456789abcdef"[tag >> 4]} +
                               std::string{"0123456789abcdef"[tag & 0xf]},
                           tag_offset);
  }
  if (!r.at_end()) {
    throw MalformedFrame(std::to_string(bytes.size() - r.offset()) + " trailing bytes", r.offset());
  }
  return e;
}

Bytes write_frame(std::span<const std::uint8_t> payload) {
  if (payload.size() > std::numeric_limits<std::uint32_t>::max()) {
    throw std::length_error("frame payload exceeds u32 length prefix");
  }
  const auto n = static_cast<std::uint32_t>(payload.size());
  Bytes out;
  out.reserve(payload.size() + 4);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(n >> (8 * i)));
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

namespace {

// Fills out completely; returns bytes read before end of stream.
std::size_t read_fully(ByteSource& source, std::span<std::uint8_t> out) {
  std::size_t got = 0;
  while (got < out.size()) {
    const std::size_t n = source.read_some(out.subspan(got));
    if (n == 0) break;
    got += n;
  }
  return got;
}

}  // namespace

std::optional<Bytes> read_frame(ByteSource& source) {
  std::array<std::uint8_t, 4> header{};
  const std::size_t h = read_fully(source, header);
  if (h == 0) return std::nullopt;
  if (h < header.size()) throw TruncatedFrame("stream closed inside frame header");
  const std::uint32_t n = std::uint32_t{header[0]} | std::uint32_t{header[1]} << 8 |
                          std::uint32_t{header[2]} << 16 | std::uint32_t{header[3]} << 24;
  Bytes payload(n);
  if (read_fully(source, payload) < n) {
    throw TruncatedFrame("stream closed inside frame body of " + std::to_string(n) + " bytes");
  }
  return payload;
}

std::size_t BufferSource::read_some(std::span<std::uint8_t> out) {
  const std::size_t n = std::min(out.size(), data_.size() - pos_);
  std::memcpy(out.data(), data_.data() + pos_, n);
  pos_ += n;
  return n;
}

}  // namespace pobj
