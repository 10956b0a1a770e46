#pragma once

// Application value codecs. Parameter and result payloads are opaque to the
// IR; applications serialize them with cereal's portable binary archive.
//
// Result cells written by WriteResult carry a one-byte status ahead of the
// value so that a remote failure can be reported through the same slot.

#include <cereal/archives/portable_binary.hpp>
#include <cereal/types/complex.hpp>
#include <cereal/types/string.hpp>
#include <cereal/types/tuple.hpp>
#include <cereal/types/utility.hpp>
#include <cereal/types/vector.hpp>

#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>

#include "pobj/wire.hpp"

namespace pobj {

class CodecError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <class T>
Bytes encode_value(const T& value) {
  std::ostringstream os(std::ios::binary);
  {
    cereal::PortableBinaryOutputArchive ar(os);
    ar(value);
  }
  const std::string s = std::move(os).str();
  return Bytes(s.begin(), s.end());
}

template <class T>
T decode_value(std::span<const std::uint8_t> bytes) {
  std::istringstream is(std::string(bytes.begin(), bytes.end()), std::ios::binary);
  T value{};
  try {
    cereal::PortableBinaryInputArchive ar(is);
    ar(value);
  } catch (const cereal::Exception& e) {
    throw CodecError(std::string("cannot decode value: ") + e.what());
  }
  if (is.peek() != std::char_traits<char>::eof()) {
    throw CodecError("trailing bytes after encoded value");
  }
  return value;
}

enum class CellStatus : std::uint8_t { ok = 0, error = 1 };

inline Bytes ok_cell(std::span<const std::uint8_t> value) {
  Bytes out;
  out.reserve(value.size() + 1);
  out.push_back(static_cast<std::uint8_t>(CellStatus::ok));
  out.insert(out.end(), value.begin(), value.end());
  return out;
}

inline Bytes error_cell(std::string_view message) {
  Bytes out;
  out.reserve(message.size() + 1);
  out.push_back(static_cast<std::uint8_t>(CellStatus::error));
  out.insert(out.end(), message.begin(), message.end());
  return out;
}

}  // namespace pobj
