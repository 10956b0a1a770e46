#pragma once

// Golden envelopes and a random envelope generator shared by the wire tests
// and the acceptance run.

#include <cctype>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "pobj/wire.hpp"

namespace vectors {

using namespace pobj;

inline Bytes hex(std::string_view text) {
  Bytes out;
  std::string digits;
  for (char c : text) {
    if (std::isxdigit(static_cast<unsigned char>(c))) digits.push_back(c);
  }
  for (std::size_t i = 0; i + 1 < digits.size(); i += 2) {
    out.push_back(static_cast<std::uint8_t>(std::stoul(digits.substr(i, 2), nullptr, 16)));
  }
  return out;
}

inline Envelope env(std::uint64_t src, std::uint64_t dst, Instruction i) {
  return Envelope{kWireVersion, AgentId{src}, AgentId{dst}, std::move(i)};
}

inline GuardRef g(std::uint64_t agent, std::uint64_t id) { return {AgentId{agent}, id}; }
inline ResultSlot s(std::uint64_t agent, std::uint64_t id) { return {AgentId{agent}, id}; }
inline RemoteRef r(std::uint64_t agent, std::uint64_t id) { return {AgentId{agent}, id}; }

struct Golden {
  std::string name;
  Envelope envelope;
  Bytes bytes;
};

// Hand-encoded; any layout change must break these.
inline std::vector<Golden> golden() {
  return {
      {"ReleaseGuard", env(3, 2, ReleaseGuard{g(2, 7)}),
       hex("01 00"
           "03 00 00 00 00 00 00 00"
           "02 00 00 00 00 00 00 00"
           "04"
           "02 00 00 00 00 00 00 00"
           "07 00 00 00 00 00 00 00")},
      {"WriteResult", env(2, 1, WriteResult{s(1, 9), {}}),
       hex("0100020000000000000001000000000000000301000000000000000900000000"
           "00000000000000")},
      {"Invoke",
       env(1, 3,
           Invoke{r(3, 5), 7, s(1, 11), g(1, 12),
                  {Param{ParamMode::by_value, {}, {1, 2, 3, 4}},
                   Param{ParamMode::by_value, {}, {5, 6, 7, 8}}}}),
       hex("0100010000000000000003000000000000000203000000000000000500000000"
           "0000000700000001000000000000000b0000000000000001000000000000000c"
           "000000000000000200000400000001020304000400000005060708")},
      {"Construct",
       env(1, 2,
           Construct{100, s(1, 1), g(1, 2),
                     {Param{ParamMode::by_reference, s(1, 3), {0xaa, 0xbb}}}}),
       hex("0100010000000000000002000000000000000164000000010000000000000001"
           "0000000000000001000000000000000200000000000000010001010000000000"
           "0000030000000000000002000000aabb")},
      {"Destroy", env(1, 2, Destroy{r(2, 4), g(1, 6)}),
       hex("0100010000000000000002000000000000000502000000000000000400000000"
           "00000001000000000000000600000000000000")},
      {"CopyBlock", env(1, 2, CopyBlock{r(2, 4), 16, {0x10, 0x20, 0x30}, g(1, 7)}),
       hex("0100010000000000000002000000000000000602000000000000000400000000"
           "0000001000000000000000030000001020300100000000000000070000000000"
           "0000")},
      {"ReadBlock", env(1, 2, ReadBlock{r(2, 4), 8, 24, s(1, 13), g(1, 14)}),
       hex("0100010000000000000002000000000000000702000000000000000400000000"
           "0000000800000000000000180000000000000001000000000000000d00000000"
           "00000001000000000000000e00000000000000")},
  };
}

inline const Golden& golden(std::string_view name) {
  static const std::vector<Golden> all = golden();
  for (const auto& v : all) {
    if (v.name == name) return v;
  }
  throw std::out_of_range(std::string(name));
}

struct Gen {
  std::mt19937_64 rng;

  std::uint64_t u64() {
    // mix small and full-width values so boundary bytes get exercised
    switch (rng() % 4) {
      case 0: return 0;
      case 1: return rng() % 256;
      case 2: return ~std::uint64_t{0} - rng() % 4;
      default: return rng();
    }
  }
  Bytes blob() {
    Bytes b(rng() % 5 == 0 ? 0 : rng() % 300);
    for (auto& x : b) x = static_cast<std::uint8_t>(rng());
    return b;
  }
  // guard id 0 means "no guard" and is rejected on work instructions
  GuardRef guard() { return {AgentId{u64()}, u64() | 1}; }
  ResultSlot slot() { return {AgentId{u64()}, u64()}; }
  RemoteRef ref() { return {AgentId{u64()}, u64()}; }
  ParamList params() {
    ParamList p(rng() % 6);
    for (auto& x : p) {
      x.mode = rng() % 2 ? ParamMode::by_reference : ParamMode::by_value;
      if (x.mode == ParamMode::by_reference) x.writeback = slot();
      x.payload = blob();
    }
    return p;
  }
  Instruction instruction() {
    switch (rng() % 7) {
      case 0: return Construct{static_cast<std::uint32_t>(u64()), slot(), guard(), params()};
      case 1: return Invoke{ref(), static_cast<std::uint32_t>(u64()), slot(), guard(), params()};
      case 2: return WriteResult{slot(), blob()};
      case 3: return ReleaseGuard{guard()};
      case 4: return Destroy{ref(), guard()};
      case 5: return CopyBlock{ref(), u64(), blob(), guard()};
      default: return ReadBlock{ref(), u64(), u64(), slot(), guard()};
    }
  }
  Envelope envelope() { return {kWireVersion, AgentId{u64()}, AgentId{u64()}, instruction()}; }
};

}  // namespace vectors
