#pragma once

// The one-to-many copy loop `for (i = 0; i < N; ++i) a[i] = b;` over N
// remote arrays: every destination receives the same CopyBlock payload,
// which the trace analyzer should report as a single broadcast group.

#include <cstdint>
#include <vector>

namespace pobj::apps {

struct BroadcastResult {
  std::size_t arrays = 0;
  std::size_t length = 0;
  std::size_t mismatches = 0;  // arrays whose read-back differs from b
};

/// Runs inside an activity; places array i on host "array<i>".
BroadcastResult broadcast_demo(std::size_t arrays, std::size_t length, std::uint64_t seed);

}  // namespace pobj::apps
