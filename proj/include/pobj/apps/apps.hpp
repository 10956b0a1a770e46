#pragma once

#include "pobj/kind.hpp"

namespace pobj::apps {

/// Every application kind; driver and launched agents must agree on it.
void register_all(KindRegistry& registry);

struct ArraysResult {
  double a2 = 0.0;      // a[2] after a[2] = 22.22 + x
  double z = 0.0;       // a[24] + 3.1 on a fresh array
  bool bound_checked = false;  // a[1024] = v on a 1024-element array was rejected
};

/// Remote array element access on a host named "array-host".
ArraysResult arrays_demo(double x);

}  // namespace pobj::apps
