#pragma once

// Master/worker reduction: workers are constructed on named hosts, all
// compute calls are issued before any result is read, and the results are
// summed in index order.

#include <cstdint>
#include <vector>

#include "pobj/kind.hpp"

namespace pobj::apps {

class Worker {
 public:
  double compute(double x) { return x * x; }
};

inline constexpr Kind<Worker> kWorker{100};
inline constexpr Method<&Worker::compute> kCompute{1};

void register_mapreduce(KindRegistry& registry);

/// Runs inside an activity. `hosts` is the number of named hosts to spread
/// workers over (worker i goes to host i mod hosts).
double mapreduce_demo(const std::vector<double>& data, std::size_t hosts);

/// Same arithmetic in the same order, in this thread.
double mapreduce_oracle(const std::vector<double>& data);

std::vector<double> mapreduce_data(std::size_t n, std::uint64_t seed);

}  // namespace pobj::apps
