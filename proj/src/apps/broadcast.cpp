#include "pobj/apps/broadcast.hpp"

#include <random>
#include <string>

#include "pobj/api.hpp"

namespace pobj::apps {

BroadcastResult broadcast_demo(std::size_t arrays, std::size_t length, std::uint64_t seed) {
  std::vector<Future<AgentAddress>> hosts(arrays);
  barrier_scope([&] {
    for (std::size_t i = 0; i < arrays; ++i) hosts[i] = create_host("array" + std::to_string(i));
  });
  std::vector<RemoteArray> a(arrays);
  for (std::size_t i = 0; i < arrays; ++i) a[i] = RemoteArray::create(hosts[i].get().agent, length);

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  std::vector<double> b(length);
  for (auto& x : b) x = dist(rng);

  barrier_scope([&] {
    for (std::size_t i = 0; i < arrays; ++i) a[i].write(0, b);
  }, "broadcast");

  BroadcastResult result{arrays, length, 0};
  std::vector<Future<std::vector<double>>> back(arrays);
  barrier_scope([&] {
    for (std::size_t i = 0; i < arrays; ++i) back[i] = a[i].read(0, length);
  });
  for (std::size_t i = 0; i < arrays; ++i) {
    if (back[i].get() != b) ++result.mismatches;
  }
  return result;
}

}  // namespace pobj::apps
