#include "pobj/apps/apps.hpp"

#include <stdexcept>

#include "pobj/api.hpp"
#include "pobj/apps/bfs.hpp"
#include "pobj/apps/fft.hpp"
#include "pobj/apps/mapreduce.hpp"

namespace pobj::apps {

void register_all(KindRegistry& registry) {
  register_mapreduce(registry);
  register_bfs(registry);
  register_fft(registry);
}

ArraysResult arrays_demo(double x) {
  const AgentAddress host = create_host("array-host");
  RemoteArray a = RemoteArray::create(host.agent, 1024);
  ArraysResult result;
  a.set(2, 22.22 + x);
  result.a2 = a.get(2);
  result.z = a.get(24) + 3.1;
  try {
    a.set(1024, 1.0);
  } catch (const std::out_of_range&) {
    result.bound_checked = true;
  }
  destroy(Remote<void>(a.ref()));
  return result;
}

}  // namespace pobj::apps
