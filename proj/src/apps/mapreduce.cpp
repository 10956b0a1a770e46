#include "pobj/apps/mapreduce.hpp"

#include <random>
#include <string>

#include "pobj/api.hpp"

namespace pobj::apps {

void register_mapreduce(KindRegistry& registry) {
  KindBuilder(kWorker, "Worker").method(kCompute, "compute").register_in(registry);
}

double mapreduce_demo(const std::vector<double>& data, std::size_t hosts) {
  const std::size_t n = data.size();
  if (n == 0) return 0.0;
  hosts = std::max<std::size_t>(1, std::min(hosts, n));

  std::vector<Future<AgentAddress>> host(hosts);
  for (std::size_t h = 0; h < hosts; ++h) host[h] = create_host("host" + std::to_string(h));

  std::vector<Future<Remote<Worker>>> workers(n);
  for (std::size_t i = 0; i < n; ++i) workers[i] = construct(kWorker, host[i % hosts].get());

  std::vector<Future<double>> results(n);
  for (std::size_t i = 0; i < n; ++i) results[i] = call(workers[i], kCompute, data[i]);

  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) total += results[i].get();

  for (auto& w : workers) destroy(w.get());
  return total;
}

double mapreduce_oracle(const std::vector<double>& data) {
  double total = 0.0;
  for (double x : data) total += x * x;
  return total;
}

std::vector<double> mapreduce_data(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  std::vector<double> data(n);
  for (auto& x : data) x = dist(rng);
  return data;
}

}  // namespace pobj::apps
