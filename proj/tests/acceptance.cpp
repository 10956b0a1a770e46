// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any
// fails. Every reference value comes from tests/oracles.hpp or from
// hand-encoded vectors, never from the library under test.

#include <algorithm>
#include <bit>
#include <chrono>
#include <cstring>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "oracles.hpp"
#include "ordering.hpp"
#include "pobj/analysis.hpp"
#include "pobj/api.hpp"
#include "pobj/apps/apps.hpp"
#include "pobj/apps/bfs.hpp"
#include "pobj/apps/broadcast.hpp"
#include "pobj/apps/fft.hpp"
#include "pobj/apps/mapreduce.hpp"
#include "pobj/cluster.hpp"
#include "wire_vectors.hpp"

using namespace pobj;
using Clock = std::chrono::steady_clock;

namespace {

// Pinned tolerances and budgets.
constexpr double kFftRelError = 1e-9;  // max abs error / RMS of the oracle output
constexpr double kFftBudgetSeconds = 60;
constexpr double kBfsBudgetSeconds = 30;
constexpr std::size_t kOrderingSeeds = 100;
constexpr std::size_t kMapReduceSchedules = 100;
constexpr std::size_t kBfsSeeds = 20;
constexpr std::size_t kWireEnvelopes = 100000;
constexpr std::size_t kReleaseBeforeWait = 1000;

int failures = 0;

void report(const std::string& name, bool pass, const std::string& detail) {
  std::cout << (pass ? "PASS" : "FAIL") << "  " << name << ": " << detail << std::endl;
  if (!pass) ++failures;
}

double seconds_since(Clock::time_point t) {
  return std::chrono::duration<double>(Clock::now() - t).count();
}

void setup(KindRegistry& r) {
  apps::register_all(r);
  ordering::setup(r);
}

// Guard-protocol totals across every cluster this run starts.
struct GuardTotals {
  std::uint64_t clusters = 0;
  std::uint64_t issued = 0;
  std::uint64_t released = 0;
  std::vector<std::string> violations;

  void add(const std::vector<TraceEvent>& events, const AgentHealth& health) {
    ++clusters;
    const auto audit = audit_guards(make_trace(events));
    issued += audit.issued;
    released += audit.released;
    violations.insert(violations.end(), audit.violations.begin(), audit.violations.end());
    if (!health.healthy()) violations.push_back("cluster reported agent faults");
  }
} totals;

ClusterConfig base(std::size_t agents, std::uint64_t seed = 1,
                   ExecMode mode = ExecMode::causal_async) {
  ClusterConfig c;
  c.agents = agents;
  c.seed = seed;
  c.mode = mode;
  c.wait_timeout = std::chrono::seconds(120);
  return c;
}

std::vector<TraceEvent> run_cluster(const ClusterConfig& cfg, const std::function<void()>& body) {
  Cluster c(cfg, setup);
  c.start();
  c.run_main(body);
  c.shutdown();
  auto events = c.trace();
  totals.add(events, c.health());
  return events;
}

std::vector<AgentAddress> hosts(const std::string& prefix, std::size_t n) {
  std::vector<Future<AgentAddress>> f;
  for (std::size_t i = 0; i < n; ++i) f.push_back(create_host(prefix + std::to_string(i)));
  std::vector<AgentAddress> out;
  for (auto& x : f) out.push_back(x.get());
  return out;
}

std::vector<apps::cd> random_input(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(-1, 1);
  std::vector<apps::cd> v(n);
  for (auto& x : v) x = apps::cd(d(rng), d(rng));
  return v;
}

// 32^3 transform: 4^3 pages of 8^3 over 4 device and 4 cpu hosts.
std::vector<apps::cd> distributed_fft(const std::vector<apps::cd>& input) {
  const auto devices = hosts("dev", 4);
  const auto cpus = hosts("cpu", 4);
  const apps::DistArray a = apps::array_allocate({4, 4, 4}, {8, 8, 8}, devices);
  apps::array_store(a, input);
  return apps::array_load(apps::array_fft3d(a, cpus, apps::LineVariant::transpose_at_device));
}

// Largest number of guards in flight that are not stalled on a nested call
// they caused. A guard issued by agent A while some in-flight guard is
// executing on A is that guard's child; the frontier is the set of
// in-flight guards with no in-flight child.
std::size_t max_frontier(const std::vector<TraceEvent>& events) {
  std::map<GuardRef, std::pair<AgentId, std::int64_t>> exec;  // executor, start
  for (const auto& e : events) {
    if (e.kind == EventKind::exec_start) exec[e.guard] = {e.agent, e.ns};
  }
  std::vector<const TraceEvent*> points;
  for (const auto& e : events) {
    if (e.kind == EventKind::issue || e.kind == EventKind::release) points.push_back(&e);
  }
  std::stable_sort(points.begin(), points.end(), [](const TraceEvent* a, const TraceEvent* b) {
    if (a->ns != b->ns) return a->ns < b->ns;
    return a->kind == EventKind::release && b->kind != EventKind::release;
  });
  std::map<GuardRef, GuardRef> parent;
  std::map<GuardRef, int> children;
  std::set<GuardRef> live;
  std::size_t frontier = 0, best = 0;
  for (const auto* e : points) {
    if (e->kind == EventKind::issue) {
      std::optional<GuardRef> p;
      for (const auto& g : live) {
        auto it = exec.find(g);
        if (it != exec.end() && it->second.first == e->agent && it->second.second <= e->ns) p = g;
      }
      live.insert(e->guard);
      ++frontier;
      if (p) {
        parent[e->guard] = *p;
        if (children[*p]++ == 0) --frontier;
      }
    } else if (live.erase(e->guard)) {
      if (children[e->guard] == 0) --frontier;
      auto it = parent.find(e->guard);
      if (it != parent.end() && live.count(it->second) && --children[it->second] == 0) ++frontier;
    }
    best = std::max(best, frontier);
  }
  return best;
}

void fft_oracle() {
  const auto t0 = Clock::now();
  const auto input = random_input(32 * 32 * 32, 2024);
  std::vector<apps::cd> out;
  run_cluster(base(8), [&] { out = distributed_fft(input); });
  const auto expect = oracle::dft3(input, 32, 32, 32);
  double err = 0, sq = 0;
  for (std::size_t i = 0; i < expect.size(); ++i) {
    err = std::max(err, std::abs(out[i] - expect[i]));
    sq += std::norm(expect[i]);
  }
  const double rms = std::sqrt(sq / static_cast<double>(expect.size()));
  const double elapsed = seconds_since(t0);
  report("fft oracle equivalence",
         err <= kFftRelError * rms && elapsed < kFftBudgetSeconds,
         fmt::format("32^3 on 8 agents, max error {:.3e} <= {:.3e} (1e-9 x rms {:.4e}), {:.2f} s",
                     err, kFftRelError * rms, rms, elapsed));
}

void bfs_validity() {
  const auto t0 = Clock::now();
  std::size_t good = 0;
  std::string first_failure;
  for (std::uint64_t seed = 1; seed <= kBfsSeeds; ++seed) {
    const apps::Graph g = apps::random_graph(4096, 16.0, seed);
    apps::BfsResult r;
    run_cluster(base(4, seed), [&] { r = apps::graph_build_tree(g, 4, 4, 0); });
    const auto check = apps::bfs_validate(g, r.parents, 0);
    const bool levels_match = r.levels == oracle::bfs_levels(g.adjacency, 0);
    if (check.ok() && levels_match) {
      ++good;
    } else if (first_failure.empty()) {
      first_failure = fmt::format(", seed {}: {}", seed,
                                  check.ok() ? "levels differ" : check.failures.front());
    }
  }
  const double elapsed = seconds_since(t0);
  report("bfs validity", good == kBfsSeeds && elapsed < kBfsBudgetSeconds,
         fmt::format("2^12 vertices, degree 16, 4 parts: {}/{} seeds valid, {:.2f} s{}", good,
                     kBfsSeeds, elapsed, first_failure));
}

void mapreduce_determinism() {
  const auto data = apps::mapreduce_data(1000, 77);
  const double expect = oracle::sum_of_squares(data);
  std::size_t exact = 0;
  for (std::uint64_t seed = 1; seed <= kMapReduceSchedules; ++seed) {
    auto cfg = base(8, seed);
    cfg.fuzz = FuzzConfig{0, 100, 0.3};
    double total = 0;
    run_cluster(cfg, [&] { total = apps::mapreduce_demo(data, 8); });
    exact += std::bit_cast<std::uint64_t>(total) == std::bit_cast<std::uint64_t>(expect);
  }
  report("mapreduce determinism", exact == kMapReduceSchedules,
         fmt::format("n=1000 on 8 agents: {}/{} fuzzed schedules bit-identical to {:.17g}", exact,
                     kMapReduceSchedules, expect));
}

void ordering_contracts() {
  using ordering::Program;
  std::size_t runs = 0, bad = 0, exact_order = 0, overlapped = 0;
  std::string first;
  const std::vector<std::string> total_order = {"A0", "B0", "A1", "B1", "A2", "B2", "A3", "B3"};
  for (auto program : {Program::barrier, Program::parallel, Program::seq_iterations,
                       Program::parallel_iterations, Program::sequential}) {
    for (std::uint64_t seed = 1; seed <= kOrderingSeeds; ++seed) {
      const auto r = ordering::run(program, seed);
      ++runs;
      ++totals.clusters;
      totals.violations.insert(totals.violations.end(), r.audit.begin(), r.audit.end());
      const auto v = ordering::violations(program, r);
      if (!v.empty()) {
        ++bad;
        if (first.empty()) first = fmt::format(", {} seed {}: {}", ordering::name(program), seed, v.front());
      }
      if (program == Program::sequential) {
        exact_order += ordering::start_order(r) == total_order && ordering::overlaps(r) == 0;
      }
      if (program == Program::parallel) overlapped += ordering::overlaps(r) > 0;
    }
  }
  report("ordering contracts",
         bad == 0 && exact_order == kOrderingSeeds && overlapped >= 1,
         fmt::format("{} runs, {} with violations; sequential exact order {}/{}; "
                     "parallel schedules with overlap {}/{}{}",
                     runs, bad, exact_order, kOrderingSeeds, overlapped, kOrderingSeeds, first));
}

void wire_codec() {
  vectors::Gen gen{std::mt19937_64(99)};
  std::size_t ok = 0;
  for (std::size_t i = 0; i < kWireEnvelopes; ++i) {
    const Envelope e = gen.envelope();
    const Bytes b = encode(e);
    ok += decode(b) == e && encode(decode(b)) == b;
  }
  std::size_t golden_ok = 0;
  const auto golden = vectors::golden();
  for (const auto& v : golden) golden_ok += encode(v.envelope) == v.bytes && decode(v.bytes) == v.envelope;
  report("wire codec", ok == kWireEnvelopes && golden_ok == golden.size(),
         fmt::format("{}/{} random envelopes round-trip, {}/{} golden vectors byte-exact", ok,
                     kWireEnvelopes, golden_ok, golden.size()));
}

void mode_equivalence() {
  const auto fft_input = random_input(32 * 32 * 32, 5);
  const apps::Graph graph = apps::random_graph(2048, 12.0, 3);
  const auto data = apps::mapreduce_data(500, 3);

  struct Results {
    std::vector<apps::cd> fft;
    apps::BfsResult bfs;
    double total = 0;
  };
  std::map<ExecMode, Results> results;
  std::size_t frontier = 0, causal_frontier = 0;
  std::vector<std::string> seq_audit;
  for (auto mode : {ExecMode::causal_async, ExecMode::distributed_sequential}) {
    auto& r = results[mode];
    std::vector<std::vector<TraceEvent>> traces;
    traces.push_back(run_cluster(base(8, 1, mode), [&] { r.fft = distributed_fft(fft_input); }));
    traces.push_back(run_cluster(base(4, 1, mode), [&] { r.bfs = apps::graph_build_tree(graph, 4, 4, 0); }));
    traces.push_back(run_cluster(base(4, 1, mode), [&] { r.total = apps::mapreduce_demo(data, 4); }));
    if (mode == ExecMode::distributed_sequential) {
      for (const auto& t : traces) {
        frontier = std::max(frontier, max_frontier(t));
        const auto v = audit_sequential(make_trace(t));
        seq_audit.insert(seq_audit.end(), v.begin(), v.end());
      }
    } else {
      for (const auto& t : traces) causal_frontier = std::max(causal_frontier, max_frontier(t));
    }
  }
  const auto& a = results[ExecMode::causal_async];
  const auto& s = results[ExecMode::distributed_sequential];
  const bool fft_same = a.fft.size() == s.fft.size() &&
                        std::memcmp(a.fft.data(), s.fft.data(), a.fft.size() * sizeof(apps::cd)) == 0;
  const bool bfs_same = a.bfs.parents == s.bfs.parents && a.bfs.levels == s.bfs.levels;
  const bool mr_same = std::bit_cast<std::uint64_t>(a.total) == std::bit_cast<std::uint64_t>(s.total);
  report("mode equivalence",
         fft_same && bfs_same && mr_same && frontier <= 1 && seq_audit.empty(),
         fmt::format("fft {}, bfs {}, mapreduce {}; sequential mode max in-flight guards {}, "
                     "nesting violations {} (causal mode: {})",
                     fft_same ? "identical" : "DIFFERENT", bfs_same ? "identical" : "DIFFERENT",
                     mr_same ? "identical" : "DIFFERENT", frontier, seq_audit.size(), causal_frontier));
}

void broadcast_detection() {
  const std::size_t length = 512;
  apps::BroadcastResult r;
  const auto events = run_cluster(base(64), [&] { r = apps::broadcast_demo(64, length, 8); });
  const auto groups = detect_broadcast(make_trace(events));
  const std::uint64_t payload = length * sizeof(double);
  bool ok = groups.size() == 1 && r.mismatches == 0;
  std::string detail = fmt::format("{} group(s)", groups.size());
  if (groups.size() == 1) {
    const auto& g = groups.front();
    ok = ok && g.fanout() == 64 && g.verified && g.payload_bytes == payload &&
         g.bytes_saved() == 63 * payload;
    detail += fmt::format(", fanout {}, payload {} B, saved {} B (expect {} B)", g.fanout(),
                          g.payload_bytes, g.bytes_saved(), 63 * payload);
  }
  report("broadcast detection", ok, detail);
}

void transport_equivalence() {
  const auto data = apps::mapreduce_data(400, 12);
  const apps::Graph graph = apps::random_graph(4096, 16.0, 12);
  struct Results {
    double total = 0;
    apps::BfsResult bfs;
    bool valid = false;
  };
  std::map<TransportKind, Results> results;
  std::string error;
  for (auto kind : {TransportKind::inproc, TransportKind::tcp}) {
    auto cfg = base(4, 12);
    cfg.transport = kind;
    cfg.launcher = POBJ_BINARY;
    auto& r = results[kind];
    try {
      run_cluster(cfg, [&] { r.total = apps::mapreduce_demo(data, 4); });
      run_cluster(cfg, [&] { r.bfs = apps::graph_build_tree(graph, 4, 4, 0); });
      r.valid = apps::bfs_validate(graph, r.bfs.parents, 0).ok() &&
                r.bfs.levels == oracle::bfs_levels(graph.adjacency, 0);
    } catch (const std::exception& e) {
      error = fmt::format(", {}: {}", to_string(kind), e.what());
    }
  }
  const auto& a = results[TransportKind::inproc];
  const auto& t = results[TransportKind::tcp];
  const bool mr = std::bit_cast<std::uint64_t>(a.total) == std::bit_cast<std::uint64_t>(t.total) &&
                  a.total == oracle::sum_of_squares(data);
  const bool bfs = a.valid && t.valid && a.bfs.parents == t.bfs.parents;
  report("transport equivalence", mr && bfs && error.empty(),
         fmt::format("tcp with 4 processes vs inproc: mapreduce {}, bfs {}{}",
                     mr ? "identical" : "DIFFERENT", bfs ? "identical and valid" : "DIFFERENT",
                     error));
}

// Run last: it folds in every cluster started above.
void guard_protocol() {
  std::size_t woken = 0;
  auto cfg = base(2);
  run_cluster(cfg, [&] {
    auto step = construct(ordering::kStep, AgentId{2}).get();
    Agent& self = *require_activity().agent;
    for (std::size_t i = 0; i < kReleaseBeforeWait; ++i) {
      auto f = call(step, ordering::kWork, 0);
      if (i % 2 == 0) {
        while (!self.guards().is_released(f.guard().guard)) std::this_thread::yield();
      }
      woken += f.get() == 0;
    }
  });
  report("guard protocol",
         totals.violations.empty() && totals.issued == totals.released &&
             woken == kReleaseBeforeWait,
         fmt::format("{} clusters, {} guards issued, {} released, {} violations; "
                     "release-before-wait {}/{}{}",
                     totals.clusters, totals.issued, totals.released, totals.violations.size(),
                     woken, kReleaseBeforeWait,
                     totals.violations.empty() ? "" : ", first: " + totals.violations.front()));
}

}  // namespace

int main() {
  spdlog::set_level(spdlog::level::warn);
  const auto t0 = Clock::now();
  fft_oracle();
  bfs_validity();
  mapreduce_determinism();
  ordering_contracts();
  wire_codec();
  mode_equivalence();
  broadcast_detection();
  transport_equivalence();
  guard_protocol();
  std::cout << fmt::format("{} criteria failed, {:.1f} s", failures, seconds_since(t0)) << std::endl;
  return failures == 0 ? 0 : 1;
}
