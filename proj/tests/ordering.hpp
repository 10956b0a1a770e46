#pragma once

// Shared ordering fixtures: the barrier-statement program and the four
// iteration combinators, run on a fuzzed cluster and checked against the
// exec spans recorded in the trace.

#include <algorithm>
#include <chrono>
#include <map>
#include <mutex>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include <fmt/format.h>

#include "pobj/analysis.hpp"
#include "pobj/api.hpp"
#include "pobj/cluster.hpp"

namespace ordering {

using namespace pobj;

struct Step {
  int work(int us) {
    std::this_thread::sleep_for(std::chrono::microseconds(us));
    return us;
  }
};

inline constexpr Kind<Step> kStep{40};
inline constexpr Method<&Step::work> kWork{1};

inline void setup(KindRegistry& r) {
  KindBuilder(kStep, "Step").method(kWork, "work").concurrent().register_in(r);
}

enum class Program { barrier, parallel, seq_iterations, parallel_iterations, sequential };

inline const char* name(Program p) {
  switch (p) {
    case Program::barrier: return "barrier";
    case Program::parallel: return "iter_parallel";
    case Program::seq_iterations: return "iter_seq_iterations";
    case Program::parallel_iterations: return "iter_parallel_iterations";
    case Program::sequential: return "iter_sequential";
  }
  return "?";
}

struct Span {
  std::string label;
  std::int64_t start = 0;
  std::int64_t end = 0;
};

struct Run {
  std::vector<Span> spans;  // in label order: A0, B0, A1, B1, ... or a, b, c, d
  std::vector<std::string> audit;  // guard protocol violations
  std::vector<std::string> sequential_audit;
  std::vector<int> results;
};

inline constexpr std::size_t kIterations = 4;

inline Run run(Program program, std::uint64_t seed, ExecMode mode = ExecMode::causal_async) {
  ClusterConfig cfg;
  cfg.agents = 4;
  cfg.seed = seed;
  cfg.mode = mode;
  cfg.fuzz = FuzzConfig{0, 150, 0.5};
  cfg.wait_timeout = std::chrono::seconds(30);

  std::mt19937_64 rng(seed);
  std::vector<int> cost(2 * kIterations + 4);
  for (auto& c : cost) c = static_cast<int>(rng() % 300);

  std::mutex mu;
  std::map<GuardRef, std::string> labels;
  std::vector<std::string> order;
  std::vector<int> results;

  Cluster cluster(cfg, setup);
  cluster.start();
  cluster.run_main([&] {
    std::vector<Remote<Step>> steps;
    for (std::uint64_t a = 1; a <= cfg.agents; ++a) steps.push_back(construct(kStep, AgentId{a}).get());
    drain();

    std::vector<Future<int>> futures;
    auto issue = [&](const std::string& label, std::size_t k) {
      auto f = call(steps[k % steps.size()], kWork, cost[k]);
      std::lock_guard lock(mu);
      labels[f.guard()] = label;
      futures.push_back(f);
    };
    auto a = [&](std::size_t i) { issue(fmt::format("A{}", i), 2 * i); };
    auto b = [&](std::size_t i) { issue(fmt::format("B{}", i), 2 * i + 1); };
    for (std::size_t i = 0; i < kIterations; ++i) {
      order.push_back(fmt::format("A{}", i));
      order.push_back(fmt::format("B{}", i));
    }

    switch (program) {
      case Program::barrier:
        order = {"a", "b", "c", "d"};
        issue("a", 0);
        barrier_scope([&] {
          issue("b", 1);
          issue("c", 2);
        });
        issue("d", 3);
        break;
      case Program::parallel:
        iter_parallel(kIterations, [&](std::size_t i) {
          a(i);
          b(i);
        });
        break;
      case Program::seq_iterations:
        iter_seq_iterations(kIterations, [&](std::size_t i) {
          a(i);
          b(i);
        });
        break;
      case Program::parallel_iterations:
        iter_parallel_iterations(kIterations, a, b);
        break;
      case Program::sequential:
        iter_sequential(kIterations, a, b);
        break;
    }
    drain();
    for (auto& f : futures) results.push_back(f.get());
  });
  cluster.shutdown();

  Run out;
  out.results = std::move(results);
  const Trace trace = make_trace(cluster.trace());
  std::map<std::string, Span> by_label;
  for (const auto& s : exec_spans(trace)) {
    auto it = labels.find(s.guard);
    if (it != labels.end()) by_label[it->second] = Span{it->second, s.start_ns, s.end_ns};
  }
  for (const auto& l : order) {
    auto it = by_label.find(l);
    out.spans.push_back(it == by_label.end() ? Span{l, -1, -1} : it->second);
  }
  out.audit = audit_guards(trace).violations;
  if (mode == ExecMode::distributed_sequential) out.sequential_audit = audit_sequential(trace);
  return out;
}

inline const Span& span(const Run& r, const std::string& label) {
  for (const auto& s : r.spans) {
    if (s.label == label) return s;
  }
  static const Span missing{"?", -1, -1};
  return missing;
}

inline void precede(const Run& r, const std::string& x, const std::string& y,
                    std::vector<std::string>& out) {
  const Span& a = span(r, x);
  const Span& b = span(r, y);
  if (a.start < 0 || b.start < 0) {
    out.push_back(fmt::format("missing span {} or {}", x, y));
  } else if (a.end > b.start) {
    out.push_back(fmt::format("{} ended at {} after {} started at {}", x, a.end, y, b.start));
  }
}

/// Contract violations for `program`; empty when the trace honours it.
inline std::vector<std::string> violations(Program program, const Run& r) {
  std::vector<std::string> out;
  for (const auto& s : r.spans) {
    if (s.start < 0) out.push_back("no exec span for " + s.label);
  }
  auto A = [](std::size_t i) { return fmt::format("A{}", i); };
  auto B = [](std::size_t i) { return fmt::format("B{}", i); };
  switch (program) {
    case Program::barrier:
      for (const char* x : {"b", "c"}) {
        precede(r, "a", x, out);
        precede(r, x, "d", out);
      }
      break;
    case Program::parallel:
      break;
    case Program::seq_iterations:
      for (std::size_t i = 0; i + 1 < kIterations; ++i) {
        for (const auto& x : {A(i), B(i)}) {
          for (const auto& y : {A(i + 1), B(i + 1)}) precede(r, x, y, out);
        }
      }
      break;
    case Program::parallel_iterations:
      for (std::size_t i = 0; i < kIterations; ++i) precede(r, A(i), B(i), out);
      break;
    case Program::sequential:
      for (std::size_t k = 0; k + 1 < r.spans.size(); ++k) {
        precede(r, r.spans[k].label, r.spans[k + 1].label, out);
      }
      break;
  }
  for (const auto& v : r.audit) out.push_back("guard audit: " + v);
  for (const auto& v : r.sequential_audit) out.push_back("sequential audit: " + v);
  return out;
}

/// Labels ordered by exec start.
inline std::vector<std::string> start_order(const Run& r) {
  auto spans = r.spans;
  std::stable_sort(spans.begin(), spans.end(),
                   [](const Span& a, const Span& b) { return a.start < b.start; });
  std::vector<std::string> out;
  for (const auto& s : spans) out.push_back(s.label);
  return out;
}

/// Number of span pairs whose executions overlap in time.
inline std::size_t overlaps(const Run& r) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < r.spans.size(); ++i) {
    for (std::size_t j = i + 1; j < r.spans.size(); ++j) {
      const auto& a = r.spans[i];
      const auto& b = r.spans[j];
      if (a.start < b.end && b.start < a.end) ++n;
    }
  }
  return n;
}

}  // namespace ordering
