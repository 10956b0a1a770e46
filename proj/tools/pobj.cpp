// pobj: run the bundled applications on a cluster, analyze traces, and host
// single agents for multi-process runs.
//
//   pobj run <app> [flags]        exit 0 ok, 1 verification failure, 2 usage
//   pobj analyze <trace> [--json out.json]
//   pobj launch --agent-id N --registry host:port [...]

#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <bit>
#include <chrono>
#include <csignal>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "pobj/analysis.hpp"
#include "pobj/api.hpp"
#include "pobj/apps/apps.hpp"
#include "pobj/apps/bfs.hpp"
#include "pobj/apps/broadcast.hpp"
#include "pobj/apps/fft.hpp"
#include "pobj/apps/mapreduce.hpp"
#include "pobj/cluster.hpp"

namespace {

using namespace pobj;
using Settings = std::map<std::string, std::string>;

constexpr int kOk = 0;
constexpr int kVerifyFailed = 1;
constexpr int kUsage = 2;

// Above this many elements the direct-DFT oracle is impractical.
constexpr std::uint64_t kFftDeskLimit = std::uint64_t{1} << 21;

const std::vector<std::string> kApps = {"fft3d", "bfs", "mapreduce", "broadcast", "arrays"};

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

Settings read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read config file '" + path + "'");
  Settings out;
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw UsageError(fmt::format("{}:{}: expected key=value", path, number));
    }
    std::string key = trim(line.substr(0, eq));
    std::replace(key.begin(), key.end(), '-', '_');
    out[key] = trim(line.substr(eq + 1));
  }
  return out;
}

template <class T>
T number(const Settings& s, const std::string& key, T fallback) {
  auto it = s.find(key);
  if (it == s.end()) return fallback;
  try {
    std::size_t used = 0;
    if constexpr (std::is_floating_point_v<T>) {
      const double v = std::stod(it->second, &used);
      if (used != it->second.size()) throw std::invalid_argument(key);
      return static_cast<T>(v);
    } else {
      if (!it->second.empty() && it->second[0] == '-') throw std::invalid_argument(key);
      const unsigned long long v = std::stoull(it->second, &used);
      if (used != it->second.size()) throw std::invalid_argument(key);
      return static_cast<T>(v);
    }
  } catch (const std::logic_error&) {
    throw UsageError(fmt::format("invalid value for {}: '{}'", key, it->second));
  }
}

std::string text(const Settings& s, const std::string& key, const std::string& fallback = "") {
  auto it = s.find(key);
  return it == s.end() ? fallback : it->second;
}

std::string self_path() {
  std::error_code ec;
  auto p = std::filesystem::read_symlink("/proc/self/exe", ec);
  return ec ? std::string() : p.string();
}

// ---------------------------------------------------------------------------
// run

ClusterConfig cluster_config(Settings s) {
  if (auto it = s.find("fuzz"); it != s.end()) {
    const auto colon = it->second.find(':');
    if (colon == std::string::npos) {
      s["fuzz_min_us"] = "0";
      s["fuzz_max_us"] = it->second;
    } else {
      s["fuzz_min_us"] = it->second.substr(0, colon);
      s["fuzz_max_us"] = it->second.substr(colon + 1);
    }
  }
  s.erase("trace");  // the CLI always records; "trace" names the output file
  ClusterConfig config;
  try {
    config = ClusterConfig::from_map(s);
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }
  if (config.agents < 1) throw UsageError("agents must be at least 1");
  if (config.transport == TransportKind::tcp && config.launcher.empty()) {
    config.launcher = self_path();
  }
  config.trace = true;
  return config;
}

struct Outcome {
  bool ok = true;
  std::vector<std::string> lines;
};

apps::LineVariant parse_variant(const std::string& v) {
  if (v.empty() || v == "device" || v == "1") return apps::LineVariant::transpose_at_device;
  if (v == "reader" || v == "2") return apps::LineVariant::transpose_at_reader;
  throw UsageError("variant must be 'device' or 'reader'");
}

void print_fft_plan(const apps::FftConfig& c) {
  const auto pages = c.pages.size();
  const auto elements = pages * c.page_size.size();
  std::cout << fmt::format("fft3d plan: {}x{}x{} pages of {}x{}x{} elements\n", c.pages.n1,
                           c.pages.n2, c.pages.n3, c.page_size.n1, c.page_size.n2,
                           c.page_size.n3);
  std::cout << fmt::format("  extent {}x{}x{} = {} elements, {} bytes\n",
                           c.pages.n1 * c.page_size.n1, c.pages.n2 * c.page_size.n2,
                           c.pages.n3 * c.page_size.n3, elements, elements * sizeof(apps::cd));
  std::cout << fmt::format("  {} pages of {} bytes over {} devices (<= {} pages each), {} cpus\n",
                           pages, c.page_size.size() * sizeof(apps::cd), c.devices,
                           (pages + c.devices - 1) / c.devices, c.cpus);
  std::cout << fmt::format("  page lines per pass {}, per cpu {}\n", c.pages.n2 * c.pages.n3,
                           c.pages.n2 * c.pages.n3 / std::max<std::size_t>(c.cpus, 1));
}

struct FftPlan {
  apps::FftConfig config;
  bool plan_only = false;
};

FftPlan fft_plan(const Settings& s, const ClusterConfig& cc) {
  FftPlan plan;
  auto& c = plan.config;
  const auto pages = number<std::uint64_t>(s, "pages", 4);
  const auto page_size = number<std::uint64_t>(s, "page_size", 8);
  if (pages == 0 || page_size == 0) throw UsageError("pages and page-size must be positive");
  c.pages = {pages, pages, pages};
  c.page_size = {page_size, page_size, page_size};
  const std::size_t half = std::max<std::size_t>(1, cc.agents / 2);
  c.devices = number<std::size_t>(s, "devices", half);
  c.cpus = number<std::size_t>(s, "cpus", std::max<std::size_t>(1, cc.agents - half));
  if (c.devices == 0 || c.cpus == 0) throw UsageError("devices and cpus must be positive");
  c.seed = cc.seed;
  c.variant = parse_variant(text(s, "variant"));
  c.zero_input = text(s, "zero_input", "false") == "true";
  plan.plan_only = text(s, "plan", "false") == "true";
  if (pages % c.cpus != 0) {
    throw UsageError(fmt::format("cpus ({}) must divide pages per dimension ({})", c.cpus, pages));
  }
  if (!plan.plan_only && c.pages.size() * c.page_size.size() > kFftDeskLimit) {
    print_fft_plan(c);
    throw UsageError("array exceeds the oracle's desk-scale limit; rerun with --plan");
  }
  return plan;
}

std::vector<std::string> bfs_histogram(const apps::BfsReport& r) {
  std::vector<std::string> out;
  for (std::size_t l = 0; l < r.level_histogram.size(); ++l) {
    out.push_back(fmt::format("  level {:>3}: {}", l, r.level_histogram[l]));
  }
  return out;
}

int cmd_run(const std::string& app, const Settings& settings) {
  const ClusterConfig cc = cluster_config(settings);
  const std::string trace_path = text(settings, "trace");

  // Validate app parameters before any agent starts.
  std::optional<FftPlan> fft;
  std::optional<apps::Graph> graph;
  if (app == "fft3d") {
    fft = fft_plan(settings, cc);
    if (fft->plan_only) {
      print_fft_plan(fft->config);
      std::cout << "not executed (plan only)\n";
      return kOk;
    }
  } else if (app == "bfs") {
    const std::string graph_path = text(settings, "graph");
    try {
      graph = graph_path.empty()
                  ? apps::random_graph(number<std::uint64_t>(settings, "vertices", 4096),
                                       number<double>(settings, "degree", 16.0), cc.seed)
                  : apps::load_edge_list(graph_path);
    } catch (const UsageError&) {
      throw;
    } catch (const std::exception& e) {
      throw UsageError(e.what());
    }
    if (graph->vertices == 0) throw UsageError("graph has no vertices");
  }

  Cluster cluster(cc, apps::register_all);
  cluster.start();

  Outcome out;
  const auto started = std::chrono::steady_clock::now();
  std::string failure;
  try {
    cluster.run_main([&] {
      if (app == "fft3d") {
        const auto r = apps::fft3d_demo(fft->config);
        out.ok = r.ok;
        out.lines.push_back(fmt::format("extent: {}x{}x{}", r.extent.n1, r.extent.n2, r.extent.n3));
        out.lines.push_back(fmt::format("max-error: {:.3e} (tolerance {:.3e}, rms {:.6e})",
                                        r.max_abs_error, r.tolerance, r.rms));
        out.lines.push_back(fmt::format("spot-check-error: {:.3e}", r.spot_max_error));
        out.lines.push_back(fmt::format("parseval-rel-error: {:.3e}", r.parseval_rel_error));
      } else if (app == "bfs") {
        const auto parts = number<std::uint64_t>(settings, "parts", cc.agents);
        const auto root = number<std::uint64_t>(settings, "root", 0);
        if (parts == 0) throw UsageError("parts must be positive");
        if (root >= graph->vertices) throw UsageError("root is not a vertex");
        const auto r = apps::graph_build_tree(*graph, parts, cc.agents, root);
        const auto report = apps::bfs_validate(*graph, r.parents, root);
        out.ok = report.ok();
        out.lines.push_back(fmt::format("graph: {} vertices, {} edges, {} parts",
                                        graph->vertices, graph->edge_count(), parts));
        out.lines.push_back(fmt::format("iterations: {}", r.iterations));
        for (auto& l : bfs_histogram(report)) out.lines.push_back(l);
        out.lines.push_back(fmt::format("validation: {}", report.ok() ? "passed" : "FAILED"));
        for (const auto& f : report.failures) out.lines.push_back("  " + f);
      } else if (app == "mapreduce") {
        const auto n = number<std::size_t>(settings, "n", 1000);
        const auto data = apps::mapreduce_data(n, cc.seed);
        const double total = apps::mapreduce_demo(data, cc.agents);
        const double oracle = apps::mapreduce_oracle(data);
        out.ok = std::bit_cast<std::uint64_t>(total) == std::bit_cast<std::uint64_t>(oracle);
        out.lines.push_back(fmt::format("workers: {}", n));
        out.lines.push_back(fmt::format("total: {:.17g}", total));
        out.lines.push_back(fmt::format("oracle: {:.17g} ({})", oracle,
                                        out.ok ? "bit-identical" : "MISMATCH"));
      } else if (app == "broadcast") {
        const auto r = apps::broadcast_demo(number<std::size_t>(settings, "arrays", 64),
                                            number<std::size_t>(settings, "length", 256), cc.seed);
        out.ok = r.mismatches == 0;
        out.lines.push_back(fmt::format("arrays: {} x {} doubles, mismatches: {}", r.arrays,
                                        r.length, r.mismatches));
      } else if (app == "arrays") {
        const double x = number<double>(settings, "x", 1.0);
        const auto r = apps::arrays_demo(x);
        out.ok = r.a2 == 22.22 + x && r.z == 3.1 && r.bound_checked;
        out.lines.push_back(fmt::format("a[2]: {:.17g}", r.a2));
        out.lines.push_back(fmt::format("z: {:.17g}", r.z));
        out.lines.push_back(fmt::format("bounds check: {}", r.bound_checked ? "rejected" : "MISSED"));
      }
    });
  } catch (const UsageError&) {
    cluster.shutdown();
    throw;
  } catch (const ConfigError& e) {
    cluster.shutdown();
    throw UsageError(e.what());
  } catch (const std::exception& e) {
    failure = e.what();
  }
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  cluster.shutdown();

  std::cout << fmt::format("app: {}  agents: {}  transport: {}  mode: {}  seed: {}\n", app,
                           cc.agents, to_string(cc.transport), to_string(cc.mode), cc.seed);
  for (const auto& l : out.lines) std::cout << l << "\n";
  std::cout << fmt::format("time: {:.3f} s\n", seconds);

  bool ok = failure.empty() && out.ok;
  if (!failure.empty()) std::cout << "error: " << failure << "\n";

  const auto events = cluster.trace();
  try {
    const auto trace = make_trace(events);
    const auto guards = audit_guards(trace);
    std::cout << fmt::format("guards: {} issued, {} released, {} violations\n", guards.issued,
                             guards.released, guards.violations.size());
    for (std::size_t i = 0; i < std::min<std::size_t>(guards.violations.size(), 5); ++i) {
      std::cout << "  " << guards.violations[i] << "\n";
    }
    if (!guards.ok()) ok = false;
    if (cc.mode == ExecMode::distributed_sequential) {
      const auto v = audit_sequential(trace);
      std::cout << fmt::format("sequential audit: {} violations\n", v.size());
      if (!v.empty()) ok = false;
    }
    if (app == "broadcast") {
      for (const auto& g : detect_broadcast(trace)) {
        std::cout << fmt::format("broadcast: source {} fanout {} payload {} B, saved {} B\n",
                                 g.source.value, g.fanout(), g.payload_bytes, g.bytes_saved());
      }
    }
  } catch (const TraceValidationError& e) {
    std::cout << "trace invalid: " << e.what() << "\n";
    ok = false;
  }
  const auto health = cluster.health();
  if (health.protocol_errors || health.malformed_frames || health.transport_errors ||
      health.pool_exhausted) {
    std::cout << fmt::format("agent faults: protocol {}, malformed {}, transport {}{}\n",
                             health.protocol_errors, health.malformed_frames,
                             health.transport_errors, health.pool_exhausted ? ", pool exhausted" : "");
    ok = false;
  }

  if (!trace_path.empty()) {
    std::ofstream file(trace_path);
    if (!file) {
      std::cout << "error: cannot write trace to " << trace_path << "\n";
      return kVerifyFailed;
    }
    write_jsonl(file, events);
    std::cout << fmt::format("trace: {} events -> {}\n", events.size(), trace_path);
  }
  std::cout << (ok ? "result: ok\n" : "result: FAILED\n");
  return ok ? kOk : kVerifyFailed;
}

// ---------------------------------------------------------------------------
// analyze

int cmd_analyze(const std::string& path, const std::string& json_out, std::size_t min_fanout) {
  Trace trace;
  try {
    trace = load_trace(path);
  } catch (const TraceValidationError& e) {
    std::cerr << "invalid trace " << path << ": " << e.what() << "\n";
    for (const auto& o : e.offenders()) std::cerr << "  " << o << "\n";
    return kVerifyFailed;
  }
  const auto matrix = traffic_matrix(trace);
  const auto groups = detect_broadcast(trace, min_fanout);
  std::cout << format_report(matrix, groups);
  if (!json_out.empty()) {
    std::ofstream out(json_out);
    if (!out) {
      std::cerr << "cannot write " << json_out << "\n";
      return kVerifyFailed;
    }
    out << summary_json(matrix, groups).dump(2) << "\n";
  }
  return kOk;
}

// ---------------------------------------------------------------------------
// launch

std::atomic<bool> g_stop{false};

extern "C" void on_signal(int) { g_stop.store(true); }

int cmd_launch(const LaunchOptions& options) {
  struct sigaction sa {};
  sa.sa_handler = on_signal;
  sigemptyset(&sa.sa_mask);
  ::sigaction(SIGTERM, &sa, nullptr);
  ::sigaction(SIGINT, &sa, nullptr);
  return run_launched_agent(options, apps::register_all, &g_stop);
}

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_level(spdlog::level::warn);

  CLI::App cli{"Distributed object runtime: run applications, analyze traces, launch agents"};
  cli.require_subcommand(1);

  // run
  auto* run = cli.add_subcommand("run", "Run an application on a cluster");
  std::string app;
  std::string config_file;
  Settings flags;
  run->add_option("app", app, "fft3d | bfs | mapreduce | broadcast | arrays")->required();
  run->add_option("--config", config_file, "key=value file; flags override it");
  const std::vector<std::pair<std::string, std::string>> run_flags = {
      {"agents", "application agents"},
      {"transport", "inproc | tcp"},
      {"mode", "causal | seq"},
      {"seed", "master seed"},
      {"trace", "write the merged trace (JSON lines) here"},
      {"fuzz", "inject delays of MIN:MAX microseconds"},
      {"fuzz-probability", "chance a dispatch/send is delayed"},
      {"workers", "initial worker threads per agent"},
      {"wait-timeout-ms", "fail guard waits after this long (0: never)"},
      {"pages", "fft3d: pages per dimension"},
      {"page-size", "fft3d: elements per page dimension"},
      {"devices", "fft3d: device hosts"},
      {"cpus", "fft3d: cpu hosts"},
      {"variant", "fft3d: device | reader"},
      {"vertices", "bfs: vertex count"},
      {"degree", "bfs: mean degree"},
      {"parts", "bfs: partitions"},
      {"root", "bfs: root vertex"},
      {"graph", "bfs: edge-list file (one 'u v' per line)"},
      {"n", "mapreduce: worker count"},
      {"arrays", "broadcast: destination arrays"},
      {"length", "broadcast: doubles per array"},
      {"x", "arrays: input value"},
  };
  for (const auto& [name, help] : run_flags) {
    std::string key = name;
    std::replace(key.begin(), key.end(), '-', '_');
    run->add_option("--" + name, flags[key], help);
  }
  bool plan = false;
  bool zero_input = false;
  run->add_flag("--plan", plan, "fft3d: print projected page counts without running");
  run->add_flag("--zero-input", zero_input, "fft3d: transform an all-zero array");

  // analyze
  auto* analyze = cli.add_subcommand("analyze", "Traffic matrix and broadcast groups of a trace");
  std::string trace_in;
  std::string json_out;
  std::size_t min_fanout = 2;
  analyze->add_option("trace", trace_in, "trace file (JSON lines)")->required();
  analyze->add_option("--json", json_out, "also write a JSON summary");
  analyze->add_option("--min-fanout", min_fanout, "smallest reported group")->check(CLI::PositiveNumber);

  // launch
  auto* launch = cli.add_subcommand("launch", "Run one agent that joins a driver over TCP");
  LaunchOptions lo;
  std::uint64_t agent_id = 0;
  std::string mode = "causal";
  std::uint64_t timeout_ms = 0;
  launch->add_option("--agent-id", agent_id, "agent id (>= 2)")->required();
  launch->add_option("--registry", lo.registry, "driver control endpoint host:port")->required();
  launch->add_option("--listen", lo.listen, "endpoint to bind (host:port)");
  launch->add_option("--seed", lo.config.seed, "agent seed");
  launch->add_option("--mode", mode, "causal | seq");
  launch->add_option("--workers", lo.config.initial_workers, "initial worker threads");
  launch->add_option("--pool-ceiling", lo.config.pool_ceiling, "worker thread ceiling");
  launch->add_option("--wait-timeout-ms", timeout_ms, "guard wait timeout (0: never)");
  launch->add_option("--fuzz-min-us", lo.config.fuzz.min_us, "minimum injected delay");
  launch->add_option("--fuzz-max-us", lo.config.fuzz.max_us, "maximum injected delay");
  launch->add_option("--fuzz-probability", lo.config.fuzz.probability, "delay probability");
  launch->add_option("--trace-out", lo.trace_out, "write this agent's trace here on exit");

  try {
    cli.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = cli.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (*run) {
      if (std::find(kApps.begin(), kApps.end(), app) == kApps.end()) {
        std::cerr << "unknown app '" << app << "'\n\n" << run->help();
        return kUsage;
      }
      Settings settings;
      if (!config_file.empty()) settings = read_config_file(config_file);
      for (const auto& [name, help] : run_flags) {
        if (run->count("--" + name) == 0) continue;
        std::string key = name;
        std::replace(key.begin(), key.end(), '-', '_');
        settings[key] = flags[key];
      }
      if (plan) settings["plan"] = "true";
      if (zero_input) settings["zero_input"] = "true";
      return cmd_run(app, settings);
    }
    if (*analyze) return cmd_analyze(trace_in, json_out, min_fanout);
    if (*launch) {
      if (agent_id < 2) throw UsageError("launched agents need an id of at least 2");
      lo.agent = AgentId{agent_id};
      lo.config.mode = parse_exec_mode(mode);
      lo.config.wait_timeout = std::chrono::milliseconds(timeout_ms);
      lo.config.trace = !lo.trace_out.empty();
      return cmd_launch(lo);
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::invalid_argument& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kVerifyFailed;
  }
  return kUsage;
}
