#pragma once

// Application bootstrap: builds the agents, wires the transport, installs the
// host registry on agent 0 and runs the driver's main activity on agent 1.
//
// Agents 1..N are application agents; agent 0 only serves create_host. With
// the TCP transport and a launcher binary configured, agents 2..N run as
// `pobj launch` child processes and register with the driver over a small
// JSON control socket; otherwise every agent lives in this process.

#include <atomic>
#include <chrono>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "pobj/agent.hpp"
#include "pobj/kind.hpp"
#include "pobj/trace.hpp"
#include "pobj/transport.hpp"

namespace pobj {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ClusterConfig {
  std::size_t agents = 4;  // application agents, not counting the registry
  TransportKind transport = TransportKind::inproc;
  ExecMode mode = ExecMode::causal_async;
  FuzzConfig fuzz;
  std::uint64_t seed = 1;
  bool trace = true;
  std::size_t initial_workers = 4;
  std::size_t pool_ceiling = 1024;
  std::chrono::milliseconds wait_timeout{0};
  std::uint64_t host_capacity = 0;  // hosts per agent; 0: unbounded
  std::string launcher;             // pobj binary for child agents (tcp only)
  std::string bind_host = "127.0.0.1";
  std::chrono::milliseconds bootstrap_timeout{20000};

  std::size_t total_agents() const { return agents + 1; }
  AgentConfig agent_config() const;

  /// Reads recognised keys (agents, transport, mode, seed, trace, fuzz_min_us,
  /// fuzz_max_us, fuzz_probability, workers, pool_ceiling, wait_timeout_ms,
  /// host_capacity, launcher, bind); others are ignored. Throws ConfigError.
  static ClusterConfig from_map(const std::map<std::string, std::string>& values);
};

using KindSetup = std::function<void(KindRegistry&)>;

class Cluster {
 public:
  /// `setup` registers application kinds; builtin kinds are added here.
  /// Child processes must register the same set (pobj launch does).
  Cluster(ClusterConfig config, KindSetup setup);
  ~Cluster();

  Cluster(const Cluster&) = delete;
  Cluster& operator=(const Cluster&) = delete;

  /// Allowed once, before start(). Throws ConfigError otherwise.
  void set_mode(ExecMode mode);

  void start();
  /// Stops every agent (children first) and collects their traces.
  void shutdown();

  /// Runs `body` as the main activity on agent 1 and drains its scope.
  void run_main(const std::function<void()>& body);

  const ClusterConfig& config() const { return config_; }
  std::vector<AgentAddress> addresses() const { return addresses_; }

  /// Merged trace of all agents, ordered by (agent, seq). Complete after
  /// shutdown(); before it, only in-process agents are included.
  std::vector<TraceEvent> trace() const;
  AgentHealth health() const;

  /// In-process agent, or nullptr if it runs in a child process.
  Agent* local_agent(AgentId id);

 private:
  struct Child;

  void start_inproc();
  void start_tcp();
  void spawn_children();
  void stop_children();
  void make_agent(AgentId id, std::shared_ptr<Endpoint> endpoint);

  ClusterConfig config_;
  std::shared_ptr<KindRegistry> kinds_;
  bool mode_set_ = false;
  bool started_ = false;
  bool stopped_ = false;

  std::shared_ptr<InProcNetwork> network_;
  std::map<AgentId, std::unique_ptr<Agent>> agents_;
  std::vector<AgentAddress> addresses_;

  int control_fd_ = -1;
  std::string control_locator_;
  std::string trace_dir_;
  std::vector<std::unique_ptr<Child>> children_;
  std::vector<TraceEvent> child_trace_;
  AgentHealth child_health_;
};

/// Settings for one agent running in a `pobj launch` child.
struct LaunchOptions {
  AgentId agent;
  std::string registry;  // driver control socket
  std::string listen = "127.0.0.1:0";
  AgentConfig config;
  std::string trace_out;  // JSON lines written on shutdown
  std::chrono::milliseconds bootstrap_timeout{20000};
};

/// Runs a launched agent until the driver says shutdown, the control socket
/// closes, or `*stop` becomes true. Returns a process exit code.
int run_launched_agent(const LaunchOptions& options, const KindSetup& setup,
                       const std::atomic<bool>* stop);

}  // namespace pobj
