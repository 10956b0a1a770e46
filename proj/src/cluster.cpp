#include "pobj/cluster.hpp"

#include <poll.h>
#include <signal.h>
#include <spawn.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <thread>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "pobj/api.hpp"

extern char** environ;

namespace pobj {

namespace {

using json = nlohmann::json;

std::string get_or(const std::map<std::string, std::string>& m, const std::string& key,
                   const std::string& fallback) {
  auto it = m.find(key);
  return it == m.end() ? fallback : it->second;
}

template <class T>
T parse_number(const std::string& key, const std::string& text) {
  try {
    std::size_t used = 0;
    T value;
    if constexpr (std::is_floating_point_v<T>) {
      value = static_cast<T>(std::stod(text, &used));
    } else {
      if (!text.empty() && text[0] == '-') throw std::invalid_argument("negative");
      value = static_cast<T>(std::stoull(text, &used));
    }
    if (used != text.size()) throw std::invalid_argument("trailing");
    return value;
  } catch (const std::exception&) {
    throw ConfigError("invalid value '" + text + "' for " + key);
  }
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "1" || text == "true" || text == "on" || text == "yes") return true;
  if (text == "0" || text == "false" || text == "off" || text == "no") return false;
  throw ConfigError("invalid value '" + text + "' for " + key);
}

void send_json(int fd, const json& j) {
  const std::string s = j.dump();
  net::send_frame(fd, std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
}

/// Waits up to `timeout` for a frame. nullopt on timeout or closed socket.
std::optional<json> recv_json(int fd, std::chrono::milliseconds timeout) {
  pollfd p{fd, POLLIN, 0};
  const int rc = ::poll(&p, 1, static_cast<int>(timeout.count()));
  if (rc <= 0) return std::nullopt;
  try {
    auto frame = net::recv_frame(fd);
    if (!frame) return std::nullopt;
    return json::parse(frame->begin(), frame->end());
  } catch (const std::exception& e) {
    spdlog::error("control socket: {}", e.what());
    return std::nullopt;
  }
}

json health_to_json(const AgentHealth& h) {
  return json{{"protocol_errors", h.protocol_errors},
              {"malformed_frames", h.malformed_frames},
              {"transport_errors", h.transport_errors},
              {"failed_executions", h.failed_executions},
              {"pool_exhausted", h.pool_exhausted},
              {"peak_workers", h.peak_workers}};
}

AgentHealth health_from_json(const json& j) {
  AgentHealth h;
  h.protocol_errors = j.value("protocol_errors", 0ULL);
  h.malformed_frames = j.value("malformed_frames", 0ULL);
  h.transport_errors = j.value("transport_errors", 0ULL);
  h.failed_executions = j.value("failed_executions", 0ULL);
  h.pool_exhausted = j.value("pool_exhausted", false);
  h.peak_workers = j.value("peak_workers", std::size_t{0});
  return h;
}

std::vector<TraceEvent> read_trace_file(const std::string& path) {
  std::vector<TraceEvent> out;
  std::ifstream in(path);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) out.push_back(event_from_json(json::parse(line)));
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration

AgentConfig ClusterConfig::agent_config() const {
  AgentConfig c;
  c.initial_workers = initial_workers;
  c.pool_ceiling = pool_ceiling;
  c.mode = mode;
  c.fuzz = fuzz;
  c.seed = seed;
  c.trace = trace;
  c.wait_timeout = wait_timeout;
  return c;
}

ClusterConfig ClusterConfig::from_map(const std::map<std::string, std::string>& values) {
  ClusterConfig c;
  if (values.count("agents")) c.agents = parse_number<std::size_t>("agents", values.at("agents"));
  if (c.agents == 0) throw ConfigError("agents must be at least 1");
  try {
    c.transport = parse_transport_kind(get_or(values, "transport", "inproc"));
    c.mode = parse_exec_mode(get_or(values, "mode", "causal"));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (values.count("seed")) c.seed = parse_number<std::uint64_t>("seed", values.at("seed"));
  if (values.count("trace")) c.trace = parse_bool("trace", values.at("trace"));
  if (values.count("fuzz_min_us")) {
    c.fuzz.min_us = parse_number<std::uint32_t>("fuzz_min_us", values.at("fuzz_min_us"));
  }
  if (values.count("fuzz_max_us")) {
    c.fuzz.max_us = parse_number<std::uint32_t>("fuzz_max_us", values.at("fuzz_max_us"));
  }
  if (values.count("fuzz_probability")) {
    c.fuzz.probability = parse_number<double>("fuzz_probability", values.at("fuzz_probability"));
  }
  if (c.fuzz.min_us > c.fuzz.max_us) throw ConfigError("fuzz_min_us exceeds fuzz_max_us");
  if (c.fuzz.probability < 0.0 || c.fuzz.probability > 1.0) {
    throw ConfigError("fuzz_probability must be within [0, 1]");
  }
  if (values.count("workers")) {
    c.initial_workers = parse_number<std::size_t>("workers", values.at("workers"));
  }
  if (values.count("pool_ceiling")) {
    c.pool_ceiling = parse_number<std::size_t>("pool_ceiling", values.at("pool_ceiling"));
  }
  if (values.count("wait_timeout_ms")) {
    c.wait_timeout = std::chrono::milliseconds(
        parse_number<std::uint64_t>("wait_timeout_ms", values.at("wait_timeout_ms")));
  }
  if (values.count("host_capacity")) {
    c.host_capacity = parse_number<std::uint64_t>("host_capacity", values.at("host_capacity"));
  }
  c.launcher = get_or(values, "launcher", "");
  c.bind_host = get_or(values, "bind", c.bind_host);
  return c;
}

// ---------------------------------------------------------------------------
// Cluster

struct Cluster::Child {
  AgentId agent;
  pid_t pid = -1;
  int control = -1;
  std::string trace_path;
  bool exited = false;
};

Cluster::Cluster(ClusterConfig config, KindSetup setup)
    : config_(std::move(config)), kinds_(std::make_shared<KindRegistry>()) {
  register_builtin_kinds(*kinds_);
  if (setup) setup(*kinds_);
}

Cluster::~Cluster() {
  try {
    shutdown();
  } catch (const std::exception& e) {
    spdlog::error("cluster shutdown: {}", e.what());
  }
}

void Cluster::set_mode(ExecMode mode) {
  if (started_) throw ConfigError("execution mode cannot change after the cluster started");
  if (mode_set_) throw ConfigError("execution mode already set");
  mode_set_ = true;
  config_.mode = mode;
}

void Cluster::make_agent(AgentId id, std::shared_ptr<Endpoint> endpoint) {
  agents_.emplace(id, std::make_unique<Agent>(id, std::move(endpoint), kinds_,
                                              config_.agent_config()));
}

void Cluster::start() {
  if (started_) throw ConfigError("cluster already started");
  if (config_.agents == 0) throw ConfigError("agents must be at least 1");
  started_ = true;
  if (config_.transport == TransportKind::inproc) {
    start_inproc();
  } else {
    start_tcp();
  }

  std::vector<AgentAddress> application(addresses_.begin() + 1, addresses_.end());
  Agent& registry = *agents_.at(kRegistryAgent);
  const RemoteRef ref = registry.install(kHostRegistryKind,
                                         make_host_registry(application, config_.host_capacity));
  if (ref.object != 1) throw std::logic_error("host registry must be object 1 on agent 0");
  for (auto& [_, agent] : agents_) agent->start();
  spdlog::debug("cluster up: {} agents over {}", config_.total_agents(),
                to_string(config_.transport));
}

void Cluster::start_inproc() {
  network_ = std::make_shared<InProcNetwork>();
  for (std::uint64_t i = 0; i < config_.total_agents(); ++i) {
    const AgentId id{i};
    auto endpoint = network_->attach(id);
    addresses_.push_back(AgentAddress{id, endpoint->locator()});
    make_agent(id, std::move(endpoint));
  }
}

void Cluster::start_tcp() {
  const bool spawn = !config_.launcher.empty();
  const std::uint64_t local = spawn ? std::min<std::uint64_t>(2, config_.total_agents())
                                    : config_.total_agents();
  std::vector<std::shared_ptr<TcpEndpoint>> endpoints;
  for (std::uint64_t i = 0; i < local; ++i) {
    auto endpoint = std::make_shared<TcpEndpoint>(AgentId{i}, config_.bind_host + ":0");
    addresses_.push_back(AgentAddress{AgentId{i}, endpoint->locator()});
    endpoints.push_back(endpoint);
  }
  if (spawn) spawn_children();
  for (auto& endpoint : endpoints) {
    for (const auto& address : addresses_) endpoint->set_peer(address.agent, address.endpoint);
    make_agent(endpoint->self(), endpoint);
  }
}

void Cluster::spawn_children() {
  control_fd_ = net::listen_on(config_.bind_host + ":0", &control_locator_);
  static std::atomic<int> counter{0};
  trace_dir_ = (std::filesystem::temp_directory_path() /
                ("pobj-" + std::to_string(::getpid()) + "-" + std::to_string(counter++)))
                   .string();
  std::filesystem::create_directories(trace_dir_);

  const AgentConfig ac = config_.agent_config();
  for (std::uint64_t i = 2; i < config_.total_agents(); ++i) {
    auto child = std::make_unique<Child>();
    child->agent = AgentId{i};
    child->trace_path = trace_dir_ + "/agent-" + std::to_string(i) + ".jsonl";
    std::vector<std::string> args = {
        config_.launcher,
        "launch",
        "--agent-id", std::to_string(i),
        "--registry", control_locator_,
        "--listen", config_.bind_host + ":0",
        "--seed", std::to_string(ac.seed),
        "--mode", std::string(to_string(ac.mode)),
        "--workers", std::to_string(ac.initial_workers),
        "--pool-ceiling", std::to_string(ac.pool_ceiling),
        "--wait-timeout-ms", std::to_string(ac.wait_timeout.count()),
        "--fuzz-min-us", std::to_string(ac.fuzz.min_us),
        "--fuzz-max-us", std::to_string(ac.fuzz.max_us),
        "--fuzz-probability", std::to_string(ac.fuzz.probability),
        "--trace-out", ac.trace ? child->trace_path : std::string(),
    };
    std::vector<char*> argv;
    for (auto& a : args) argv.push_back(a.data());
    argv.push_back(nullptr);
    const int rc = ::posix_spawn(&child->pid, config_.launcher.c_str(), nullptr, nullptr,
                                 argv.data(), environ);
    if (rc != 0) {
      throw std::runtime_error("cannot launch '" + config_.launcher + "': " + std::strerror(rc));
    }
    children_.push_back(std::move(child));
  }

  // Collect registrations.
  std::map<std::uint64_t, Child*> by_id;
  for (auto& c : children_) by_id.emplace(c->agent.value, c.get());
  std::size_t registered = 0;
  const auto deadline = std::chrono::steady_clock::now() + config_.bootstrap_timeout;
  while (registered < children_.size()) {
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
        deadline - std::chrono::steady_clock::now());
    if (left.count() <= 0) throw TransportError("timed out waiting for child agents to register");
    pollfd p{control_fd_, POLLIN, 0};
    if (::poll(&p, 1, static_cast<int>(std::min<long long>(left.count(), 200))) <= 0) {
      for (auto& c : children_) {
        int status = 0;
        if (!c->exited && ::waitpid(c->pid, &status, WNOHANG) == c->pid) {
          c->exited = true;
          throw TransportError("child agent " + std::to_string(c->agent.value) +
                               " exited during bootstrap");
        }
      }
      continue;
    }
    const int fd = ::accept(control_fd_, nullptr, nullptr);
    if (fd < 0) continue;
    auto hello = recv_json(fd, left);
    if (!hello || hello->value("op", "") != "register") {
      net::close_fd(fd);
      continue;
    }
    const auto id = hello->at("agent").get<std::uint64_t>();
    auto it = by_id.find(id);
    if (it == by_id.end() || it->second->control >= 0) {
      net::close_fd(fd);
      throw TransportError("unexpected registration from agent " + std::to_string(id));
    }
    it->second->control = fd;
    addresses_.push_back(AgentAddress{AgentId{id}, hello->at("endpoint").get<std::string>()});
    ++registered;
  }
  std::sort(addresses_.begin(), addresses_.end(),
            [](const AgentAddress& a, const AgentAddress& b) { return a.agent < b.agent; });

  json table = json::array();
  for (const auto& a : addresses_) table.push_back({{"agent", a.agent.value}, {"endpoint", a.endpoint}});
  for (auto& c : children_) send_json(c->control, json{{"op", "table"}, {"addresses", table}});
}

void Cluster::stop_children() {
  for (auto& c : children_) {
    if (c->control < 0) continue;
    try {
      send_json(c->control, json{{"op", "shutdown"}});
    } catch (const std::exception& e) {
      spdlog::error("shutdown of agent {}: {}", c->agent.value, e.what());
    }
  }
  for (auto& c : children_) {
    if (c->control >= 0) {
      if (auto bye = recv_json(c->control, config_.bootstrap_timeout);
          bye && bye->value("op", "") == "bye") {
        child_health_ += health_from_json(bye->at("health"));
      } else {
        spdlog::error("agent {} did not acknowledge shutdown", c->agent.value);
        child_health_.transport_errors += 1;
      }
      net::close_fd(c->control);
      c->control = -1;
    }
    if (!c->exited) {
      int status = 0;
      const auto deadline = std::chrono::steady_clock::now() + std::chrono::seconds(10);
      while (::waitpid(c->pid, &status, WNOHANG) == 0) {
        if (std::chrono::steady_clock::now() > deadline) {
          ::kill(c->pid, SIGKILL);
          ::waitpid(c->pid, &status, 0);
          break;
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(5));
      }
      c->exited = true;
      if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) {
        spdlog::error("agent {} exited abnormally", c->agent.value);
        child_health_.transport_errors += 1;
      }
    }
    if (config_.trace && std::filesystem::exists(c->trace_path)) {
      auto events = read_trace_file(c->trace_path);
      child_trace_.insert(child_trace_.end(), events.begin(), events.end());
    }
  }
  if (!trace_dir_.empty()) {
    std::error_code ec;
    std::filesystem::remove_all(trace_dir_, ec);
  }
  net::close_fd(control_fd_);
  control_fd_ = -1;
}

void Cluster::shutdown() {
  if (!started_ || stopped_) return;
  stopped_ = true;
  stop_children();
  for (auto it = agents_.rbegin(); it != agents_.rend(); ++it) it->second->stop();
}

void Cluster::run_main(const std::function<void()>& body) {
  if (!started_ || stopped_) throw ConfigError("cluster is not running");
  Agent& agent = *agents_.at(AgentId{1});
  Scope root;
  Activity activity{&agent, &root, false, {}};
  ActivityBinding bind(activity);
  try {
    body();
  } catch (...) {
    try {
      root.drain(agent);
    } catch (...) {
    }
    throw;
  }
  root.drain(agent, "main");
}

std::vector<TraceEvent> Cluster::trace() const {
  std::vector<TraceEvent> out = child_trace_;
  for (const auto& [_, agent] : agents_) {
    auto events = agent->trace().snapshot();
    out.insert(out.end(), events.begin(), events.end());
  }
  std::stable_sort(out.begin(), out.end(), [](const TraceEvent& a, const TraceEvent& b) {
    return a.agent != b.agent ? a.agent < b.agent : a.seq < b.seq;
  });
  return out;
}

AgentHealth Cluster::health() const {
  AgentHealth h = child_health_;
  for (const auto& [_, agent] : agents_) h += agent->health();
  return h;
}

Agent* Cluster::local_agent(AgentId id) {
  auto it = agents_.find(id);
  return it == agents_.end() ? nullptr : it->second.get();
}

// ---------------------------------------------------------------------------
// Launched child

int run_launched_agent(const LaunchOptions& options, const KindSetup& setup,
                       const std::atomic<bool>* stop) {
  auto kinds = std::make_shared<KindRegistry>();
  register_builtin_kinds(*kinds);
  if (setup) setup(*kinds);

  std::shared_ptr<TcpEndpoint> endpoint;
  try {
    endpoint = std::make_shared<TcpEndpoint>(options.agent, options.listen);
  } catch (const TransportError& e) {
    spdlog::error("agent {}: {}", options.agent.value, e.what());
    return 1;
  }

  int control = -1;
  try {
    control = net::connect_to(options.registry, options.bootstrap_timeout);
    send_json(control, json{{"op", "register"},
                            {"agent", options.agent.value},
                            {"endpoint", endpoint->locator()}});
  } catch (const std::exception& e) {
    spdlog::error("agent {}: cannot reach driver at {}: {}", options.agent.value,
                  options.registry, e.what());
    net::close_fd(control);
    return 1;
  }

  // Wait for the table in short slices so a stop request is honoured.
  std::optional<json> table;
  const auto deadline = std::chrono::steady_clock::now() + options.bootstrap_timeout;
  while (!table && std::chrono::steady_clock::now() < deadline) {
    if (stop != nullptr && stop->load()) {
      net::close_fd(control);
      return 0;
    }
    pollfd p{control, POLLIN, 0};
    if (::poll(&p, 1, 100) > 0) {
      table = recv_json(control, std::chrono::milliseconds(0));
      if (!table) break;
    }
  }
  if (!table || table->value("op", "") != "table") {
    spdlog::error("agent {}: no address table from driver", options.agent.value);
    net::close_fd(control);
    return 1;
  }
  for (const auto& entry : table->at("addresses")) {
    endpoint->set_peer(AgentId{entry.at("agent").get<std::uint64_t>()},
                       entry.at("endpoint").get<std::string>());
  }

  Agent agent(options.agent, endpoint, kinds, options.config);
  agent.start();

  bool control_alive = true;
  for (;;) {
    if (stop != nullptr && stop->load()) break;
    pollfd p{control, POLLIN, 0};
    const int rc = ::poll(&p, 1, 100);
    if (rc == 0) continue;
    if (rc < 0) {
      if (errno == EINTR) continue;
      control_alive = false;
      break;
    }
    auto msg = recv_json(control, std::chrono::milliseconds(0));
    if (!msg) {
      control_alive = false;
      break;
    }
    if (msg->value("op", "") == "shutdown") break;
  }

  agent.stop();
  if (!options.trace_out.empty()) {
    std::ofstream out(options.trace_out);
    write_jsonl(out, agent.trace().snapshot());
  }
  if (control_alive) {
    try {
      send_json(control, json{{"op", "bye"}, {"health", health_to_json(agent.health())}});
    } catch (const std::exception&) {
    }
  }
  net::close_fd(control);
  return 0;
}

}  // namespace pobj
