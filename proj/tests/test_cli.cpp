#include <doctest.h>

#include <arpa/inet.h>
#include <fcntl.h>
#include <netinet/in.h>
#include <spawn.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

extern char** environ;

namespace fs = std::filesystem;

namespace {

struct Output {
  int code = -1;
  std::string out;
  std::string err;
};

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("pobj_cli_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  return dir / name;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

pid_t spawn(const std::vector<std::string>& args, const fs::path& out, const fs::path& err) {
  std::vector<char*> argv;
  std::string bin = POBJ_BINARY;
  argv.push_back(bin.data());
  std::vector<std::string> copy = args;
  for (auto& a : copy) argv.push_back(a.data());
  argv.push_back(nullptr);
  posix_spawn_file_actions_t fa;
  posix_spawn_file_actions_init(&fa);
  posix_spawn_file_actions_addopen(&fa, 1, out.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
  posix_spawn_file_actions_addopen(&fa, 2, err.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
  pid_t pid = -1;
  const int rc = posix_spawn(&pid, argv[0], &fa, nullptr, argv.data(), environ);
  posix_spawn_file_actions_destroy(&fa);
  REQUIRE(rc == 0);
  return pid;
}

int wait_exit(pid_t pid) {
  int status = 0;
  ::waitpid(pid, &status, 0);
  return WIFEXITED(status) ? WEXITSTATUS(status) : 128 + WTERMSIG(status);
}

Output pobj(const std::vector<std::string>& args) {
  const auto out = scratch("stdout"), err = scratch("stderr");
  Output o;
  o.code = wait_exit(spawn(args, out, err));
  o.out = slurp(out);
  o.err = slurp(err);
  return o;
}

// Listening TCP socket on an ephemeral loopback port.
struct Listener {
  int fd = -1;
  int port = 0;
  Listener() {
    fd = ::socket(AF_INET, SOCK_STREAM, 0);
    sockaddr_in a{};
    a.sin_family = AF_INET;
    a.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    REQUIRE(::bind(fd, reinterpret_cast<sockaddr*>(&a), sizeof a) == 0);
    REQUIRE(::listen(fd, 4) == 0);
    socklen_t len = sizeof a;
    ::getsockname(fd, reinterpret_cast<sockaddr*>(&a), &len);
    port = ntohs(a.sin_port);
  }
  ~Listener() { ::close(fd); }
  std::string address() const { return "127.0.0.1:" + std::to_string(port); }
};

std::string field(const std::string& text, const std::string& pattern) {
  std::smatch m;
  if (!std::regex_search(text, m, std::regex(pattern))) return {};
  return m[1];
}

}  // namespace

TEST_CASE("run: applications report success") {
  for (const std::vector<std::string>& args : std::vector<std::vector<std::string>>{
           {"run", "mapreduce", "--agents", "4", "--n", "64"},
           {"run", "bfs", "--agents", "4", "--vertices", "256", "--degree", "6"},
           {"run", "fft3d", "--agents", "4", "--pages", "2", "--page-size", "4"},
           {"run", "broadcast", "--agents", "4", "--arrays", "8", "--length", "32"},
           {"run", "arrays"},
           {"run", "mapreduce", "--agents", "3", "--n", "20", "--mode", "seq"}}) {
    const auto o = pobj(args);
    INFO(args[1], "\n", o.out, o.err);
    CHECK(o.code == 0);
    CHECK(o.out.find("result: ok") != std::string::npos);
  }
}

TEST_CASE("run: usage errors exit 2") {
  CHECK(pobj({"run", "nosuchapp"}).code == 2);
  CHECK(pobj({"run", "mapreduce", "--agents", "0"}).code == 2);
  CHECK(pobj({"run", "mapreduce", "--mode", "sideways"}).code == 2);
  CHECK(pobj({"run", "fft3d", "--agents", "4", "--pages", "4", "--cpus", "3"}).code == 2);
  CHECK(pobj({"run", "bfs", "--graph", scratch("missing.txt").string()}).code == 2);
  CHECK(pobj({"run", "mapreduce", "--config", scratch("missing.cfg").string()}).code == 2);
  CHECK(pobj({"frobnicate"}).code != 0);

  const auto big = pobj({"run", "fft3d", "--pages", "2048"});
  CHECK(big.code == 2);
  const auto plan = pobj({"run", "fft3d", "--pages", "2048", "--plan"});
  CHECK(plan.code == 0);
  CHECK(plan.out.find("not executed") != std::string::npos);
}

TEST_CASE("run: a trace that cannot be written is a failure") {
  const auto o = pobj({"run", "arrays", "--trace", "/nonexistent-dir/trace.jsonl"});
  CHECK(o.code == 1);
  CHECK(o.out.find("cannot write trace") != std::string::npos);
}

TEST_CASE("run: flags override the config file") {
  const auto cfg = scratch("run.cfg");
  std::ofstream(cfg) << "# mapreduce settings\nagents = 3\nn = 12\nseed = 5\n";
  const auto a = pobj({"run", "mapreduce", "--config", cfg.string()});
  CHECK(a.code == 0);
  CHECK(field(a.out, R"(agents: (\d+))") == "3");
  CHECK(field(a.out, R"(workers: (\d+))") == "12");
  CHECK(field(a.out, R"(seed: (\d+))") == "5");
  const auto b = pobj({"run", "mapreduce", "--config", cfg.string(), "--n", "7"});
  CHECK(field(b.out, R"(workers: (\d+))") == "7");
  std::ofstream(cfg) << "agents\n";
  CHECK(pobj({"run", "mapreduce", "--config", cfg.string()}).code == 2);
}

TEST_CASE("run: the same seed gives the same result") {
  const auto a = pobj({"run", "mapreduce", "--n", "300", "--seed", "9", "--fuzz", "0:50"});
  const auto b = pobj({"run", "mapreduce", "--n", "300", "--seed", "9", "--fuzz", "0:50"});
  const auto c = pobj({"run", "mapreduce", "--n", "300", "--seed", "10"});
  const std::string ta = field(a.out, R"(total: (\S+))");
  CHECK_FALSE(ta.empty());
  CHECK(ta == field(b.out, R"(total: (\S+))"));
  CHECK(ta != field(c.out, R"(total: (\S+))"));
}

TEST_CASE("analyze: traces, JSON summary, bad input") {
  const auto trace = scratch("bcast.jsonl");
  const auto run = pobj({"run", "broadcast", "--agents", "4", "--arrays", "8", "--length", "64",
                         "--trace", trace.string()});
  REQUIRE(run.code == 0);
  const auto json_path = scratch("summary.json");
  const auto o = pobj({"analyze", trace.string(), "--json", json_path.string()});
  REQUIRE(o.code == 0);
  const auto j = nlohmann::json::parse(slurp(json_path));
  CHECK(std::to_string(j["totals"]["messages"].get<std::uint64_t>()) ==
        field(o.out, R"(total\s+(\d+))"));
  CHECK(std::to_string(j["broadcast_groups"].size()) == field(o.out, R"(broadcast groups: (\d+))"));
  REQUIRE(j["broadcast_groups"].size() >= 1);
  const auto& g = j["broadcast_groups"][0];
  CHECK(g["payload_bytes"] == 64 * 8);
  CHECK(g["count"] == 8);
  CHECK(g["fanout"] == g["destinations"].size());
  CHECK(g["bytes_saved"] == g["payload_bytes"].get<std::uint64_t>() * (g["fanout"].get<std::uint64_t>() - 1));

  const auto empty = scratch("empty.jsonl");
  std::ofstream(empty).close();
  CHECK(pobj({"analyze", empty.string()}).code == 1);
  std::ofstream(empty) << "{not json\n";
  const auto bad = pobj({"analyze", empty.string()});
  CHECK(bad.code == 1);
  CHECK_FALSE(bad.err.empty());
  CHECK(pobj({"analyze", scratch("absent.jsonl").string()}).code == 1);
}

TEST_CASE("launch: stop while waiting for the address table") {
  Listener registry;
  const pid_t pid = spawn({"launch", "--agent-id", "2", "--registry", registry.address(),
                           "--listen", "127.0.0.1:0"},
                          scratch("launch.out"), scratch("launch.err"));
  const int conn = ::accept(registry.fd, nullptr, nullptr);  // the register message
  CHECK(conn >= 0);
  std::this_thread::sleep_for(std::chrono::milliseconds(200));
  ::kill(pid, SIGTERM);
  CHECK(wait_exit(pid) == 0);
  ::close(conn);
}

TEST_CASE("launch: failures exit nonzero") {
  Listener taken;
  Listener registry;
  CHECK(pobj({"launch", "--agent-id", "2", "--registry", registry.address(), "--listen",
              taken.address()})
            .code == 1);
  CHECK(pobj({"launch", "--agent-id", "1", "--registry", registry.address()}).code == 2);
  CHECK(pobj({"launch", "--registry", registry.address()}).code != 0);
}

TEST_CASE("run: tcp transport with launched agents") {
  const auto o = pobj({"run", "mapreduce", "--agents", "4", "--transport", "tcp", "--n", "40"});
  INFO(o.out, o.err);
  CHECK(o.code == 0);
  CHECK(field(o.out, R"(transport: (\w+))") == "tcp");
}
