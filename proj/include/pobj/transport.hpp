#pragma once

// Frame transport between agents. Two implementations share one contract:
// reliable, exactly-once delivery with FIFO order per ordered (src, dst) pair.
// The guard protocol (WriteResult before ReleaseGuard) depends on that order,
// so any additional transport must provide it too.

#include <chrono>
#include <condition_variable>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "pobj/wire.hpp"

namespace pobj {

enum class TransportKind { inproc, tcp };

std::string_view to_string(TransportKind kind);
TransportKind parse_transport_kind(std::string_view text);

struct AgentAddress {
  AgentId agent;
  std::string endpoint;  // "inproc:<id>" or "host:port"

  friend bool operator==(const AgentAddress&, const AgentAddress&) = default;

  template <class Archive>
  void serialize(Archive& ar) {
    ar(agent.value, endpoint);
  }
};

class TransportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Delivery {
  AgentId src;
  Bytes frame;
};

/// Multi-producer, single-consumer queue of received frames.
class Inbox {
 public:
  void push(AgentId src, Bytes frame);
  /// Blocks for the next frame; nullopt once closed and drained.
  std::optional<Delivery> pop();
  void close();
  std::size_t size() const;

 private:
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::deque<Delivery> queue_;
  bool closed_ = false;
};

/// One agent's attachment to the transport.
class Endpoint {
 public:
  virtual ~Endpoint() = default;

  virtual AgentId self() const = 0;
  virtual std::string locator() const = 0;

  /// Enqueues a frame for dst. Throws TransportError for an unknown or
  /// unreachable destination.
  virtual void send_frame(AgentId dst, Bytes frame) = 0;

  /// Blocks until a frame arrives; nullopt signals orderly shutdown.
  virtual std::optional<Delivery> recv_frame() = 0;

  virtual void shutdown() = 0;
};

/// Mailboxes inside one process.
class InProcNetwork : public std::enable_shared_from_this<InProcNetwork> {
 public:
  std::shared_ptr<Endpoint> attach(AgentId id);
  void deliver(AgentId src, AgentId dst, Bytes frame);
  void detach(AgentId id);

 private:
  std::mutex mu_;
  std::map<AgentId, std::shared_ptr<Inbox>> inboxes_;
};

struct TcpOptions {
  std::chrono::milliseconds connect_timeout{5000};
};

/// Length-framed byte streams over TCP. One connection per agent pair is
/// established lazily by whichever side sends first and then used in both
/// directions. A side never switches its sending connection once used,
/// which keeps per-pair FIFO.
class TcpEndpoint : public Endpoint {
 public:
  /// Binds and starts accepting. `listen` is "host:port"; port 0 picks an
  /// ephemeral port. Throws TransportError on bind failure.
  TcpEndpoint(AgentId self, const std::string& listen, TcpOptions options = {});
  ~TcpEndpoint() override;

  TcpEndpoint(const TcpEndpoint&) = delete;
  TcpEndpoint& operator=(const TcpEndpoint&) = delete;

  AgentId self() const override { return self_; }
  std::string locator() const override { return locator_; }

  void set_peer(AgentId id, const std::string& endpoint);
  void send_frame(AgentId dst, Bytes frame) override;
  std::optional<Delivery> recv_frame() override;
  void shutdown() override;

 private:
  struct Connection {
    int fd = -1;
    std::mutex write_mu;
  };

  std::shared_ptr<Connection> connect_to(AgentId dst);
  void start_reader_locked(AgentId peer, std::shared_ptr<Connection> conn);
  void accept_loop();
  void read_loop(AgentId peer, std::shared_ptr<Connection> conn);

  AgentId self_;
  TcpOptions options_;
  int listen_fd_ = -1;
  std::string locator_;
  Inbox inbox_;

  std::mutex mu_;
  std::map<AgentId, std::string> peers_;
  std::map<AgentId, std::shared_ptr<Connection>> send_conns_;
  std::vector<std::shared_ptr<Connection>> all_conns_;
  std::vector<std::thread> readers_;
  std::mutex send_mu_;
  std::thread acceptor_;
  bool stopped_ = false;
};

/// Splits "host:port"; throws std::invalid_argument.
std::pair<std::string, std::uint16_t> split_host_port(const std::string& endpoint);

/// Blocking helpers shared by the TCP transport and the cluster bootstrap.
namespace net {

int listen_on(const std::string& endpoint, std::string* bound_locator);
int connect_to(const std::string& endpoint, std::chrono::milliseconds timeout);
void write_all(int fd, std::span<const std::uint8_t> data);
void send_frame(int fd, std::span<const std::uint8_t> payload);
std::optional<Bytes> recv_frame(int fd);
void close_fd(int fd);

class FdSource : public ByteSource {
 public:
  explicit FdSource(int fd) : fd_(fd) {}
  std::size_t read_some(std::span<std::uint8_t> out) override;

 private:
  int fd_;
};

}  // namespace net

}  // namespace pobj
