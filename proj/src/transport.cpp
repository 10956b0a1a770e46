#include "pobj/transport.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

namespace pobj {

std::string_view to_string(TransportKind kind) {
  return kind == TransportKind::inproc ? "inproc" : "tcp";
}

TransportKind parse_transport_kind(std::string_view text) {
  if (text == "inproc") return TransportKind::inproc;
  if (text == "tcp") return TransportKind::tcp;
  throw std::invalid_argument("unknown transport '" + std::string(text) + "'");
}

// ---------------------------------------------------------------------------
// Inbox

void Inbox::push(AgentId src, Bytes frame) {
  {
    std::lock_guard lock(mu_);
    if (closed_) throw TransportError("inbox closed");
    queue_.push_back(Delivery{src, std::move(frame)});
  }
  cv_.notify_one();
}

std::optional<Delivery> Inbox::pop() {
  std::unique_lock lock(mu_);
  cv_.wait(lock, [&] { return closed_ || !queue_.empty(); });
  if (queue_.empty()) return std::nullopt;
  Delivery d = std::move(queue_.front());
  queue_.pop_front();
  return d;
}

void Inbox::close() {
  {
    std::lock_guard lock(mu_);
    closed_ = true;
  }
  cv_.notify_all();
}

std::size_t Inbox::size() const {
  std::lock_guard lock(mu_);
  return queue_.size();
}

// ---------------------------------------------------------------------------
// In-process transport

namespace {

class InProcEndpoint : public Endpoint {
 public:
  InProcEndpoint(std::shared_ptr<InProcNetwork> net, AgentId id, std::shared_ptr<Inbox> inbox)
      : net_(std::move(net)), id_(id), inbox_(std::move(inbox)) {}

  AgentId self() const override { return id_; }
  std::string locator() const override { return "inproc:" + std::to_string(id_.value); }

  void send_frame(AgentId dst, Bytes frame) override { net_->deliver(id_, dst, std::move(frame)); }
  std::optional<Delivery> recv_frame() override { return inbox_->pop(); }
  void shutdown() override { inbox_->close(); }

 private:
  std::shared_ptr<InProcNetwork> net_;
  AgentId id_;
  std::shared_ptr<Inbox> inbox_;
};

}  // namespace

std::shared_ptr<Endpoint> InProcNetwork::attach(AgentId id) {
  auto inbox = std::make_shared<Inbox>();
  {
    std::lock_guard lock(mu_);
    if (!inboxes_.emplace(id, inbox).second) {
      throw TransportError("agent " + std::to_string(id.value) + " already attached");
    }
  }
  return std::make_shared<InProcEndpoint>(shared_from_this(), id, std::move(inbox));
}

void InProcNetwork::deliver(AgentId src, AgentId dst, Bytes frame) {
  std::shared_ptr<Inbox> inbox;
  {
    std::lock_guard lock(mu_);
    auto it = inboxes_.find(dst);
    if (it == inboxes_.end()) {
      throw TransportError("unknown destination agent " + std::to_string(dst.value));
    }
    inbox = it->second;
  }
  try {
    inbox->push(src, std::move(frame));
  } catch (const TransportError&) {
    throw TransportError("destination agent " + std::to_string(dst.value) + " stopped");
  }
}

void InProcNetwork::detach(AgentId id) {
  std::lock_guard lock(mu_);
  inboxes_.erase(id);
}

// ---------------------------------------------------------------------------
// Socket helpers

std::pair<std::string, std::uint16_t> split_host_port(const std::string& endpoint) {
  const auto colon = endpoint.rfind(':');
  if (colon == std::string::npos || colon == 0 || colon + 1 == endpoint.size()) {
    throw std::invalid_argument("endpoint '" + endpoint + "' is not host:port");
  }
  std::string host = endpoint.substr(0, colon);
  const unsigned long port = std::stoul(endpoint.substr(colon + 1));
  if (port > 65535) throw std::invalid_argument("port out of range in '" + endpoint + "'");
  if (host == "localhost") host = "127.0.0.1";
  return {host, static_cast<std::uint16_t>(port)};
}

namespace net {

namespace {

sockaddr_in make_addr(const std::string& endpoint) {
  auto [host, port] = split_host_port(endpoint);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  if (inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
    throw std::invalid_argument("cannot parse IPv4 host '" + host + "'");
  }
  return addr;
}

std::string errno_text() { return std::strerror(errno); }

}  // namespace

int listen_on(const std::string& endpoint, std::string* bound_locator) {
  const sockaddr_in addr = make_addr(endpoint);
  const int fd = ::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0);
  if (fd < 0) throw TransportError("socket: " + errno_text());
  const int one = 1;
  ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  if (::bind(fd, reinterpret_cast<const sockaddr*>(&addr), sizeof addr) != 0) {
    const std::string why = errno_text();
    ::close(fd);
    throw TransportError("bind " + endpoint + ": " + why);
  }
  if (::listen(fd, 128) != 0) {
    const std::string why = errno_text();
    ::close(fd);
    throw TransportError("listen " + endpoint + ": " + why);
  }
  if (bound_locator != nullptr) {
    sockaddr_in bound{};
    socklen_t len = sizeof bound;
    ::getsockname(fd, reinterpret_cast<sockaddr*>(&bound), &len);
    char host[INET_ADDRSTRLEN] = {};
    ::inet_ntop(AF_INET, &bound.sin_addr, host, sizeof host);
    *bound_locator = std::string(host) + ":" + std::to_string(ntohs(bound.sin_port));
  }
  return fd;
}

int connect_to(const std::string& endpoint, std::chrono::milliseconds timeout) {
  const sockaddr_in addr = make_addr(endpoint);
  const int fd = ::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC | SOCK_NONBLOCK, 0);
  if (fd < 0) throw TransportError("socket: " + errno_text());
  int rc = ::connect(fd, reinterpret_cast<const sockaddr*>(&addr), sizeof addr);
  if (rc != 0 && errno != EINPROGRESS) {
    const std::string why = errno_text();
    ::close(fd);
    throw TransportError("connect " + endpoint + ": " + why);
  }
  if (rc != 0) {
    pollfd p{fd, POLLOUT, 0};
    rc = ::poll(&p, 1, static_cast<int>(timeout.count()));
    if (rc <= 0) {
      ::close(fd);
      throw TransportError("connect " + endpoint + ": timed out after " +
                           std::to_string(timeout.count()) + " ms");
    }
    int err = 0;
    socklen_t len = sizeof err;
    ::getsockopt(fd, SOL_SOCKET, SO_ERROR, &err, &len);
    if (err != 0) {
      ::close(fd);
      throw TransportError("connect " + endpoint + ": " + std::strerror(err));
    }
  }
  const int flags = ::fcntl(fd, F_GETFL);
  ::fcntl(fd, F_SETFL, flags & ~O_NONBLOCK);
  const int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
  return fd;
}

void write_all(int fd, std::span<const std::uint8_t> data) {
  std::size_t sent = 0;
  while (sent < data.size()) {
    const ssize_t n = ::send(fd, data.data() + sent, data.size() - sent, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw TransportError("send: " + errno_text());
    }
    sent += static_cast<std::size_t>(n);
  }
}

void send_frame(int fd, std::span<const std::uint8_t> payload) {
  write_all(fd, write_frame(payload));
}

std::optional<Bytes> recv_frame(int fd) {
  FdSource source(fd);
  return read_frame(source);
}

void close_fd(int fd) {
  if (fd >= 0) ::close(fd);
}

std::size_t FdSource::read_some(std::span<std::uint8_t> out) {
  for (;;) {
    const ssize_t n = ::recv(fd_, out.data(), out.size(), 0);
    if (n >= 0) return static_cast<std::size_t>(n);
    if (errno == EINTR) continue;
    return 0;
  }
}

}  // namespace net

// ---------------------------------------------------------------------------
// TCP transport

namespace {

Bytes hello_frame(AgentId id) {
  Bytes out(8);
  for (int i = 0; i < 8; ++i) out[i] = static_cast<std::uint8_t>(id.value >> (8 * i));
  return out;
}

}  // namespace

TcpEndpoint::TcpEndpoint(AgentId self, const std::string& listen, TcpOptions options)
    : self_(self), options_(options) {
  listen_fd_ = net::listen_on(listen, &locator_);
  acceptor_ = std::thread([this] { accept_loop(); });
}

TcpEndpoint::~TcpEndpoint() { shutdown(); }

void TcpEndpoint::set_peer(AgentId id, const std::string& endpoint) {
  std::lock_guard lock(mu_);
  peers_[id] = endpoint;
}

void TcpEndpoint::accept_loop() {
  for (;;) {
    const int fd = ::accept4(listen_fd_, nullptr, nullptr, SOCK_CLOEXEC);
    if (fd < 0) {
      if (errno == EINTR || errno == ECONNABORTED) continue;
      return;  // listen socket shut down
    }
    const int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    std::optional<Bytes> hello;
    try {
      hello = net::recv_frame(fd);
    } catch (const TruncatedFrame&) {
    }
    if (!hello || hello->size() != 8) {
      ::close(fd);
      continue;
    }
    AgentId peer;
    for (int i = 0; i < 8; ++i) peer.value |= std::uint64_t{(*hello)[i]} << (8 * i);
    auto conn = std::make_shared<Connection>();
    conn->fd = fd;
    std::lock_guard lock(mu_);
    if (stopped_) {
      ::close(fd);
      return;
    }
    // Adopt for sending only if this side has not yet opened its own.
    send_conns_.try_emplace(peer, conn);
    start_reader_locked(peer, std::move(conn));
  }
}

void TcpEndpoint::start_reader_locked(AgentId peer, std::shared_ptr<Connection> conn) {
  all_conns_.push_back(conn);
  readers_.emplace_back([this, peer, conn] { read_loop(peer, conn); });
}

void TcpEndpoint::read_loop(AgentId peer, std::shared_ptr<Connection> conn) {
  net::FdSource source(conn->fd);
  try {
    while (auto frame = read_frame(source)) {
      inbox_.push(peer, std::move(*frame));
    }
  } catch (const TruncatedFrame&) {
  } catch (const TransportError&) {
    // inbox closed during shutdown
  }
}

std::shared_ptr<TcpEndpoint::Connection> TcpEndpoint::connect_to(AgentId dst) {
  std::string endpoint;
  {
    std::lock_guard lock(mu_);
    auto it = peers_.find(dst);
    if (it == peers_.end()) {
      throw TransportError("unknown destination agent " + std::to_string(dst.value));
    }
    endpoint = it->second;
  }
  auto conn = std::make_shared<Connection>();
  conn->fd = net::connect_to(endpoint, options_.connect_timeout);
  try {
    net::send_frame(conn->fd, hello_frame(self_));
  } catch (...) {
    ::close(conn->fd);
    throw;
  }
  std::lock_guard lock(mu_);
  if (stopped_) {
    ::close(conn->fd);
    throw TransportError("transport stopped");
  }
  send_conns_[dst] = conn;
  start_reader_locked(dst, conn);
  return conn;
}

void TcpEndpoint::send_frame(AgentId dst, Bytes frame) {
  if (dst == self_) {
    inbox_.push(self_, std::move(frame));
    return;
  }
  std::lock_guard send_lock(send_mu_);
  std::shared_ptr<Connection> conn;
  {
    std::lock_guard lock(mu_);
    if (stopped_) throw TransportError("transport stopped");
    auto it = send_conns_.find(dst);
    if (it != send_conns_.end()) conn = it->second;
  }
  if (!conn) conn = connect_to(dst);
  std::lock_guard write_lock(conn->write_mu);
  try {
    net::send_frame(conn->fd, frame);
  } catch (const TransportError& e) {
    throw TransportError("send to agent " + std::to_string(dst.value) + ": " + e.what());
  }
}

std::optional<Delivery> TcpEndpoint::recv_frame() { return inbox_.pop(); }

void TcpEndpoint::shutdown() {
  std::vector<std::thread> readers;
  {
    std::lock_guard lock(mu_);
    if (stopped_) return;
    stopped_ = true;
    for (auto& c : all_conns_) ::shutdown(c->fd, SHUT_RDWR);
    readers.swap(readers_);
  }
  ::shutdown(listen_fd_, SHUT_RDWR);
  if (acceptor_.joinable()) acceptor_.join();
  ::close(listen_fd_);
  for (auto& t : readers) t.join();
  {
    std::lock_guard lock(mu_);
    for (auto& c : all_conns_) ::close(c->fd);
    all_conns_.clear();
    send_conns_.clear();
  }
  inbox_.close();
}

}  // namespace pobj
