#include <doctest.h>

#include <map>
#include <thread>

#include "pobj/transport.hpp"

using namespace pobj;

namespace {

Bytes numbered(std::uint64_t sender, std::uint64_t n) {
  Bytes b(16 + n % 64);
  for (int i = 0; i < 8; ++i) {
    b[i] = static_cast<std::uint8_t>(sender >> (8 * i));
    b[8 + i] = static_cast<std::uint8_t>(n >> (8 * i));
  }
  for (std::size_t i = 16; i < b.size(); ++i) b[i] = static_cast<std::uint8_t>(n + i);
  return b;
}

std::uint64_t field(const Bytes& b, int at) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t{b[at + i]} << (8 * i);
  return v;
}

// Receives `expected` frames and checks per-sender order and integrity.
void expect_fifo(Endpoint& ep, std::map<std::uint64_t, std::uint64_t> expected) {
  std::map<std::uint64_t, std::uint64_t> next;
  std::size_t total = 0;
  for (auto& [s, n] : expected) total += n;
  for (std::size_t i = 0; i < total; ++i) {
    auto d = ep.recv_frame();
    REQUIRE(d.has_value());
    const auto sender = field(d->frame, 0);
    const auto n = field(d->frame, 8);
    REQUIRE(d->src.value == sender);
    REQUIRE(n == next[sender]);
    REQUIRE(d->frame == numbered(sender, n));
    ++next[sender];
  }
  CHECK(next == expected);
}

}  // namespace

TEST_CASE("transport kind names") {
  CHECK(parse_transport_kind("inproc") == TransportKind::inproc);
  CHECK(parse_transport_kind("tcp") == TransportKind::tcp);
  CHECK(to_string(TransportKind::tcp) == "tcp");
  CHECK_THROWS(parse_transport_kind("udp"));
}

TEST_CASE("split_host_port") {
  CHECK(split_host_port("127.0.0.1:80") == std::pair<std::string, std::uint16_t>{"127.0.0.1", 80});
  CHECK_THROWS_AS(split_host_port("nohost"), std::invalid_argument);
  CHECK_THROWS_AS(split_host_port("h:99999"), std::invalid_argument);
}

TEST_CASE("inproc: per-pair FIFO with concurrent senders") {
  auto net = std::make_shared<InProcNetwork>();
  auto dst = net->attach(AgentId{0});
  std::vector<std::shared_ptr<Endpoint>> senders;
  for (std::uint64_t s = 1; s <= 4; ++s) senders.push_back(net->attach(AgentId{s}));

  constexpr std::uint64_t kFrames = 2500;
  std::vector<std::thread> threads;
  for (auto& ep : senders) {
    threads.emplace_back([ep] {
      for (std::uint64_t n = 0; n < kFrames; ++n) {
        ep->send_frame(AgentId{0}, numbered(ep->self().value, n));
      }
    });
  }
  expect_fifo(*dst, {{1, kFrames}, {2, kFrames}, {3, kFrames}, {4, kFrames}});
  for (auto& t : threads) t.join();

  CHECK_THROWS_AS(senders[0]->send_frame(AgentId{99}, Bytes{1}), TransportError);
  dst->shutdown();
  CHECK_FALSE(dst->recv_frame().has_value());
}

TEST_CASE("tcp: per-pair FIFO in both directions, 10000-frame soak") {
  TcpEndpoint a(AgentId{1}, "127.0.0.1:0");
  TcpEndpoint b(AgentId{2}, "127.0.0.1:0");
  TcpEndpoint c(AgentId{3}, "127.0.0.1:0");
  for (TcpEndpoint* ep : {&a, &b, &c}) {
    ep->set_peer(AgentId{1}, a.locator());
    ep->set_peer(AgentId{2}, b.locator());
    ep->set_peer(AgentId{3}, c.locator());
  }

  constexpr std::uint64_t kFrames = 5000;
  std::thread tb([&] {
    for (std::uint64_t n = 0; n < kFrames; ++n) b.send_frame(AgentId{1}, numbered(2, n));
  });
  std::thread tc([&] {
    for (std::uint64_t n = 0; n < kFrames; ++n) c.send_frame(AgentId{1}, numbered(3, n));
  });
  // a also sends to b over the connection b opened (or its own), while b sends.
  std::thread ta([&] {
    for (std::uint64_t n = 0; n < 100; ++n) a.send_frame(AgentId{2}, numbered(1, n));
  });
  expect_fifo(a, {{2, kFrames}, {3, kFrames}});
  expect_fifo(b, {{1, 100}});
  tb.join();
  tc.join();
  ta.join();
}

TEST_CASE("tcp: send to self and large frames") {
  TcpEndpoint a(AgentId{1}, "127.0.0.1:0");
  a.set_peer(AgentId{1}, a.locator());
  Bytes big(3 << 20);
  for (std::size_t i = 0; i < big.size(); ++i) big[i] = static_cast<std::uint8_t>(i * 31);
  a.send_frame(AgentId{1}, big);
  auto d = a.recv_frame();
  REQUIRE(d.has_value());
  CHECK(d->src.value == 1);
  CHECK(d->frame == big);
}

TEST_CASE("tcp: errors") {
  TcpEndpoint a(AgentId{1}, "127.0.0.1:0");
  SUBCASE("binding an endpoint in use fails") {
    CHECK_THROWS_AS(TcpEndpoint(AgentId{2}, a.locator()), TransportError);
  }
  SUBCASE("unknown peer") {
    CHECK_THROWS_AS(a.send_frame(AgentId{7}, Bytes{1}), TransportError);
  }
  SUBCASE("unreachable peer") {
    std::string dead;
    {
      TcpEndpoint gone(AgentId{9}, "127.0.0.1:0");
      dead = gone.locator();
    }
    TcpEndpoint quick(AgentId{4}, "127.0.0.1:0", TcpOptions{std::chrono::milliseconds(300)});
    quick.set_peer(AgentId{9}, dead);
    CHECK_THROWS_AS(quick.send_frame(AgentId{9}, Bytes{1}), TransportError);
  }
  SUBCASE("shutdown ends recv") {
    a.shutdown();
    CHECK_FALSE(a.recv_frame().has_value());
  }
}
