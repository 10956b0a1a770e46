#include <doctest.h>

#include <random>
#include <string>

#include "wire_vectors.hpp"

using namespace pobj;
using namespace vectors;

namespace {

void check_golden(const Golden& v) {
  const Bytes got = encode(v.envelope);
  CHECK(got.size() == v.bytes.size());
  CHECK(got == v.bytes);
  CHECK(decode(v.bytes) == v.envelope);
}

}  // namespace

TEST_CASE("golden: ReleaseGuard") {
  CHECK(golden("ReleaseGuard").bytes.size() == 35);
  check_golden(golden("ReleaseGuard"));
}

TEST_CASE("golden: WriteResult with empty payload") {
  const auto& v = golden("WriteResult");
  check_golden(v);
  // body ends with a zero blob length
  CHECK(Bytes(v.bytes.end() - 4, v.bytes.end()) == Bytes{0, 0, 0, 0});
}

TEST_CASE("golden: Invoke with two by-value params") {
  const auto& v = golden("Invoke");
  check_golden(v);
  const Bytes params = hex("0200 00 04000000 01020304 00 04000000 05060708");
  CHECK(Bytes(v.bytes.end() - static_cast<long>(params.size()), v.bytes.end()) == params);
}

TEST_CASE("golden: Construct, Destroy, CopyBlock, ReadBlock") {
  for (const char* name : {"Construct", "Destroy", "CopyBlock", "ReadBlock"}) {
    INFO(name);
    check_golden(golden(name));
  }
}

TEST_CASE("decode rejects malformed input with offsets") {
  const Bytes good = encode(env(3, 2, ReleaseGuard{g(2, 7)}));

  SUBCASE("unknown tag") {
    Bytes bad = good;
    bad[18] = 0xFF;
    try {
      decode(bad);
      FAIL("accepted tag 0xFF");
    } catch (const MalformedFrame& e) {
      CHECK(e.offset() == 18);
    }
  }
  SUBCASE("unsupported version") {
    Bytes bad = good;
    bad[0] = 2;
    CHECK_THROWS_AS(decode(bad), MalformedFrame);
  }
  SUBCASE("truncated body") {
    for (std::size_t n = 0; n < good.size(); ++n) {
      CHECK_THROWS_AS(decode(std::span(good.data(), n)), MalformedFrame);
    }
  }
  SUBCASE("trailing bytes") {
    Bytes bad = good;
    bad.push_back(0);
    try {
      decode(bad);
      FAIL("accepted trailing byte");
    } catch (const MalformedFrame& e) {
      CHECK(e.offset() == good.size());
    }
  }
  SUBCASE("bad param mode") {
    Invoke i{r(3, 5), 7, s(1, 11), g(1, 12), {Param{ParamMode::by_value, {}, {1}}}};
    Bytes bad = encode(env(1, 3, i));
    bad[19 + 8 + 8 + 4 + 16 + 16 + 2] = 9;
    CHECK_THROWS_AS(decode(bad), MalformedFrame);
  }
  SUBCASE("work instruction with guard id 0") {
    CHECK_THROWS_AS(decode(encode(env(1, 2, Destroy{r(2, 4), g(1, 0)}))), MalformedFrame);
  }
  SUBCASE("blob length past the end") {
    Bytes bad = encode(env(2, 1, WriteResult{s(1, 9), {1, 2, 3}}));
    bad[19 + 16] = 200;
    CHECK_THROWS_AS(decode(bad), MalformedFrame);
  }
}

TEST_CASE("frames") {
  CHECK(write_frame({}) == Bytes{0, 0, 0, 0});

  const Bytes payload = encode(env(3, 2, ReleaseGuard{g(2, 7)}));
  const Bytes frame = write_frame(payload);
  CHECK(frame.size() == 39);
  CHECK(Bytes(frame.begin(), frame.begin() + 4) == Bytes{0x23, 0, 0, 0});

  Bytes stream = frame;
  const Bytes second = write_frame(Bytes{9, 8, 7});
  stream.insert(stream.end(), second.begin(), second.end());
  BufferSource src(stream);
  CHECK(read_frame(src) == payload);
  CHECK(read_frame(src) == Bytes{9, 8, 7});
  CHECK_FALSE(read_frame(src).has_value());

  for (std::size_t cut : {1, 3, 4, 10, 38}) {
    BufferSource partial(std::span(frame.data(), cut));
    CHECK_THROWS_AS(read_frame(partial), TruncatedFrame);
  }
}


TEST_CASE("100000 random envelopes round-trip") {
  Gen gen{std::mt19937_64(20240601)};
  std::size_t per_tag[8] = {};
  for (int i = 0; i < 100000; ++i) {
    const Envelope e = gen.envelope();
    const Bytes a = encode(e);
    const Envelope back = decode(a);
    REQUIRE(back == e);
    REQUIRE(encode(back) == a);  // canonical
    ++per_tag[static_cast<int>(tag_of(e.instruction))];
    if (initiates_work(tag_of(e.instruction))) {
      REQUIRE(guard_of(e.instruction).has_value());
    } else {
      REQUIRE_FALSE(guard_of(e.instruction).has_value());
    }
  }
  for (int t = 1; t <= 7; ++t) CHECK(per_tag[t] > 10000);
}

TEST_CASE("tag names") {
  for (int t = 1; t <= 7; ++t) {
    const auto tag = static_cast<Tag>(t);
    CHECK(tag_from_name(tag_name(tag)) == tag);
  }
  CHECK_FALSE(tag_from_name("bogus").has_value());
}
