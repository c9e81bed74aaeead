#include <doctest.h>

#include <random>
#include <set>

#include "agentsim/error.hpp"
#include "agentsim/message.hpp"

using namespace agentsim;

namespace {

Message random_message(std::mt19937_64 &rng) {
  std::uniform_int_distribution<int> len(0, 40), ch(32, 126), role(0, 2), kind(0, 3);
  auto text = [&] {
    std::string s(static_cast<std::size_t>(len(rng)), ' ');
    for (auto &c : s)
      c = static_cast<char>(ch(rng));
    return s;
  };
  Metadata md;
  for (int i = 0, n = len(rng) % 5; i < n; ++i) {
    switch (kind(rng)) {
    case 0: md[text()] = text(); break;
    case 1: md[text()] = static_cast<std::int64_t>(rng() >> 12); break;
    case 2: md[text()] = std::uniform_real_distribution<double>(-1e9, 1e9)(rng); break;
    default: md[text()] = (rng() & 1) == 1; break;
    }
  }
  return Message(new_uuid(), text(), static_cast<Role>(role(rng)), text() + "\xc3\xa9\n\"",
                 md, static_cast<std::int64_t>(rng() >> 24));
}

} // namespace

TEST_SUITE("message-core") {
  TEST_CASE("empty message serializes all six keys in sorted order") {
    const Message m("a", "A", Role::Assistant, "", {}, 0);
    CHECK(serialize(m) == R"({"content":"","id":"a","metadata":{},"role":"assistant","sender":"A","timestamp":0})");
  }

  TEST_CASE("placeholder carries the discriminator") {
    const Placeholder p("t1", "127.0.0.1", 9000);
    const std::string s = serialize(p);
    CHECK(s.find(R"("__placeholder__":true)") != std::string::npos);
    const Payload back = deserialize(s);
    REQUIRE(is_placeholder(back));
    CHECK(std::get<Placeholder>(back) == p);
  }

  TEST_CASE("serialize . deserialize . serialize is byte identical on random payloads") {
    std::mt19937_64 rng(1);
    for (int i = 0; i < 10000; ++i) {
      Payload p = i % 10 == 0 ? Payload(Placeholder(new_uuid(), "10.0.0.1", 1 + i % 65535))
                              : Payload(random_message(rng));
      const std::string once = serialize(p);
      const Payload back = deserialize(once);
      REQUIRE(serialize(back) == once);
      REQUIRE(is_placeholder(back) == is_placeholder(p));
      if (!is_placeholder(p))
        REQUIRE(std::get<Message>(back) == std::get<Message>(p));
    }
  }

  TEST_CASE("malformed payloads are rejected") {
    auto code = [](const std::string &text) {
      try {
        deserialize(text);
      } catch (const Error &e) {
        return e.code();
      }
      return ErrorCode::Ok;
    };
    CHECK(code("not json") == ErrorCode::MalformedPayload);
    CHECK(code(R"({"__placeholder__":true,"task_id":"t","host":"h","port":70000})") ==
          ErrorCode::MalformedPayload);
    CHECK(code(R"({"__placeholder__":true,"task_id":"","host":"h","port":1})") ==
          ErrorCode::MalformedPayload);
    CHECK(code(R"({"content":"","id":"a","metadata":{},"role":"boss","sender":"A","timestamp":0})") ==
          ErrorCode::MalformedPayload);
    CHECK(code(R"({"content":"","id":"a","metadata":{"x":[1]},"role":"user","sender":"A","timestamp":0})") ==
          ErrorCode::MalformedPayload);
    CHECK(code(R"({"content":"","metadata":{},"role":"user","sender":"A","timestamp":0})") ==
          ErrorCode::MalformedPayload);
  }

  TEST_CASE("ids are unique and timestamps are wall-clock milliseconds") {
    std::set<std::string> ids;
    for (int i = 0; i < 1000; ++i)
      ids.insert(Message("s", Role::User, "x").id());
    CHECK(ids.size() == 1000);
    const Message m("s", Role::User, "x");
    CHECK(std::llabs(m.timestamp() - now_millis()) < 5000);
  }

  TEST_CASE("placeholder cache keeps the first value") {
    const Placeholder p("t", "h", 1);
    const Placeholder copy = p;
    CHECK_FALSE(p.cached().has_value());
    const Message a("s", Role::User, "first");
    const Message b("s", Role::User, "second");
    CHECK(p.set_cached(a).content() == "first");
    CHECK(copy.set_cached(b).content() == "first");
    CHECK(copy.cached()->content() == "first");
  }

  TEST_CASE("format_number is the shortest exact representation") {
    CHECK(format_number(12.77) == "12.77");
    CHECK(format_number(10) == "10");
    CHECK(format_number(100.0 / 3.0) == "33.333333333333336");
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> d(0, 100);
    for (int i = 0; i < 10000; ++i) {
      const double v = d(rng);
      REQUIRE(std::stod(format_number(v)) == v);
    }
  }

  TEST_CASE("metadata accessors") {
    const Message m("s", Role::User, "x", Metadata{{"round", std::int64_t{3}}, {"v", 1.5}, {"t", std::string("y")}});
    CHECK(m.number("round") == 3.0);
    CHECK(m.number("v") == 1.5);
    CHECK(m.text("t") == "y");
    CHECK_FALSE(m.number("t").has_value());
  }
}
