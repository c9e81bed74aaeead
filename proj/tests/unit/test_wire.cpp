#include <doctest.h>

#include <sys/socket.h>

#include <random>
#include <sstream>
#include <thread>

#include "agentsim/wire.hpp"

using namespace agentsim;

namespace {

ErrorCode code_of(const std::function<void()> &f) {
  try {
    f();
  } catch (const Error &e) {
    return e.code();
  }
  return ErrorCode::Ok;
}

} // namespace

TEST_SUITE("rpc-transport") {
  TEST_CASE("reference frames") {
    CHECK(encode_frame("") == std::string("\0\0\0\0", 4));
    const std::string f = encode_frame(std::string(256, 'a'));
    CHECK(f.substr(0, 4) == std::string("\0\0\1\0", 4));
    CHECK(f.size() == 260);
    const std::uint8_t h[4] = {0x01, 0x02, 0x03, 0x04};
    CHECK(decode_frame_header(std::span<const std::uint8_t, 4>(h)) == 0x01020304u);
  }

  TEST_CASE("decode reads one frame at a time") {
    std::istringstream hi(std::string("\0\0\0\x02hi", 6));
    CHECK(decode_frame(hi) == "hi");
    CHECK_FALSE(try_decode_frame(hi).has_value());

    std::istringstream two(encode_frame("first") + encode_frame("") + encode_frame("third"));
    CHECK(decode_frame(two) == "first");
    CHECK(decode_frame(two) == "");
    CHECK(decode_frame(two) == "third");
  }

  TEST_CASE("truncated frames") {
    std::istringstream body(std::string("\0\0\0\x05h", 5));
    CHECK(code_of([&] { decode_frame(body); }) == ErrorCode::TruncatedFrame);
    std::istringstream header(std::string("\0\0", 2));
    CHECK(code_of([&] { decode_frame(header); }) == ErrorCode::TruncatedFrame);
  }

  TEST_CASE("random bodies round-trip") {
    std::mt19937_64 rng(5);
    std::string stream;
    std::vector<std::string> bodies;
    for (int i = 0; i < 1000; ++i) {
      std::string b(rng() % 2000, '\0');
      for (auto &c : b)
        c = static_cast<char>(rng());
      bodies.push_back(b);
      stream += encode_frame(b);
    }
    std::istringstream in(stream);
    for (const auto &b : bodies)
      REQUIRE(decode_frame(in) == b);
  }

  TEST_CASE("socket frames and oversize rejection") {
    int fds[2];
    REQUIRE(::socketpair(AF_UNIX, SOCK_STREAM, 0, fds) == 0);
    Socket a(fds[0]), b(fds[1]);
    std::thread writer([&] {
      for (int i = 0; i < 100; ++i)
        a.write_frame("frame-" + std::to_string(i));
      a.write_all(std::string("\xff\xff\xff\xff", 4));
    });
    for (int i = 0; i < 100; ++i)
      REQUIRE(b.read_frame() == "frame-" + std::to_string(i));
    CHECK(code_of([&] { b.read_frame(); }) == ErrorCode::BadFrame);
    writer.join();
    a.close();
    CHECK_FALSE(b.read_frame().has_value());
  }

  TEST_CASE("endpoints") {
    CHECK(Endpoint::parse("127.0.0.1:9000") == Endpoint{"127.0.0.1", 9000});
    CHECK(Endpoint::parse("localhost:1").str() == "localhost:1");
    CHECK(code_of([] { Endpoint::parse("nohost"); }) == ErrorCode::InvalidArgument);
    CHECK(code_of([] { Endpoint::parse("h:70000"); }) == ErrorCode::InvalidArgument);
    CHECK(code_of([] { Endpoint::parse("h:x"); }) == ErrorCode::InvalidArgument);
  }

  TEST_CASE("request schemas are enforced per kind") {
    auto req = [](const std::string &kind, json payload) {
      return json{{"request_id", "r"}, {"kind", kind}, {"payload", std::move(payload)}};
    };
    CHECK(request_from_json(req("server_status", json::object())).kind == RpcKind::ServerStatus);
    CHECK(code_of([&] { request_from_json(req("call_agent", json::object())); }) ==
          ErrorCode::MalformedPayload);
    CHECK(code_of([&] { request_from_json(req("create_agent", json{{"def", {{"name", "a"}}}})); }) ==
          ErrorCode::MalformedPayload);
    CHECK(code_of([&] { request_from_json(req("reboot", json::object())); }) ==
          ErrorCode::MalformedPayload);
    CHECK(code_of([&] { request_from_json(json{{"kind", "server_status"}, {"payload", json::object()}}); }) ==
          ErrorCode::MalformedPayload);
    const auto call = request_from_json(
        req("call_agent", json{{"agent_id", "x"}, {"inputs", json::array({to_json(Payload(Message("a", Role::User, "hi")))})}}));
    CHECK(call.kind == RpcKind::CallAgent);
  }

  TEST_CASE("responses carry exactly one of payload and error") {
    const auto ok = RpcResponse::success("r1", json{{"x", 1}});
    CHECK(response_from_json(to_json(ok)).payload == json{{"x", 1}});
    const auto bad = RpcResponse::failure("r2", ErrorCode::AgentNotFound, "gone");
    const json wire = to_json(bad);
    CHECK(wire["error"]["code"] == "AGENT_NOT_FOUND");
    const auto back = response_from_json(wire);
    CHECK_FALSE(back.ok);
    CHECK(back.error->code == ErrorCode::AgentNotFound);
    CHECK(code_of([&] { back.value(); }) == ErrorCode::AgentNotFound);
    CHECK(code_of([] {
            response_from_json(json{{"request_id", "r"}, {"ok", true}, {"payload", json::object()},
                                    {"error", {{"code", "INTERNAL"}, {"message", ""}}}});
          }) == ErrorCode::MalformedPayload);
    CHECK(code_of([] { response_from_json(json{{"request_id", "r"}, {"ok", false}, {"payload", json::object()}}); }) ==
          ErrorCode::MalformedPayload);
  }

  TEST_CASE("wire error names") {
    for (auto c : {ErrorCode::AgentNotFound, ErrorCode::TaskNotFound, ErrorCode::Timeout,
                   ErrorCode::BadFrame, ErrorCode::CapacityExceeded, ErrorCode::Internal})
      CHECK(error_code_from_wire(wire_error_name(c)) == c);
    CHECK(wire_error_name(ErrorCode::CycleDetected) == "INTERNAL");
  }
}
