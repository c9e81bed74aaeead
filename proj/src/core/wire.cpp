#include "agentsim/wire.hpp"

#include <arpa/inet.h>
#include <cerrno>
#include <cstring>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <array>
#include <charconv>
#include <limits>

namespace agentsim {

Endpoint Endpoint::parse(std::string_view text) {
  const auto colon = text.rfind(':');
  if (colon == std::string_view::npos || colon == 0)
    fail(ErrorCode::InvalidArgument, "expected HOST:PORT, got '" + std::string(text) + "'");
  int port = -1;
  const auto digits = text.substr(colon + 1);
  auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), port);
  if (ec != std::errc() || ptr != digits.data() + digits.size() || port < 0 || port > 65535)
    fail(ErrorCode::InvalidArgument, "bad port in '" + std::string(text) + "'");
  return Endpoint{std::string(text.substr(0, colon)), port};
}

std::string encode_frame(std::string_view body) {
  if (body.size() > std::numeric_limits<std::uint32_t>::max())
    fail(ErrorCode::FrameTooLarge, "frame body exceeds 2^32-1 bytes");
  const auto n = static_cast<std::uint32_t>(body.size());
  std::string out;
  out.reserve(4 + body.size());
  out.push_back(static_cast<char>((n >> 24) & 0xFF));
  out.push_back(static_cast<char>((n >> 16) & 0xFF));
  out.push_back(static_cast<char>((n >> 8) & 0xFF));
  out.push_back(static_cast<char>(n & 0xFF));
  out.append(body);
  return out;
}

std::uint32_t decode_frame_header(std::span<const std::uint8_t, 4> h) noexcept {
  return (std::uint32_t{h[0]} << 24) | (std::uint32_t{h[1]} << 16) |
         (std::uint32_t{h[2]} << 8) | std::uint32_t{h[3]};
}

std::optional<std::string> try_decode_frame(std::istream &in) {
  std::array<std::uint8_t, 4> header{};
  in.read(reinterpret_cast<char *>(header.data()), 4);
  const auto got = in.gcount();
  if (got == 0)
    return std::nullopt;
  if (got < 4)
    fail(ErrorCode::TruncatedFrame, "stream ended inside frame header");
  const std::uint32_t n = decode_frame_header(header);
  std::string body(n, '\0');
  in.read(body.data(), n);
  if (static_cast<std::uint32_t>(in.gcount()) != n)
    fail(ErrorCode::TruncatedFrame, "stream ended after " + std::to_string(in.gcount()) +
                                        " of " + std::to_string(n) + " body bytes");
  return body;
}

std::string decode_frame(std::istream &in) {
  auto body = try_decode_frame(in);
  if (!body)
    fail(ErrorCode::TruncatedFrame, "stream ended before frame header");
  return std::move(*body);
}

Socket &Socket::operator=(Socket &&other) noexcept {
  if (this != &other) {
    close();
    fd_ = other.release();
  }
  return *this;
}

Socket::~Socket() { close(); }

int Socket::release() noexcept {
  int fd = fd_;
  fd_ = -1;
  return fd;
}

void Socket::close() noexcept {
  if (fd_ >= 0) {
    ::close(fd_);
    fd_ = -1;
  }
}

void Socket::shutdown() noexcept {
  if (fd_ >= 0)
    ::shutdown(fd_, SHUT_RDWR);
}

void Socket::write_all(std::string_view bytes) {
  while (!bytes.empty()) {
    const ssize_t n = ::send(fd_, bytes.data(), bytes.size(), MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR)
        continue;
      fail(ErrorCode::ConnectionClosed, std::string("send: ") + std::strerror(errno));
    }
    bytes.remove_prefix(static_cast<std::size_t>(n));
  }
}

bool Socket::read_exact(std::span<char> out) {
  std::size_t done = 0;
  while (done < out.size()) {
    const ssize_t n = ::recv(fd_, out.data() + done, out.size() - done, 0);
    if (n == 0) {
      if (done == 0)
        return false;
      fail(ErrorCode::TruncatedFrame, "peer closed mid-frame");
    }
    if (n < 0) {
      if (errno == EINTR)
        continue;
      fail(ErrorCode::ConnectionClosed, std::string("recv: ") + std::strerror(errno));
    }
    done += static_cast<std::size_t>(n);
  }
  return true;
}

std::optional<std::string> Socket::read_frame() {
  std::array<char, 4> header{};
  if (!read_exact(header))
    return std::nullopt;
  const std::uint32_t n =
      decode_frame_header(std::span<const std::uint8_t, 4>(
          reinterpret_cast<const std::uint8_t *>(header.data()), 4));
  if (n > kMaxIncomingFrame)
    fail(ErrorCode::BadFrame, "incoming frame of " + std::to_string(n) + " bytes");
  std::string body(n, '\0');
  if (n > 0 && !read_exact(body))
    fail(ErrorCode::TruncatedFrame, "peer closed before frame body");
  return body;
}

namespace {

sockaddr_in resolve_ipv4(const Endpoint &ep) {
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(static_cast<std::uint16_t>(ep.port));
  const std::string host = ep.host.empty() ? "0.0.0.0" : ep.host;
  if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) == 1)
    return addr;
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo *res = nullptr;
  if (::getaddrinfo(host.c_str(), nullptr, &hints, &res) != 0 || res == nullptr)
    fail(ErrorCode::ConnectionRefused, "cannot resolve host " + host);
  addr.sin_addr = reinterpret_cast<sockaddr_in *>(res->ai_addr)->sin_addr;
  ::freeaddrinfo(res);
  return addr;
}

} // namespace

Socket connect_tcp(const Endpoint &ep, std::chrono::milliseconds timeout) {
  const sockaddr_in addr = resolve_ipv4(ep);
  Socket sock(::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0));
  if (!sock.valid())
    fail(ErrorCode::Internal, std::string("socket: ") + std::strerror(errno));

  const int flags = ::fcntl(sock.fd(), F_GETFL, 0);
  ::fcntl(sock.fd(), F_SETFL, flags | O_NONBLOCK);
  int rc = ::connect(sock.fd(), reinterpret_cast<const sockaddr *>(&addr), sizeof addr);
  if (rc < 0 && errno != EINPROGRESS)
    fail(ErrorCode::ConnectionRefused, "connect " + ep.str() + ": " + std::strerror(errno));
  if (rc < 0) {
    pollfd pfd{sock.fd(), POLLOUT, 0};
    rc = ::poll(&pfd, 1, static_cast<int>(timeout.count()));
    if (rc == 0)
      fail(ErrorCode::Timeout, "connect " + ep.str() + " timed out");
    int err = 0;
    socklen_t len = sizeof err;
    ::getsockopt(sock.fd(), SOL_SOCKET, SO_ERROR, &err, &len);
    if (rc < 0 || err != 0)
      fail(ErrorCode::ConnectionRefused,
           "connect " + ep.str() + ": " + std::strerror(err ? err : errno));
  }
  ::fcntl(sock.fd(), F_SETFL, flags);
  int one = 1;
  ::setsockopt(sock.fd(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
  return sock;
}

Socket listen_tcp(const Endpoint &ep, int &bound_port) {
  const sockaddr_in addr = resolve_ipv4(ep);
  Socket sock(::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0));
  if (!sock.valid())
    fail(ErrorCode::BindFailure, std::string("socket: ") + std::strerror(errno));
  int one = 1;
  ::setsockopt(sock.fd(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  if (::bind(sock.fd(), reinterpret_cast<const sockaddr *>(&addr), sizeof addr) < 0)
    fail(ErrorCode::BindFailure, "bind " + ep.str() + ": " + std::strerror(errno));
  if (::listen(sock.fd(), 1024) < 0)
    fail(ErrorCode::BindFailure, "listen " + ep.str() + ": " + std::strerror(errno));
  sockaddr_in actual{};
  socklen_t len = sizeof actual;
  ::getsockname(sock.fd(), reinterpret_cast<sockaddr *>(&actual), &len);
  bound_port = ntohs(actual.sin_port);
  return sock;
}

std::string_view to_string(RpcKind kind) noexcept {
  switch (kind) {
  case RpcKind::CreateAgent: return "create_agent";
  case RpcKind::CallAgent: return "call_agent";
  case RpcKind::ResolveTask: return "resolve_task";
  case RpcKind::StopAgent: return "stop_agent";
  case RpcKind::ListAgents: return "list_agents";
  case RpcKind::ServerStatus: return "server_status";
  }
  return "server_status";
}

std::optional<RpcKind> rpc_kind_from_string(std::string_view text) noexcept {
  for (auto k : {RpcKind::CreateAgent, RpcKind::CallAgent, RpcKind::ResolveTask,
                 RpcKind::StopAgent, RpcKind::ListAgents, RpcKind::ServerStatus})
    if (to_string(k) == text)
      return k;
  return std::nullopt;
}

RpcRequest RpcRequest::make(RpcKind kind, json payload) {
  return RpcRequest{new_uuid(), kind, std::move(payload)};
}

RpcResponse RpcResponse::success(std::string request_id, json payload) {
  return RpcResponse{std::move(request_id), true, std::move(payload), std::nullopt};
}

RpcResponse RpcResponse::failure(std::string request_id, ErrorCode code,
                                 std::string message) {
  return RpcResponse{std::move(request_id), false, json(),
                     RpcError{code, std::move(message)}};
}

const json &RpcResponse::value() const {
  if (!ok) {
    const RpcError err = error.value_or(RpcError{});
    throw Error(err.code, err.message);
  }
  return payload;
}

json to_json(const RpcRequest &req) {
  return json{{"request_id", req.request_id},
              {"kind", to_string(req.kind)},
              {"payload", req.payload}};
}

json to_json(const RpcResponse &resp) {
  json j{{"request_id", resp.request_id}, {"ok", resp.ok}};
  if (resp.ok) {
    j["payload"] = resp.payload;
  } else {
    const RpcError err = resp.error.value_or(RpcError{});
    j["error"] = json{{"code", wire_error_name(err.code)}, {"message", err.message}};
  }
  return j;
}

namespace {

void require(bool cond, const std::string &what) {
  if (!cond)
    fail(ErrorCode::MalformedPayload, what);
}

bool has_string(const json &j, const char *key) {
  auto it = j.find(key);
  return it != j.end() && it->is_string();
}

void validate_request_payload(RpcKind kind, const json &p) {
  require(p.is_object(), "request payload must be an object");
  switch (kind) {
  case RpcKind::CreateAgent: {
    auto def = p.find("def");
    require(def != p.end() && def->is_object(), "create_agent needs def");
    require(has_string(*def, "name") && has_string(*def, "kind"),
            "create_agent def needs name and kind");
    break;
  }
  case RpcKind::CallAgent: {
    require(has_string(p, "agent_id"), "call_agent needs agent_id");
    auto inputs = p.find("inputs");
    require(inputs != p.end() && inputs->is_array(), "call_agent needs inputs array");
    for (const auto &in : *inputs)
      (void)payload_from_json(in);
    break;
  }
  case RpcKind::ResolveTask:
    require(has_string(p, "task_id"), "resolve_task needs task_id");
    break;
  case RpcKind::StopAgent:
    require(has_string(p, "agent_id"), "stop_agent needs agent_id");
    break;
  case RpcKind::ListAgents:
  case RpcKind::ServerStatus:
    break;
  }
}

} // namespace

RpcRequest request_from_json(const json &j) {
  require(j.is_object(), "request must be an object");
  require(has_string(j, "request_id"), "request_id missing");
  require(has_string(j, "kind"), "kind missing");
  auto kind = rpc_kind_from_string(j["kind"].get<std::string>());
  require(kind.has_value(), "unknown kind " + j["kind"].get<std::string>());
  auto payload = j.find("payload");
  require(payload != j.end(), "payload missing");
  validate_request_payload(*kind, *payload);
  return RpcRequest{j["request_id"].get<std::string>(), *kind, *payload};
}

RpcResponse response_from_json(const json &j) {
  require(j.is_object(), "response must be an object");
  require(has_string(j, "request_id"), "request_id missing");
  auto ok = j.find("ok");
  require(ok != j.end() && ok->is_boolean(), "ok missing");
  const bool has_payload = j.contains("payload");
  const bool has_error = j.contains("error");
  require(has_payload != has_error, "exactly one of payload/error must be present");
  require(ok->get<bool>() == has_payload, "ok does not match payload/error");
  RpcResponse resp;
  resp.request_id = j["request_id"].get<std::string>();
  resp.ok = ok->get<bool>();
  if (resp.ok) {
    resp.payload = j["payload"];
  } else {
    const json &err = j["error"];
    require(err.is_object() && has_string(err, "code") && has_string(err, "message"),
            "error needs code and message");
    resp.error = RpcError{error_code_from_wire(err["code"].get<std::string>()),
                          err["message"].get<std::string>()};
  }
  return resp;
}

std::string encode_body(const json &j) {
  return j.dump(-1, ' ', false, json::error_handler_t::replace);
}

json parse_body(std::string_view body) {
  json j = json::parse(body.begin(), body.end(), nullptr, false);
  if (j.is_discarded())
    fail(ErrorCode::MalformedPayload, "frame body is not valid JSON");
  return j;
}

} // namespace agentsim
