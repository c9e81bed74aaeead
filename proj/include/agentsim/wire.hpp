#pragma once

#include <chrono>
#include <cstdint>
#include <istream>
#include <optional>
#include <span>
#include <string>
#include <string_view>

#include "agentsim/error.hpp"
#include "agentsim/message.hpp"

namespace agentsim {

struct Endpoint {
  std::string host;
  int port = 0;

  std::string str() const { return host + ":" + std::to_string(port); }
  static Endpoint parse(std::string_view text); // "HOST:PORT", throws InvalidArgument

  friend bool operator==(const Endpoint &, const Endpoint &) = default;
};

// Frame = 4-byte big-endian body length followed by the body bytes.
std::string encode_frame(std::string_view body);
std::uint32_t decode_frame_header(std::span<const std::uint8_t, 4> header) noexcept;

// Reads one frame from the stream, leaving it positioned at the next frame.
// Returns nullopt on a clean end of stream at a frame boundary; throws
// TruncatedFrame when the stream ends mid-frame.
std::optional<std::string> try_decode_frame(std::istream &in);
std::string decode_frame(std::istream &in);

// Incoming frames larger than this are rejected with BadFrame before any
// allocation.
inline constexpr std::uint32_t kMaxIncomingFrame = 64u << 20;

// RAII TCP socket.
class Socket {
public:
  Socket() = default;
  explicit Socket(int fd) noexcept : fd_(fd) {}
  Socket(Socket &&other) noexcept : fd_(other.release()) {}
  Socket &operator=(Socket &&other) noexcept;
  Socket(const Socket &) = delete;
  Socket &operator=(const Socket &) = delete;
  ~Socket();

  int fd() const noexcept { return fd_; }
  bool valid() const noexcept { return fd_ >= 0; }
  int release() noexcept;
  void close() noexcept;
  // Unblocks any thread reading or writing this socket.
  void shutdown() noexcept;

  void write_all(std::string_view bytes);
  // false on orderly EOF before any byte was read; throws TruncatedFrame on
  // EOF after a partial read, ConnectionClosed on socket errors.
  bool read_exact(std::span<char> out);

  std::optional<std::string> read_frame();
  void write_frame(std::string_view body) { write_all(encode_frame(body)); }

private:
  int fd_ = -1;
};

Socket connect_tcp(const Endpoint &ep, std::chrono::milliseconds timeout);
// Binds and listens; port 0 picks an ephemeral port. Returns the bound port.
Socket listen_tcp(const Endpoint &ep, int &bound_port);

enum class RpcKind {
  CreateAgent,
  CallAgent,
  ResolveTask,
  StopAgent,
  ListAgents,
  ServerStatus
};

std::string_view to_string(RpcKind kind) noexcept;
std::optional<RpcKind> rpc_kind_from_string(std::string_view text) noexcept;

struct RpcRequest {
  std::string request_id;
  RpcKind kind = RpcKind::ServerStatus;
  json payload = json::object();

  static RpcRequest make(RpcKind kind, json payload);
};

struct RpcError {
  ErrorCode code = ErrorCode::Internal;
  std::string message;
};

struct RpcResponse {
  std::string request_id;
  bool ok = true;
  json payload = json::object();
  std::optional<RpcError> error;

  static RpcResponse success(std::string request_id, json payload);
  static RpcResponse failure(std::string request_id, ErrorCode code,
                             std::string message);

  // Throws the carried error as agentsim::Error when !ok.
  const json &value() const;
};

json to_json(const RpcRequest &req);
json to_json(const RpcResponse &resp);
// Validate structure and the per-kind payload schema; throw MalformedPayload.
RpcRequest request_from_json(const json &j);
RpcResponse response_from_json(const json &j);

std::string encode_body(const json &j);
json parse_body(std::string_view body); // throws MalformedPayload

} // namespace agentsim
