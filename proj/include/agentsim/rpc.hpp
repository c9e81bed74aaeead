#pragma once

#include <atomic>
#include <chrono>
#include <functional>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <unordered_map>
#include <unordered_set>
#include <variant>
#include <vector>

#include "agentsim/wire.hpp"

namespace agentsim {

using namespace std::chrono_literals;

inline constexpr std::chrono::milliseconds kCallTimeout = 30s;
inline constexpr std::chrono::milliseconds kControlTimeout = 5s;

using RpcOutcome = std::variant<RpcResponse, Error>;

// One persistent connection. Requests are pipelined: any number may be in
// flight and responses are matched by request_id. A response whose id matches
// no request ever issued on this connection poisons it; every pending call
// then fails with MalformedPayload.
class RpcClient {
public:
  static std::shared_ptr<RpcClient> connect(const Endpoint &ep,
                                            std::chrono::milliseconds timeout);
  ~RpcClient();

  RpcClient(const RpcClient &) = delete;
  RpcClient &operator=(const RpcClient &) = delete;

  RpcResponse call(const RpcRequest &req, std::chrono::milliseconds timeout);
  // cb runs exactly once, on the connection's reader thread or inline when the
  // send itself fails.
  void call_async(const RpcRequest &req, std::function<void(RpcOutcome)> cb);

  bool healthy() const noexcept { return !closed_.load(); }
  const Endpoint &endpoint() const noexcept { return ep_; }
  void close();

private:
  RpcClient(Endpoint ep, Socket sock);
  void reader_loop();
  void fail_all(const Error &err);

  Endpoint ep_;
  Socket sock_;
  std::mutex write_mu_;
  std::mutex pending_mu_;
  std::unordered_map<std::string, std::function<void(RpcOutcome)>> pending_;
  std::unordered_set<std::string> abandoned_;
  std::atomic<bool> closed_{false};
  std::thread reader_;
};

// Process-wide cache of persistent connections keyed by endpoint.
class ClientPool {
public:
  static ClientPool &shared();
  std::shared_ptr<RpcClient> get(const Endpoint &ep, std::chrono::milliseconds timeout);
  void drop(const Endpoint &ep);
  void clear();

private:
  std::mutex mu_;
  std::unordered_map<std::string, std::shared_ptr<RpcClient>> clients_;
};

// Exactly one transmission of req; never retried. Throws Timeout,
// ConnectionRefused/ConnectionClosed or MalformedPayload; a well-formed error
// response is returned, not thrown.
RpcResponse rpc_call(const Endpoint &addr, const RpcRequest &req,
                     std::chrono::milliseconds timeout);

// Number of requests written to the wire by this process.
std::uint64_t rpc_requests_sent() noexcept;

class RpcServer {
public:
  // Thread-safe; must be invoked once per request, possibly later and from
  // another thread.
  using Responder = std::function<void(const RpcResponse &)>;
  using Handler = std::function<void(RpcRequest, Responder)>;

  RpcServer(Endpoint listen, Handler handler);
  ~RpcServer();

  void start(); // throws BindFailure
  void stop();
  int port() const noexcept { return port_; }
  const Endpoint &listen_endpoint() const noexcept { return listen_; }

private:
  struct Connection;
  void accept_loop();
  void serve(const std::shared_ptr<Connection> &conn);

  Endpoint listen_;
  Handler handler_;
  Socket listener_;
  int port_ = 0;
  std::atomic<bool> stopping_{false};
  std::thread acceptor_;
  std::mutex conns_mu_;
  std::vector<std::shared_ptr<Connection>> conns_;
};

} // namespace agentsim
