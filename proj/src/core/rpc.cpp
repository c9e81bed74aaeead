#include "agentsim/rpc.hpp"

#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>

#include <cerrno>
#include <future>

#include <spdlog/spdlog.h>

namespace agentsim {

namespace {
std::atomic<std::uint64_t> g_requests_sent{0};
constexpr std::size_t kMaxAbandoned = 65536;
} // namespace

std::uint64_t rpc_requests_sent() noexcept { return g_requests_sent.load(); }

std::shared_ptr<RpcClient> RpcClient::connect(const Endpoint &ep,
                                              std::chrono::milliseconds timeout) {
  Socket sock = connect_tcp(ep, timeout);
  std::shared_ptr<RpcClient> client(new RpcClient(ep, std::move(sock)));
  client->reader_ = std::thread([raw = client.get()] { raw->reader_loop(); });
  return client;
}

RpcClient::RpcClient(Endpoint ep, Socket sock)
    : ep_(std::move(ep)), sock_(std::move(sock)) {}

RpcClient::~RpcClient() {
  close();
  if (reader_.joinable()) {
    if (reader_.get_id() == std::this_thread::get_id())
      reader_.detach();
    else
      reader_.join();
  }
}

void RpcClient::close() {
  closed_.store(true);
  sock_.shutdown();
}

void RpcClient::fail_all(const Error &err) {
  std::unordered_map<std::string, std::function<void(RpcOutcome)>> pending;
  {
    std::lock_guard lock(pending_mu_);
    pending.swap(pending_);
  }
  for (auto &[id, cb] : pending)
    cb(err);
}

void RpcClient::reader_loop() {
  try {
    while (true) {
      auto body = sock_.read_frame();
      if (!body)
        break;
      RpcResponse resp = response_from_json(parse_body(*body));
      std::function<void(RpcOutcome)> cb;
      {
        std::lock_guard lock(pending_mu_);
        auto it = pending_.find(resp.request_id);
        if (it != pending_.end()) {
          cb = std::move(it->second);
          pending_.erase(it);
        } else if (abandoned_.erase(resp.request_id) == 0) {
          fail(ErrorCode::MalformedPayload,
               "response for unknown request_id '" + resp.request_id + "'");
        }
      }
      if (cb)
        cb(std::move(resp));
    }
    closed_.store(true);
    fail_all(Error(ErrorCode::ConnectionClosed, "connection to " + ep_.str() + " closed"));
  } catch (const Error &e) {
    closed_.store(true);
    sock_.shutdown();
    const ErrorCode code =
        e.code() == ErrorCode::MalformedPayload ? ErrorCode::MalformedPayload
                                                : ErrorCode::ConnectionClosed;
    fail_all(Error(code, e.what()));
  }
}

void RpcClient::call_async(const RpcRequest &req, std::function<void(RpcOutcome)> cb) {
  if (closed_.load()) {
    cb(Error(ErrorCode::ConnectionClosed, "connection to " + ep_.str() + " closed"));
    return;
  }
  {
    std::lock_guard lock(pending_mu_);
    pending_.emplace(req.request_id, std::move(cb));
  }
  try {
    const std::string frame = encode_frame(encode_body(to_json(req)));
    std::lock_guard lock(write_mu_);
    sock_.write_all(frame);
    g_requests_sent.fetch_add(1);
  } catch (const Error &e) {
    std::function<void(RpcOutcome)> mine;
    {
      std::lock_guard lock(pending_mu_);
      auto it = pending_.find(req.request_id);
      if (it != pending_.end()) {
        mine = std::move(it->second);
        pending_.erase(it);
      }
    }
    close();
    if (mine)
      mine(e);
  }
}

RpcResponse RpcClient::call(const RpcRequest &req, std::chrono::milliseconds timeout) {
  auto promise = std::make_shared<std::promise<RpcOutcome>>();
  auto future = promise->get_future();
  call_async(req, [promise](RpcOutcome outcome) { promise->set_value(std::move(outcome)); });
  if (future.wait_for(timeout) != std::future_status::ready) {
    bool still_pending = false;
    {
      std::lock_guard lock(pending_mu_);
      still_pending = pending_.erase(req.request_id) > 0;
      if (still_pending) {
        if (abandoned_.size() >= kMaxAbandoned)
          abandoned_.clear();
        abandoned_.insert(req.request_id);
      }
    }
    if (still_pending)
      fail(ErrorCode::Timeout, std::string(to_string(req.kind)) + " to " + ep_.str() +
                                   " timed out after " + std::to_string(timeout.count()) +
                                   " ms");
  }
  RpcOutcome outcome = future.get();
  if (auto *err = std::get_if<Error>(&outcome))
    throw *err;
  auto &resp = std::get<RpcResponse>(outcome);
  if (resp.request_id != req.request_id)
    fail(ErrorCode::MalformedPayload, "response request_id mismatch");
  return std::move(resp);
}

ClientPool &ClientPool::shared() {
  static ClientPool pool;
  return pool;
}

std::shared_ptr<RpcClient> ClientPool::get(const Endpoint &ep,
                                           std::chrono::milliseconds timeout) {
  const std::string key = ep.str();
  {
    std::lock_guard lock(mu_);
    auto it = clients_.find(key);
    if (it != clients_.end() && it->second->healthy())
      return it->second;
  }
  auto client = RpcClient::connect(ep, timeout);
  std::lock_guard lock(mu_);
  auto &slot = clients_[key];
  if (!slot || !slot->healthy())
    slot = client;
  return slot;
}

void ClientPool::drop(const Endpoint &ep) {
  std::lock_guard lock(mu_);
  clients_.erase(ep.str());
}

void ClientPool::clear() {
  std::lock_guard lock(mu_);
  clients_.clear();
}

RpcResponse rpc_call(const Endpoint &addr, const RpcRequest &req,
                     std::chrono::milliseconds timeout) {
  auto client = ClientPool::shared().get(addr, std::min(timeout, kControlTimeout));
  return client->call(req, timeout);
}

struct RpcServer::Connection {
  Socket sock;
  std::mutex write_mu;
  std::thread thread;
  std::atomic<bool> done{false};

  void send(const RpcResponse &resp) {
    try {
      const std::string frame = encode_frame(encode_body(to_json(resp)));
      std::lock_guard lock(write_mu);
      sock.write_all(frame);
    } catch (const Error &e) {
      spdlog::debug("dropping response {}: {}", resp.request_id, e.what());
    }
  }
};

RpcServer::RpcServer(Endpoint listen, Handler handler)
    : listen_(std::move(listen)), handler_(std::move(handler)) {}

RpcServer::~RpcServer() { stop(); }

void RpcServer::start() {
  listener_ = listen_tcp(listen_, port_);
  listen_.port = port_;
  acceptor_ = std::thread([this] { accept_loop(); });
}

void RpcServer::stop() {
  if (stopping_.exchange(true))
    return;
  listener_.shutdown();
  if (acceptor_.joinable())
    acceptor_.join();
  listener_.close();
  std::vector<std::shared_ptr<Connection>> conns;
  {
    std::lock_guard lock(conns_mu_);
    conns.swap(conns_);
  }
  for (auto &c : conns)
    c->sock.shutdown();
  for (auto &c : conns)
    if (c->thread.joinable())
      c->thread.join();
}

void RpcServer::accept_loop() {
  while (!stopping_.load()) {
    const int fd = ::accept4(listener_.fd(), nullptr, nullptr, SOCK_CLOEXEC);
    if (fd < 0) {
      if (errno == EINTR || errno == ECONNABORTED)
        continue;
      break;
    }
    int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    auto conn = std::make_shared<Connection>();
    conn->sock = Socket(fd);
    std::lock_guard lock(conns_mu_);
    if (stopping_.load())
      break;
    std::erase_if(conns_, [](const std::shared_ptr<Connection> &c) {
      if (!c->done.load())
        return false;
      c->thread.join();
      return true;
    });
    conn->thread = std::thread([this, conn] { serve(conn); });
    conns_.push_back(conn);
  }
}

void RpcServer::serve(const std::shared_ptr<Connection> &conn) {
  std::weak_ptr<Connection> weak = conn;
  try {
    while (true) {
      auto body = conn->sock.read_frame();
      if (!body)
        break;
      RpcRequest req;
      try {
        req = request_from_json(parse_body(*body));
      } catch (const Error &e) {
        std::string id;
        json j = json::parse(*body, nullptr, false);
        if (j.is_object() && j.contains("request_id") && j["request_id"].is_string())
          id = j["request_id"].get<std::string>();
        conn->send(RpcResponse::failure(id, ErrorCode::BadFrame, e.what()));
        continue;
      }
      const std::string id = req.request_id;
      auto responder = [weak](const RpcResponse &resp) {
        if (auto c = weak.lock())
          c->send(resp);
      };
      try {
        handler_(std::move(req), responder);
      } catch (const Error &e) {
        responder(RpcResponse::failure(id, e.code(), e.what()));
      } catch (const std::exception &e) {
        responder(RpcResponse::failure(id, ErrorCode::Internal, e.what()));
      }
    }
  } catch (const Error &e) {
    spdlog::debug("connection closed: {}", e.what());
  }
  conn->done.store(true);
}

} // namespace agentsim
