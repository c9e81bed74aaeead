#include "agentsim/hub.hpp"

#include <sys/resource.h>
#include <unistd.h>

#include <fstream>

#include <httplib.h>
#include <spdlog/spdlog.h>

#include "agentsim/error.hpp"

namespace agentsim {

json to_json(const ProcessMetrics &m) {
  return json{{"cpu_percent", m.cpu_percent}, {"mem_bytes", m.mem_bytes},
              {"uptime_s", m.uptime_s}};
}

ProcessMetrics process_metrics_from_json(const json &j) {
  ProcessMetrics m;
  if (!j.is_object())
    return m;
  m.cpu_percent = j.value("cpu_percent", 0.0);
  m.mem_bytes = j.value("mem_bytes", std::int64_t{0});
  m.uptime_s = j.value("uptime_s", std::int64_t{0});
  return m;
}

namespace {

double cpu_seconds() {
  rusage ru{};
  ::getrusage(RUSAGE_SELF, &ru);
  auto secs = [](const timeval &tv) { return tv.tv_sec + tv.tv_usec / 1e6; };
  return secs(ru.ru_utime) + secs(ru.ru_stime);
}

std::int64_t resident_bytes() {
  std::ifstream statm("/proc/self/statm");
  std::int64_t size = 0, resident = 0;
  if (!(statm >> size >> resident))
    return 0;
  return resident * ::sysconf(_SC_PAGESIZE);
}

} // namespace

MetricsSampler::MetricsSampler()
    : started_(std::chrono::steady_clock::now()), last_wall_(started_), last_cpu_s_(cpu_seconds()) {}

ProcessMetrics MetricsSampler::sample() {
  const auto now = std::chrono::steady_clock::now();
  const double cpu = cpu_seconds();
  const double wall = std::chrono::duration<double>(now - last_wall_).count();
  ProcessMetrics m;
  m.cpu_percent = wall > 0 ? 100.0 * (cpu - last_cpu_s_) / wall : 0.0;
  m.mem_bytes = resident_bytes();
  m.uptime_s = std::chrono::duration_cast<std::chrono::seconds>(now - started_).count();
  last_wall_ = now;
  last_cpu_s_ = cpu;
  return m;
}

std::string_view to_string(ServerHealth h) noexcept {
  switch (h) {
  case ServerHealth::Alive: return "alive";
  case ServerHealth::Stale: return "stale";
  case ServerHealth::Dead: return "dead";
  }
  return "dead";
}

ServerHealth health_for_age(std::chrono::milliseconds age) noexcept {
  if (age < std::chrono::seconds(10))
    return ServerHealth::Alive;
  if (age < std::chrono::seconds(30))
    return ServerHealth::Stale;
  return ServerHealth::Dead;
}

struct Hub::Http {
  httplib::Server server;
};

Hub::Hub(Options opts) : opts_(std::move(opts)), http_(std::make_unique<Http>()) {
  if (!opts_.clock) {
    opts_.clock = [] {
      return std::chrono::duration_cast<std::chrono::milliseconds>(
                 std::chrono::steady_clock::now().time_since_epoch())
          .count();
    };
  }
  // Without SO_REUSEPORT a second hub on the same port fails to bind.
  http_->server.set_socket_options([](socket_t sock) {
    int yes = 1;
    ::setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof yes);
  });
  install_routes();
}

Hub::~Hub() { stop(); }

void Hub::start() {
  auto &svr = http_->server;
  if (opts_.port == 0) {
    port_ = svr.bind_to_any_port(opts_.host);
    if (port_ <= 0)
      fail(ErrorCode::BindFailure, "cannot bind hub on " + opts_.host);
  } else {
    if (!svr.bind_to_port(opts_.host, opts_.port))
      fail(ErrorCode::BindFailure,
           "cannot bind hub on " + opts_.host + ":" + std::to_string(opts_.port));
    port_ = opts_.port;
  }
  {
    std::lock_guard lock(run_mu_);
    running_ = true;
  }
  listener_ = std::thread([this] { http_->server.listen_after_bind(); });
  // stop() is a no-op until the listener runs, so do not return before that.
  svr.wait_until_ready();
  spdlog::info("hub listening on {}:{}", opts_.host, port_);
}

void Hub::stop() {
  {
    std::lock_guard lock(run_mu_);
    running_ = false;
  }
  run_cv_.notify_all();
  http_->server.stop();
  if (listener_.joinable())
    listener_.join();
}

void Hub::wait() {
  std::unique_lock lock(run_mu_);
  run_cv_.wait(lock, [this] { return !running_; });
}

std::string Hub::register_server(const Endpoint &addr, const std::string &mode, int capacity) {
  if (capacity < 1)
    fail(ErrorCode::InvalidArgument, "capacity must be >= 1");
  const std::int64_t now = opts_.clock();
  std::lock_guard lock(mu_);
  for (auto it = records_.begin(); it != records_.end();) {
    if (it->second.addr == addr) {
      const auto age = std::chrono::milliseconds(now - it->second.last_heartbeat_ms);
      if (health_for_age(age) == ServerHealth::Alive)
        fail(ErrorCode::DuplicateAddress, addr.str() + " is already registered");
      it = records_.erase(it);
    } else {
      ++it;
    }
  }
  Record r;
  r.server_id = new_uuid();
  r.addr = addr;
  r.mode = mode;
  r.capacity = capacity;
  r.registered_ms = now;
  r.last_heartbeat_ms = now;
  const std::string id = r.server_id;
  records_.emplace(id, std::move(r));
  return id;
}

void Hub::heartbeat(const std::string &server_id, int agent_count,
                    const ProcessMetrics &metrics) {
  const std::int64_t now = opts_.clock();
  std::lock_guard lock(mu_);
  auto it = records_.find(server_id);
  if (it == records_.end())
    fail(ErrorCode::ServerNotFound, "unknown server " + server_id);
  Record &r = it->second;
  r.agent_count = agent_count;
  r.metrics = metrics;
  r.last_heartbeat_ms = now;
  json point = to_json(metrics);
  point["t_ms"] = now;
  point["agent_count"] = agent_count;
  r.history.push_back(std::move(point));
  while (r.history.size() > kMetricHistory)
    r.history.pop_front();
}

json Hub::record_json(const Record &r, std::int64_t now) const {
  const auto age = std::chrono::milliseconds(now - r.last_heartbeat_ms);
  return json{{"server_id", r.server_id},
              {"addr", r.addr.str()},
              {"mode", r.mode},
              {"capacity", r.capacity},
              {"agent_count", r.agent_count},
              {"status", to_string(health_for_age(age))},
              {"metrics", to_json(r.metrics)},
              {"last_heartbeat", now_millis() - age.count()},
              {"heartbeat_age_ms", age.count()}};
}

json Hub::servers() const {
  const std::int64_t now = opts_.clock();
  std::lock_guard lock(mu_);
  json out = json::array();
  for (const auto &[id, r] : records_)
    out.push_back(record_json(r, now));
  return out;
}

ServerHealth Hub::health(const std::string &server_id) const {
  const std::int64_t now = opts_.clock();
  std::lock_guard lock(mu_);
  auto it = records_.find(server_id);
  if (it == records_.end())
    fail(ErrorCode::ServerNotFound, "unknown server " + server_id);
  return health_for_age(std::chrono::milliseconds(now - it->second.last_heartbeat_ms));
}

json Hub::metrics_history(const std::string &server_id) const {
  std::lock_guard lock(mu_);
  auto it = records_.find(server_id);
  if (it == records_.end())
    fail(ErrorCode::ServerNotFound, "unknown server " + server_id);
  return json(std::vector<json>(it->second.history.begin(), it->second.history.end()));
}

Endpoint Hub::live_endpoint(const std::string &server_id) const {
  const std::int64_t now = opts_.clock();
  std::lock_guard lock(mu_);
  auto it = records_.find(server_id);
  if (it == records_.end())
    fail(ErrorCode::ServerNotFound, "unknown server " + server_id);
  const auto h = health_for_age(std::chrono::milliseconds(now - it->second.last_heartbeat_ms));
  if (h == ServerHealth::Dead)
    fail(ErrorCode::ServerDead, "server " + server_id + " missed its heartbeats");
  return it->second.addr;
}

json Hub::list_agents(const std::string &server_id) {
  const Endpoint ep = live_endpoint(server_id);
  return rpc_call(ep, RpcRequest::make(RpcKind::ListAgents, json::object()), kControlTimeout)
      .value()
      .at("agents");
}

AgentRef Hub::create_remote_agent(const std::string &server_id, const AgentDef &def) {
  // Servers share the built-in registry, so unknown kinds are rejected here
  // rather than as an opaque remote failure.
  if (!AgentRegistry::global().contains(def.kind))
    fail(ErrorCode::UnknownAgentKind, "unknown agent kind '" + def.kind + "'");
  const std::int64_t now = opts_.clock();
  Endpoint ep;
  {
    std::lock_guard lock(mu_);
    auto it = records_.find(server_id);
    if (it == records_.end())
      fail(ErrorCode::ServerNotFound, "unknown server " + server_id);
    const auto h =
        health_for_age(std::chrono::milliseconds(now - it->second.last_heartbeat_ms));
    if (h != ServerHealth::Alive)
      fail(ErrorCode::ServerDead, "server " + server_id + " is " + std::string(to_string(h)));
    ep = it->second.addr;
  }
  const json payload =
      rpc_call(ep, RpcRequest::make(RpcKind::CreateAgent, json{{"def", to_json(def)}}),
               kControlTimeout)
          .value();
  return AgentRef::remote(payload.at("agent_id").get<std::string>(), def.name, ep);
}

void Hub::stop_remote_agent(const std::string &server_id, const std::string &agent_id) {
  const Endpoint ep = live_endpoint(server_id);
  rpc_call(ep, RpcRequest::make(RpcKind::StopAgent, json{{"agent_id", agent_id}}),
           kControlTimeout)
      .value();
}

void Hub::add_round(const std::string &sim_id, json round) {
  std::lock_guard lock(mu_);
  rounds_[sim_id].push_back(std::move(round));
}

json Hub::rounds(const std::string &sim_id) const {
  std::lock_guard lock(mu_);
  auto it = rounds_.find(sim_id);
  return it == rounds_.end() ? json::array() : json(it->second);
}

namespace {

int http_status(ErrorCode code) {
  switch (code) {
  case ErrorCode::InvalidArgument:
  case ErrorCode::MalformedPayload:
  case ErrorCode::UnknownAgentKind:
    return 400;
  case ErrorCode::ServerNotFound:
  case ErrorCode::AgentNotFound:
  case ErrorCode::TaskNotFound:
    return 404;
  case ErrorCode::DuplicateAddress:
  case ErrorCode::CapacityExceeded:
    return 409;
  case ErrorCode::ServerDead:
  case ErrorCode::ConnectionRefused:
  case ErrorCode::ConnectionClosed:
  case ErrorCode::Timeout:
    return 503;
  default:
    return 500;
  }
}

void reply_ok(httplib::Response &res, json data) {
  res.status = 200;
  res.set_content(json{{"ok", true}, {"data", std::move(data)}}.dump(), "application/json");
}

void reply_error(httplib::Response &res, ErrorCode code, const std::string &message) {
  res.status = http_status(code);
  res.set_content(json{{"ok", false},
                       {"error", {{"code", error_code_name(code)}, {"message", message}}}}
                      .dump(),
                  "application/json");
}

template <class F> httplib::Server::Handler guarded(F f) {
  return [f](const httplib::Request &req, httplib::Response &res) {
    try {
      f(req, res);
    } catch (const Error &e) {
      reply_error(res, e.code(), e.what());
    } catch (const json::exception &e) {
      reply_error(res, ErrorCode::MalformedPayload, e.what());
    } catch (const std::exception &e) {
      reply_error(res, ErrorCode::Internal, e.what());
    }
  };
}

json body_json(const httplib::Request &req) {
  if (req.body.empty())
    return json::object();
  return json::parse(req.body);
}

} // namespace

void Hub::install_routes() {
  auto &svr = http_->server;

  svr.Post("/api/register", guarded([this](const httplib::Request &req, httplib::Response &res) {
             const json j = body_json(req);
             const std::string id =
                 register_server(Endpoint::parse(j.at("addr").get<std::string>()),
                                 j.value("mode", std::string("many_to_one")),
                                 j.value("capacity", 1));
             reply_ok(res, json{{"server_id", id}});
           }));

  svr.Post("/api/heartbeat",
           guarded([this](const httplib::Request &req, httplib::Response &res) {
             const json j = body_json(req);
             heartbeat(j.at("server_id").get<std::string>(), j.value("agent_count", 0),
                       process_metrics_from_json(j.value("metrics", json::object())));
             reply_ok(res, json::object());
           }));

  svr.Get("/api/servers", guarded([this](const httplib::Request &, httplib::Response &res) {
            reply_ok(res, servers());
          }));

  svr.Get(R"(/api/servers/([^/]+)/metrics)",
          guarded([this](const httplib::Request &req, httplib::Response &res) {
            reply_ok(res, metrics_history(req.matches[1]));
          }));

  svr.Get(R"(/api/servers/([^/]+)/agents)",
          guarded([this](const httplib::Request &req, httplib::Response &res) {
            reply_ok(res, list_agents(req.matches[1]));
          }));

  svr.Post(R"(/api/servers/([^/]+)/agents)",
           guarded([this](const httplib::Request &req, httplib::Response &res) {
             const AgentRef ref = create_remote_agent(req.matches[1], agent_def_from_json(body_json(req)));
             reply_ok(res, json{{"agent_id", ref.agent_id()}});
           }));

  svr.Delete(R"(/api/servers/([^/]+)/agents/([^/]+))",
             guarded([this](const httplib::Request &req, httplib::Response &res) {
               stop_remote_agent(req.matches[1], req.matches[2]);
               reply_ok(res, json::object());
             }));

  svr.Get(R"(/api/simulations/([^/]+)/rounds)",
          guarded([this](const httplib::Request &req, httplib::Response &res) {
            reply_ok(res, rounds(req.matches[1]));
          }));

  svr.Post(R"(/api/simulations/([^/]+)/rounds)",
           guarded([this](const httplib::Request &req, httplib::Response &res) {
             json round = body_json(req);
             if (!round.is_object())
               fail(ErrorCode::MalformedPayload, "round must be an object");
             add_round(req.matches[1], std::move(round));
             reply_ok(res, json::object());
           }));

  if (!opts_.ui_dir.empty() && !svr.set_mount_point("/ui", opts_.ui_dir))
    spdlog::warn("hub: cannot serve {} under /ui", opts_.ui_dir);
}

namespace {

std::string normalize_url(const std::string &url) {
  return url.find("://") == std::string::npos ? "http://" + url : url;
}

httplib::Client make_client(const std::string &hub_url) {
  httplib::Client client(normalize_url(hub_url));
  client.set_connection_timeout(2, 0);
  client.set_read_timeout(5, 0);
  client.set_write_timeout(5, 0);
  return client;
}

} // namespace

HubReporter::HubReporter(std::string hub_url, json registration,
                         std::function<int()> agent_count, std::chrono::milliseconds interval)
    : hub_url_(std::move(hub_url)), registration_(std::move(registration)),
      agent_count_(std::move(agent_count)), interval_(interval) {}

HubReporter::~HubReporter() { stop(); }

void HubReporter::start() {
  std::lock_guard lock(mu_);
  if (thread_.joinable())
    return;
  stopping_ = false;
  thread_ = std::thread([this] { loop(); });
}

void HubReporter::stop() {
  {
    std::lock_guard lock(mu_);
    stopping_ = true;
  }
  cv_.notify_all();
  if (thread_.joinable())
    thread_.join();
}

std::string HubReporter::server_id() const {
  std::lock_guard lock(mu_);
  return server_id_;
}

bool HubReporter::try_register() {
  auto client = make_client(hub_url_);
  auto res = client.Post("/api/register", registration_.dump(), "application/json");
  if (!res) {
    spdlog::warn("hub {} unreachable: {}", hub_url_, httplib::to_string(res.error()));
    return false;
  }
  if (res->status != 200) {
    spdlog::warn("hub registration refused (HTTP {}): {}", res->status, res->body);
    return false;
  }
  const json j = json::parse(res->body, nullptr, false);
  if (j.is_discarded() || !j.contains("data"))
    return false;
  std::lock_guard lock(mu_);
  server_id_ = j["data"].value("server_id", std::string());
  spdlog::info("registered with hub {} as {}", hub_url_, server_id_);
  return !server_id_.empty();
}

void HubReporter::send_heartbeat() {
  const std::string id = server_id();
  json body{{"server_id", id},
            {"agent_count", agent_count_ ? agent_count_() : 0},
            {"metrics", to_json(sampler_.sample())}};
  auto client = make_client(hub_url_);
  auto res = client.Post("/api/heartbeat", body.dump(), "application/json");
  if (!res) {
    spdlog::debug("heartbeat to {} failed: {}", hub_url_, httplib::to_string(res.error()));
    return;
  }
  if (res->status == 404) {
    {
      std::lock_guard lock(mu_);
      server_id_.clear();
    }
    if (try_register())
      send_heartbeat();
  }
}

void HubReporter::loop() {
  for (;;) {
    try {
      if (server_id().empty()) {
        if (try_register())
          send_heartbeat();
      } else {
        send_heartbeat();
      }
    } catch (const std::exception &e) {
      spdlog::warn("hub reporter: {}", e.what());
    }
    std::unique_lock lock(mu_);
    if (cv_.wait_for(lock, interval_, [this] { return stopping_; }))
      return;
  }
}

void post_round_progress(const std::string &hub_url, const std::string &sim_id,
                         const json &round) {
  auto client = make_client(hub_url);
  auto res = client.Post("/api/simulations/" + sim_id + "/rounds", round.dump(),
                         "application/json");
  if (!res)
    fail(ErrorCode::ConnectionRefused, "hub unreachable: " + httplib::to_string(res.error()));
  if (res->status != 200)
    fail(ErrorCode::Internal, "hub answered HTTP " + std::to_string(res->status));
}

} // namespace agentsim
