#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>

#include "agentsim/agent.hpp"
#include "agentsim/runtime.hpp"

namespace agentsim {

struct ProcessMetrics {
  double cpu_percent = 0;
  std::int64_t mem_bytes = 0;
  std::int64_t uptime_s = 0;
};

json to_json(const ProcessMetrics &m);
ProcessMetrics process_metrics_from_json(const json &j);

// CPU share since the previous sample, resident memory and uptime of this
// process.
class MetricsSampler {
public:
  MetricsSampler();
  ProcessMetrics sample();

private:
  std::chrono::steady_clock::time_point started_;
  std::chrono::steady_clock::time_point last_wall_;
  double last_cpu_s_ = 0;
};

enum class ServerHealth { Alive, Stale, Dead };

std::string_view to_string(ServerHealth h) noexcept;
// alive below 10 s since the last heartbeat, stale below 30 s, dead after.
ServerHealth health_for_age(std::chrono::milliseconds age) noexcept;

// Registry of agent servers with an HTTP JSON API. Every response is
// {"ok":true,"data":...} or {"ok":false,"error":{"code","message"}}.
//   POST   /api/register                      {addr, mode, capacity} -> {server_id}
//   POST   /api/heartbeat                     {server_id, agent_count, metrics}
//   GET    /api/servers
//   GET    /api/servers/{id}/metrics
//   GET    /api/servers/{id}/agents
//   POST   /api/servers/{id}/agents           AgentDef -> {agent_id}
//   DELETE /api/servers/{id}/agents/{agent_id}
//   GET    /api/simulations/{sim_id}/rounds
//   POST   /api/simulations/{sim_id}/rounds   one round's stats and target
// State is in memory only; servers re-register after a hub restart.
class Hub {
public:
  using Clock = std::function<std::int64_t()>; // milliseconds

  struct Options {
    std::string host = "127.0.0.1";
    int port = 0;
    std::string ui_dir; // served under /ui when set
    Clock clock;        // defaults to a steady clock
  };

  static constexpr std::size_t kMetricHistory = 1000;

  explicit Hub(Options opts);
  ~Hub();

  Hub(const Hub &) = delete;
  Hub &operator=(const Hub &) = delete;

  void start(); // throws BindFailure
  void stop();
  void wait();
  int port() const noexcept { return port_; }

  std::string register_server(const Endpoint &addr, const std::string &mode,
                              int capacity); // DuplicateAddress
  void heartbeat(const std::string &server_id, int agent_count,
                 const ProcessMetrics &metrics); // ServerNotFound
  json servers() const;
  ServerHealth health(const std::string &server_id) const;
  json metrics_history(const std::string &server_id) const;

  json list_agents(const std::string &server_id);
  // Throws ServerNotFound, ServerDead, CapacityExceeded.
  AgentRef create_remote_agent(const std::string &server_id, const AgentDef &def);
  void stop_remote_agent(const std::string &server_id, const std::string &agent_id);

  void add_round(const std::string &sim_id, json round);
  json rounds(const std::string &sim_id) const;

private:
  struct Record {
    std::string server_id;
    Endpoint addr;
    std::string mode;
    int capacity = 0;
    int agent_count = 0;
    ProcessMetrics metrics;
    std::int64_t registered_ms = 0;
    std::int64_t last_heartbeat_ms = 0;
    std::deque<json> history;
  };

  json record_json(const Record &r, std::int64_t now) const;
  Endpoint live_endpoint(const std::string &server_id) const;
  void install_routes();

  Options opts_;
  struct Http;
  std::unique_ptr<Http> http_;
  int port_ = 0;
  std::thread listener_;

  mutable std::mutex mu_;
  std::map<std::string, Record> records_;
  std::map<std::string, std::vector<json>> rounds_;

  std::mutex run_mu_;
  std::condition_variable run_cv_;
  bool running_ = false;
};

// Server-side companion: registers with the hub, then heartbeats every
// interval. A 404 on heartbeat (hub restarted) triggers re-registration.
class HubReporter {
public:
  HubReporter(std::string hub_url, json registration, std::function<int()> agent_count,
              std::chrono::milliseconds interval);
  ~HubReporter();

  void start();
  void stop();
  std::string server_id() const;

private:
  void loop();
  bool try_register();
  void send_heartbeat();

  std::string hub_url_;
  json registration_;
  std::function<int()> agent_count_;
  std::chrono::milliseconds interval_;
  MetricsSampler sampler_;

  mutable std::mutex mu_;
  std::condition_variable cv_;
  bool stopping_ = false;
  std::string server_id_;
  std::thread thread_;
};

// Posts one round's progress to {hub}/api/simulations/{sim_id}/rounds.
void post_round_progress(const std::string &hub_url, const std::string &sim_id,
                         const json &round);

} // namespace agentsim
