#pragma once

#include <chrono>
#include <memory>
#include <string>

#include "agentsim/agent.hpp"
#include "agentsim/wire.hpp"

namespace agentsim {

enum class ServerMode { OneToOne, ManyToOne };

std::string_view to_string(ServerMode mode) noexcept;
ServerMode server_mode_from_string(std::string_view text); // accepts - or _

struct ServerConfig {
  Endpoint listen{"127.0.0.1", 0};
  ServerMode mode = ServerMode::ManyToOne;
  int capacity = 1024;
  int workers = 0; // 0 selects 4 x logical CPUs
  std::string hub_url; // empty: do not register with a hub
  // Executable started once per agent in one_to_one mode; it must accept the
  // agent-server command line.
  std::string child_executable;
  // Set for servers started as one_to_one children: print "PORT <n>" on
  // stdout once listening and exit when the parent dies.
  bool child_mode = false;
  std::chrono::milliseconds heartbeat_interval{5000};
  std::chrono::milliseconds task_ttl{10 * 60 * 1000};

  int effective_workers() const;
  void validate() const; // throws InvalidArgument
};

json to_json(const ServerConfig &cfg);
ServerConfig server_config_from_json(const json &j);

class AgentServer {
public:
  explicit AgentServer(ServerConfig cfg,
                       const AgentRegistry &registry = AgentRegistry::global());
  ~AgentServer();

  AgentServer(const AgentServer &) = delete;
  AgentServer &operator=(const AgentServer &) = delete;

  void start(); // throws BindFailure
  void stop();
  // Blocks until stop() is called from another thread.
  void wait();

  int port() const;
  Endpoint endpoint() const;
  json status() const;

private:
  struct Impl;
  std::shared_ptr<Impl> impl_;
};

// Blocking service loop; blocks SIGTERM and SIGINT and returns after either
// arrives.
void run_server(const ServerConfig &cfg);

} // namespace agentsim
