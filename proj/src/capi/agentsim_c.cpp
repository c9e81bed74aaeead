#include "agentsim/agentsim.h"

#include <csignal>
#include <cstring>
#include <memory>
#include <string>

#include <pthread.h>
#include <spdlog/spdlog.h>

#include "agentsim/error.hpp"
#include "agentsim/game.hpp"
#include "agentsim/hub.hpp"
#include "agentsim/population.hpp"
#include "agentsim/runtime.hpp"
#include "agentsim/server.hpp"

using agentsim::ErrorCode;

struct as_server {
  std::unique_ptr<agentsim::AgentServer> impl;
};

struct as_hub {
  std::unique_ptr<agentsim::Hub> impl;
};

struct as_agent {
  agentsim::AgentRef ref;
};

namespace {

thread_local std::string last_error;

as_status record(ErrorCode code, const std::string &message) {
  last_error = message;
  return static_cast<as_status>(code);
}

template <class F> as_status guarded(F &&f) noexcept {
  try {
    f();
    last_error.clear();
    return AS_OK;
  } catch (const agentsim::Error &e) {
    return record(e.code(), e.what());
  } catch (const agentsim::json::exception &e) {
    return record(ErrorCode::MalformedPayload, e.what());
  } catch (const std::bad_alloc &) {
    return record(ErrorCode::Internal, "out of memory");
  } catch (const std::exception &e) {
    return record(ErrorCode::Internal, e.what());
  } catch (...) {
    return record(ErrorCode::Internal, "unknown error");
  }
}

void require(const void *p, const char *what) {
  if (p == nullptr)
    agentsim::fail(ErrorCode::InvalidArgument, std::string(what) + " is null");
}

agentsim::json parse_json(const char *text, const char *what) {
  require(text, what);
  return agentsim::json::parse(text);
}

char *dup_string(const std::string &s) {
  char *out = static_cast<char *>(std::malloc(s.size() + 1));
  if (out == nullptr)
    throw std::bad_alloc();
  std::memcpy(out, s.data(), s.size() + 1);
  return out;
}

sigset_t block_termination() {
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGTERM);
  sigaddset(&set, SIGINT);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);
  return set;
}

agentsim::Hub::Options hub_options(const char *host, int port, const char *ui_dir) {
  agentsim::Hub::Options opts;
  if (host != nullptr)
    opts.host = host;
  opts.port = port;
  if (ui_dir != nullptr)
    opts.ui_dir = ui_dir;
  return opts;
}

} // namespace

extern "C" {

const char *as_status_name(as_status status) {
  // Names are string literals, so the view's data is NUL terminated.
  return agentsim::error_code_name(static_cast<ErrorCode>(status)).data();
}

const char *as_last_error(void) { return last_error.c_str(); }

void as_string_free(char *s) { std::free(s); }

as_status as_set_log_level(const char *level) {
  return guarded([&] {
    require(level, "level");
    const auto lvl = spdlog::level::from_str(level);
    if (lvl == spdlog::level::off && std::strcmp(level, "off") != 0)
      agentsim::fail(ErrorCode::InvalidArgument, std::string("unknown log level ") + level);
    spdlog::set_level(lvl);
  });
}

as_status as_server_start(const char *config_json, as_server **out) {
  return guarded([&] {
    require(out, "out");
    auto cfg = agentsim::server_config_from_json(parse_json(config_json, "config_json"));
    auto server = std::make_unique<as_server>();
    server->impl = std::make_unique<agentsim::AgentServer>(std::move(cfg));
    server->impl->start();
    *out = server.release();
  });
}

int as_server_port(const as_server *server) {
  return server != nullptr ? server->impl->port() : -1;
}

as_status as_server_status(const as_server *server, char **out_json) {
  return guarded([&] {
    require(server, "server");
    require(out_json, "out_json");
    *out_json = dup_string(server->impl->status().dump());
  });
}

as_status as_server_wait(as_server *server) {
  return guarded([&] {
    require(server, "server");
    server->impl->wait();
  });
}

as_status as_server_stop(as_server *server) {
  return guarded([&] {
    require(server, "server");
    server->impl->stop();
  });
}

void as_server_free(as_server *server) { delete server; }

as_status as_server_run(const char *config_json) {
  return guarded([&] {
    agentsim::run_server(agentsim::server_config_from_json(parse_json(config_json, "config_json")));
  });
}

as_status as_hub_start(const char *host, int port, const char *ui_dir, as_hub **out) {
  return guarded([&] {
    require(out, "out");
    auto hub = std::make_unique<as_hub>();
    hub->impl = std::make_unique<agentsim::Hub>(hub_options(host, port, ui_dir));
    hub->impl->start();
    *out = hub.release();
  });
}

int as_hub_port(const as_hub *hub) { return hub != nullptr ? hub->impl->port() : -1; }

as_status as_hub_stop(as_hub *hub) {
  return guarded([&] {
    require(hub, "hub");
    hub->impl->stop();
  });
}

void as_hub_free(as_hub *hub) { delete hub; }

as_status as_hub_run(const char *host, int port, const char *ui_dir) {
  return guarded([&] {
    sigset_t set = block_termination();
    agentsim::Hub hub(hub_options(host, port, ui_dir));
    hub.start();
    int sig = 0;
    sigwait(&set, &sig);
    spdlog::info("received signal {}, shutting down", sig);
    hub.stop();
  });
}

as_status as_agent_spawn(const char *def_json, as_agent **out) {
  return guarded([&] {
    require(out, "out");
    const auto def = agentsim::agent_def_from_json(parse_json(def_json, "def_json"));
    *out = new as_agent{agentsim::spawn_local(def)};
  });
}

as_status as_agent_to_dist(const as_agent *agent, const char *addr, as_agent **out) {
  return guarded([&] {
    require(agent, "agent");
    require(addr, "addr");
    require(out, "out");
    *out = new as_agent{agentsim::to_dist(agent->ref, agentsim::Endpoint::parse(addr))};
  });
}

as_status as_agent_call(const as_agent *agent, const char *input_json, char **out_json) {
  return guarded([&] {
    require(agent, "agent");
    require(out_json, "out_json");
    const auto j = parse_json(input_json, "input_json");
    const agentsim::Message input =
        j.is_string() ? agentsim::Message("user", agentsim::Role::User, j.get<std::string>())
                      : agentsim::message_from_json(j);
    const agentsim::Message reply = agentsim::resolve(agentsim::call(agent->ref, input));
    *out_json = dup_string(agentsim::to_json(reply).dump());
  });
}

as_status as_agent_stop(const as_agent *agent) {
  return guarded([&] {
    require(agent, "agent");
    agentsim::stop(agent->ref);
  });
}

void as_agent_free(as_agent *agent) { delete agent; }

as_status as_simulation_run(const char *config_json, char **out_json) {
  return guarded([&] {
    require(out_json, "out_json");
    const auto cfg = agentsim::simulation_config_from_json(parse_json(config_json, "config_json"));
    *out_json = dup_string(agentsim::to_json(agentsim::run_simulation(cfg)).dump());
  });
}

as_status as_population_sample(const char *yaml, uint64_t seed, int exact_quota,
                               char **out_json) {
  return guarded([&] {
    require(yaml, "yaml");
    require(out_json, "out_json");
    const auto cfg = agentsim::parse_population_config(yaml);
    const auto profiles = agentsim::sample_profiles(
        cfg, seed,
        exact_quota ? agentsim::SamplingMode::ExactQuota : agentsim::SamplingMode::Independent);
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (const auto &p : profiles) {
      nlohmann::ordered_json aspects = nlohmann::ordered_json::object();
      for (const auto &[k, v] : p.aspects)
        aspects[k] = v;
      arr.push_back({{"profile_id", p.profile_id}, {"aspects", std::move(aspects)}});
    }
    *out_json = dup_string(arr.dump());
  });
}

} // extern "C"
