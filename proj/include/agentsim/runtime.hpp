#pragma once

#include <chrono>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "agentsim/agent.hpp"
#include "agentsim/rpc.hpp"

namespace agentsim {

enum class Location { Local, Remote };

namespace detail {
struct LocalActor;
}

// Handle to a local agent or a proxy for a remote one. Proxies are stateless;
// copies refer to the same agent.
class AgentRef {
public:
  static AgentRef remote(std::string agent_id, std::string name, Endpoint server);

  const std::string &agent_id() const noexcept { return id_; }
  const std::string &name() const noexcept { return name_; }
  Location location() const noexcept { return server_ ? Location::Remote : Location::Local; }
  bool is_proxy() const noexcept { return server_.has_value(); }
  const std::optional<Endpoint> &server() const noexcept { return server_; }

  // The definition this agent was spawned from (local refs only).
  const AgentDef &def() const;

  // Runs fn on the hosted agent under its mailbox lock. Local refs only.
  void with_local(const std::function<void(Agent &)> &fn) const;

private:
  friend AgentRef spawn_local(const AgentDef &, const AgentRegistry &);
  friend Payload call(const AgentRef &, std::span<const Payload>);
  friend void notify(const AgentRef &, const Message &);
  friend void stop(const AgentRef &);

  AgentRef() = default;

  std::string id_;
  std::string name_;
  std::optional<Endpoint> server_;
  std::shared_ptr<detail::LocalActor> local_;
};

AgentRef spawn_local(const AgentDef &def,
                     const AgentRegistry &registry = AgentRegistry::global());

// Ships the agent's definition to `server` and returns a proxy. The hosted
// copy starts from the definition, not from the local agent's state.
AgentRef to_dist(const AgentRef &ref, const Endpoint &server);

// Local refs compute and return a Message. Proxies return a Placeholder as soon
// as the server has queued the task.
Payload call(const AgentRef &ref, std::span<const Payload> inputs);
Payload call(const AgentRef &ref, const Payload &input);

// Delivers a message to Agent::observe. Proxies do not wait for delivery;
// per-agent ordering with later calls is preserved by the mailbox.
void notify(const AgentRef &ref, const Message &msg);

// Local refs stop accepting calls; proxies issue stop_agent.
void stop(const AgentRef &ref);

// Blocks until the task completes. The first result is cached in the
// placeholder; later calls perform no RPC.
Message resolve(const Placeholder &p, std::chrono::milliseconds timeout = kCallTimeout);
Message resolve(const Payload &p, std::chrono::milliseconds timeout = kCallTimeout);

} // namespace agentsim
