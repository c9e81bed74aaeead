#pragma once

#include <functional>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "agentsim/message.hpp"

namespace agentsim {

struct AgentDef {
  std::string name;
  std::string kind; // key into the AgentRegistry
  json params = json::object();
};

json to_json(const AgentDef &def);
AgentDef agent_def_from_json(const json &j); // throws MalformedPayload

class Agent {
public:
  explicit Agent(AgentDef def) : def_(std::move(def)) {}
  virtual ~Agent() = default;

  const AgentDef &def() const noexcept { return def_; }
  const std::string &name() const noexcept { return def_.name; }

  // Called with every placeholder input already resolved. Never invoked
  // concurrently for the same agent.
  virtual Message reply(std::span<const Message> inputs) = 0;

  // Receives a notification without producing a reply.
  virtual void observe(const Message &msg) { memory_.push_back(msg); }

  const std::vector<Message> &memory() const noexcept { return memory_; }

protected:
  std::vector<Message> memory_;

private:
  AgentDef def_;
};

class AgentRegistry {
public:
  using Factory = std::function<std::unique_ptr<Agent>(const AgentDef &)>;

  // Pre-populated with the built-in kinds: echo, sleep, function, player,
  // environment.
  static AgentRegistry &global();

  void add(const std::string &kind, Factory factory);
  bool contains(const std::string &kind) const;
  std::unique_ptr<Agent> create(const AgentDef &def) const; // throws UnknownAgentKind

private:
  mutable std::mutex mu_;
  std::unordered_map<std::string, Factory> factories_;
};

// Replies with the content of its last input.
class EchoAgent : public Agent {
public:
  using Agent::Agent;
  Message reply(std::span<const Message> inputs) override;
};

// Sleeps params.seconds (default 1.0), then echoes.
class SleepAgent : public Agent {
public:
  using Agent::Agent;
  Message reply(std::span<const Message> inputs) override;
};

// Pure function of its inputs: "<tag>(<c1>,<c2>,...)" over input contents.
// Used to build dataflow graphs whose outputs can be compared across
// deployments.
class FunctionAgent : public Agent {
public:
  using Agent::Agent;
  Message reply(std::span<const Message> inputs) override;
};

} // namespace agentsim
