#include "agentsim/agent.hpp"

#include <thread>

#include "agentsim/environment.hpp"
#include "agentsim/error.hpp"
#include "agentsim/player.hpp"

namespace agentsim {

json to_json(const AgentDef &def) {
  return json{{"name", def.name}, {"kind", def.kind}, {"params", def.params}};
}

AgentDef agent_def_from_json(const json &j) {
  if (!j.is_object() || !j.contains("name") || !j["name"].is_string() ||
      !j.contains("kind") || !j["kind"].is_string())
    fail(ErrorCode::MalformedPayload, "agent def needs string name and kind");
  AgentDef def{j["name"].get<std::string>(), j["kind"].get<std::string>(),
               j.value("params", json::object())};
  if (!def.params.is_object())
    fail(ErrorCode::MalformedPayload, "agent def params must be an object");
  return def;
}

AgentRegistry &AgentRegistry::global() {
  static AgentRegistry *registry = [] {
    auto *r = new AgentRegistry;
    r->add("echo", [](const AgentDef &d) { return std::make_unique<EchoAgent>(d); });
    r->add("sleep", [](const AgentDef &d) { return std::make_unique<SleepAgent>(d); });
    r->add("function", [](const AgentDef &d) { return std::make_unique<FunctionAgent>(d); });
    r->add("player", make_player_agent);
    r->add("environment", make_environment_agent);
    return r;
  }();
  return *registry;
}

void AgentRegistry::add(const std::string &kind, Factory factory) {
  std::lock_guard lock(mu_);
  factories_[kind] = std::move(factory);
}

bool AgentRegistry::contains(const std::string &kind) const {
  std::lock_guard lock(mu_);
  return factories_.contains(kind);
}

std::unique_ptr<Agent> AgentRegistry::create(const AgentDef &def) const {
  Factory factory;
  {
    std::lock_guard lock(mu_);
    auto it = factories_.find(def.kind);
    if (it == factories_.end())
      fail(ErrorCode::UnknownAgentKind, "unknown agent kind '" + def.kind + "'");
    factory = it->second;
  }
  return factory(def);
}

Message EchoAgent::reply(std::span<const Message> inputs) {
  std::string content = inputs.empty() ? std::string() : inputs.back().content();
  return Message(name(), Role::Assistant, std::move(content));
}

Message SleepAgent::reply(std::span<const Message> inputs) {
  const double seconds = def().params.value("seconds", 1.0);
  std::this_thread::sleep_for(std::chrono::duration<double>(seconds));
  std::string content = inputs.empty() ? std::string() : inputs.back().content();
  return Message(name(), Role::Assistant, std::move(content));
}

Message FunctionAgent::reply(std::span<const Message> inputs) {
  std::string out = def().params.value("tag", name()) + "(";
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (i)
      out += ",";
    out += inputs[i].content();
  }
  out += ")";
  if (const int ms = def().params.value("sleep_ms", 0); ms > 0)
    std::this_thread::sleep_for(std::chrono::milliseconds(ms));
  return Message(name(), Role::Assistant, std::move(out));
}

} // namespace agentsim
