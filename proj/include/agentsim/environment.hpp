#pragma once

#include <atomic>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <string>
#include <variant>
#include <vector>

#include "agentsim/agent.hpp"
#include "agentsim/runtime.hpp"

namespace agentsim {

// What a listener sees after a committed invocation.
struct EnvEvent {
  std::string fn_name;
  json args;
  json result;
  // key -> {old, new} for every key the invocation wrote; old is null when
  // the key did not exist.
  std::map<std::string, std::pair<json, json>> changes;
  const std::map<std::string, json> *state = nullptr; // post-commit snapshot
};

// Declarative predicates can cross process boundaries; Custom cannot.
struct Predicate {
  enum class Kind { Always, KeyEquals, Changed, ArgContains, Mentions, Custom };

  Kind kind = Kind::Always;
  std::string key;    // KeyEquals, Changed
  json value;         // KeyEquals
  std::string arg;    // ArgContains, Mentions
  std::string needle; // ArgContains
  std::function<bool(const EnvEvent &)> custom;

  static Predicate always() { return {}; }
  static Predicate key_equals(std::string key, json value);
  static Predicate changed(std::string key);
  static Predicate arg_contains(std::string arg, std::string needle);
  // Holds per target: the string argument mentions the target's name.
  static Predicate mentions(std::string arg);
  static Predicate custom_fn(std::function<bool(const EnvEvent &)> fn);

  // For Mentions the target name is consulted; others ignore it.
  bool holds(const EnvEvent &ev, const std::string &target_name) const;
};

json to_json(const Predicate &p); // throws InvalidArgument for Custom
Predicate predicate_from_json(const json &j);

struct Listener {
  std::string listener_id;
  std::string fn_name;
  Predicate predicate;
  std::vector<AgentRef> targets;
  // Placeholders: {fn}, {result}, {new:KEY}, {arg:NAME}. Empty selects a JSON
  // rendering of the event.
  std::string message_template;
};

// Read/write view handed to registered functions. Writes land in an overlay
// that is committed only if the function returns normally.
class EnvTransaction {
public:
  bool contains(const std::string &key) const;
  json get(const std::string &key) const; // throws KeyNotFound
  void set(const std::string &key, json value);

private:
  friend class Environment;
  explicit EnvTransaction(const std::map<std::string, json> &base) : base_(base) {}

  const std::map<std::string, json> &base_;
  std::map<std::string, json> overlay_;
};

using EnvFunction = std::function<json(EnvTransaction &, const json &args)>;

class Environment;
using EnvChild = std::variant<AgentRef, std::shared_ptr<Environment>>;

class Environment : public std::enable_shared_from_this<Environment> {
public:
  static std::shared_ptr<Environment> create(std::string name);

  const std::string &env_id() const noexcept { return id_; }
  const std::string &name() const noexcept { return name_; }

  // Own state only.
  json get(const std::string &key) const; // throws KeyNotFound
  bool contains(const std::string &key) const;
  // Writes through the implicit "set" function (args {key, value}) and returns
  // the previous value, if any.
  std::optional<json> set(const std::string &key, json value);
  std::map<std::string, json> snapshot() const;

  void register_fn(const std::string &name, EnvFunction fn); // DuplicateFunction
  bool has_fn(const std::string &name) const;
  // Runs under the mutation lock, commits, then notifies listeners in
  // attachment order without holding the lock.
  json invoke(const std::string &fn_name, const json &args);

  // Returns the listener id. fn_name must be registered (or "set").
  std::string listen(const std::string &fn_name, Predicate predicate,
                     std::vector<AgentRef> targets, std::string message_template = {});
  void add_listener_target(const std::string &listener_id, const AgentRef &target);

  void add_child(EnvChild child); // throws CycleDetected
  std::vector<EnvChild> children() const;
  std::shared_ptr<Environment> parent() const;
  bool has_agent(const std::string &agent_id) const; // direct children only

  // Searches this environment, then each ancestor in turn.
  json lookup(const std::string &key) const; // throws KeyNotFound
  // The environment directly holding agent_id, searched through this subtree.
  std::shared_ptr<Environment> find_agent_env(const std::string &agent_id);

  std::uint64_t notifications_sent() const noexcept { return sent_.load(); }

private:
  explicit Environment(std::string name);

  std::string render(const Listener &l, const EnvEvent &ev) const;
  bool is_self_or_ancestor(const Environment *env) const;
  bool subtree_has_key(const std::string &key) const;
  friend json get_for_agent(const std::shared_ptr<Environment> &, const std::string &,
                            const std::string &);

  std::string id_;
  std::string name_;
  mutable std::shared_mutex mu_;
  std::map<std::string, json> state_;
  std::map<std::string, EnvFunction> functions_;
  std::vector<Listener> listeners_;
  std::vector<EnvChild> children_;
  std::weak_ptr<Environment> parent_;
  std::atomic<std::uint64_t> sent_{0};
};

// Reads key as the agent sees it: its own environment and that environment's
// ancestors. Keys held only by other branches raise AccessDenied; unknown
// keys raise KeyNotFound, as does an agent not attached under root.
json get_for_agent(const std::shared_ptr<Environment> &root, const std::string &agent_id,
                   const std::string &key);

// Environment hosted as an agent. Inputs carry JSON operations in their
// content:
//   {"op":"get","key":K}
//   {"op":"set","key":K,"value":V}
//   {"op":"invoke","fn":F,"args":{...}}
//   {"op":"listen","fn":F,"predicate":{...},"targets":[{agent_id,name,host,port}],
//    "template":T}
// Replies carry {"ok":true,"value":...} or {"ok":false,"error":{code,message}}.
// params.functions selects built-ins: "speak" (args {sender,text}, appends to
// the "chat" list) and "announce" (args {key,value}).
class EnvironmentAgent : public Agent {
public:
  explicit EnvironmentAgent(const AgentDef &def);

  Message reply(std::span<const Message> inputs) override;
  const std::shared_ptr<Environment> &environment() const noexcept { return env_; }

private:
  std::shared_ptr<Environment> env_;
};

std::unique_ptr<Agent> make_environment_agent(const AgentDef &def);

void register_builtin_env_fn(Environment &env, const std::string &name);

} // namespace agentsim
