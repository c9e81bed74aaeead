#include "agentsim/environment.hpp"

#include <cctype>
#include <mutex>

#include <spdlog/spdlog.h>

#include "agentsim/error.hpp"

namespace agentsim {

Predicate Predicate::key_equals(std::string key, json value) {
  Predicate p;
  p.kind = Kind::KeyEquals;
  p.key = std::move(key);
  p.value = std::move(value);
  return p;
}

Predicate Predicate::changed(std::string key) {
  Predicate p;
  p.kind = Kind::Changed;
  p.key = std::move(key);
  return p;
}

Predicate Predicate::arg_contains(std::string arg, std::string needle) {
  Predicate p;
  p.kind = Kind::ArgContains;
  p.arg = std::move(arg);
  p.needle = std::move(needle);
  return p;
}

Predicate Predicate::mentions(std::string arg) {
  Predicate p;
  p.kind = Kind::Mentions;
  p.arg = std::move(arg);
  return p;
}

Predicate Predicate::custom_fn(std::function<bool(const EnvEvent &)> fn) {
  Predicate p;
  p.kind = Kind::Custom;
  p.custom = std::move(fn);
  return p;
}

namespace {

std::string arg_text(const json &args, const std::string &name) {
  if (!args.is_object())
    return {};
  auto it = args.find(name);
  if (it == args.end())
    return {};
  return it->is_string() ? it->get<std::string>() : it->dump();
}

// Whole-word match so "Al" does not fire for "Alice".
bool mentions_name(const std::string &text, const std::string &name) {
  if (name.empty())
    return false;
  auto is_word = [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-';
  };
  for (std::size_t pos = text.find(name); pos != std::string::npos;
       pos = text.find(name, pos + 1)) {
    const bool left_ok = pos == 0 || !is_word(text[pos - 1]);
    const std::size_t end = pos + name.size();
    const bool right_ok = end >= text.size() || !is_word(text[end]);
    if (left_ok && right_ok)
      return true;
  }
  return false;
}

std::string scalar_text(const json &v) {
  if (v.is_string())
    return v.get<std::string>();
  if (v.is_number_float())
    return format_number(v.get<double>());
  return v.dump();
}

} // namespace

bool Predicate::holds(const EnvEvent &ev, const std::string &target_name) const {
  switch (kind) {
  case Kind::Always:
    return true;
  case Kind::KeyEquals: {
    if (!ev.state)
      return false;
    auto it = ev.state->find(key);
    return it != ev.state->end() && it->second == value;
  }
  case Kind::Changed: {
    auto it = ev.changes.find(key);
    return it != ev.changes.end() && it->second.first != it->second.second;
  }
  case Kind::ArgContains:
    return arg_text(ev.args, arg).find(needle) != std::string::npos;
  case Kind::Mentions:
    return mentions_name(arg_text(ev.args, arg), target_name);
  case Kind::Custom:
    return custom && custom(ev);
  }
  return false;
}

json to_json(const Predicate &p) {
  switch (p.kind) {
  case Predicate::Kind::Always:
    return json{{"type", "always"}};
  case Predicate::Kind::KeyEquals:
    return json{{"type", "key_equals"}, {"key", p.key}, {"value", p.value}};
  case Predicate::Kind::Changed:
    return json{{"type", "changed"}, {"key", p.key}};
  case Predicate::Kind::ArgContains:
    return json{{"type", "arg_contains"}, {"arg", p.arg}, {"needle", p.needle}};
  case Predicate::Kind::Mentions:
    return json{{"type", "mentions"}, {"arg", p.arg}};
  case Predicate::Kind::Custom:
    break;
  }
  fail(ErrorCode::InvalidArgument, "custom predicates cannot be serialized");
}

Predicate predicate_from_json(const json &j) {
  if (!j.is_object() || !j.contains("type") || !j["type"].is_string())
    fail(ErrorCode::MalformedPayload, "predicate needs a type");
  const std::string type = j["type"].get<std::string>();
  try {
    if (type == "always")
      return Predicate::always();
    if (type == "key_equals")
      return Predicate::key_equals(j.at("key").get<std::string>(), j.at("value"));
    if (type == "changed")
      return Predicate::changed(j.at("key").get<std::string>());
    if (type == "arg_contains")
      return Predicate::arg_contains(j.at("arg").get<std::string>(),
                                     j.at("needle").get<std::string>());
    if (type == "mentions")
      return Predicate::mentions(j.at("arg").get<std::string>());
  } catch (const json::exception &e) {
    fail(ErrorCode::MalformedPayload, std::string("bad predicate: ") + e.what());
  }
  fail(ErrorCode::MalformedPayload, "unknown predicate type '" + type + "'");
}

bool EnvTransaction::contains(const std::string &key) const {
  return overlay_.contains(key) || base_.contains(key);
}

json EnvTransaction::get(const std::string &key) const {
  if (auto it = overlay_.find(key); it != overlay_.end())
    return it->second;
  if (auto it = base_.find(key); it != base_.end())
    return it->second;
  fail(ErrorCode::KeyNotFound, "no key '" + key + "'");
}

void EnvTransaction::set(const std::string &key, json value) {
  overlay_[key] = std::move(value);
}

Environment::Environment(std::string name) : id_(new_uuid()), name_(std::move(name)) {}

std::shared_ptr<Environment> Environment::create(std::string name) {
  return std::shared_ptr<Environment>(new Environment(std::move(name)));
}

json Environment::get(const std::string &key) const {
  std::shared_lock lock(mu_);
  auto it = state_.find(key);
  if (it == state_.end())
    fail(ErrorCode::KeyNotFound, "environment " + name_ + " has no key '" + key + "'");
  return it->second;
}

bool Environment::contains(const std::string &key) const {
  std::shared_lock lock(mu_);
  return state_.contains(key);
}

std::map<std::string, json> Environment::snapshot() const {
  std::shared_lock lock(mu_);
  return state_;
}

void Environment::register_fn(const std::string &name, EnvFunction fn) {
  std::unique_lock lock(mu_);
  if (name == "set" || functions_.contains(name))
    fail(ErrorCode::DuplicateFunction, "function '" + name + "' already registered");
  functions_.emplace(name, std::move(fn));
}

bool Environment::has_fn(const std::string &name) const {
  std::shared_lock lock(mu_);
  return name == "set" || functions_.contains(name);
}

namespace {

EnvFunction implicit_set() {
  return [](EnvTransaction &tx, const json &args) -> json {
    if (!args.is_object() || !args.contains("key") || !args["key"].is_string())
      fail(ErrorCode::InvalidArgument, "set needs a string key");
    const std::string key = args["key"].get<std::string>();
    json previous = tx.contains(key) ? tx.get(key) : json();
    tx.set(key, args.value("value", json()));
    return previous;
  };
}

} // namespace

json Environment::invoke(const std::string &fn_name, const json &args) {
  EnvEvent ev;
  ev.fn_name = fn_name;
  ev.args = args;
  std::map<std::string, json> post;
  std::vector<Listener> firing;
  {
    std::unique_lock lock(mu_);
    EnvFunction fn;
    if (fn_name == "set") {
      fn = implicit_set();
    } else {
      auto it = functions_.find(fn_name);
      if (it == functions_.end())
        fail(ErrorCode::UnknownFunction, "environment " + name_ + " has no function '" +
                                             fn_name + "'");
      fn = it->second;
    }
    EnvTransaction tx(state_);
    try {
      ev.result = fn(tx, args);
    } catch (const std::exception &e) {
      fail(ErrorCode::InvocationFailed, fn_name + ": " + e.what());
    }
    for (auto &[key, value] : tx.overlay_) {
      auto it = state_.find(key);
      json old = it == state_.end() ? json() : it->second;
      ev.changes.emplace(key, std::make_pair(std::move(old), value));
      state_[key] = std::move(value);
    }
    for (const auto &l : listeners_)
      if (l.fn_name == fn_name)
        firing.push_back(l);
    if (!firing.empty())
      post = state_;
  }
  ev.state = &post;

  for (const auto &l : firing) {
    for (const auto &target : l.targets) {
      if (!l.predicate.holds(ev, target.name()))
        continue;
      Metadata meta{{"fn_name", fn_name}, {"listener_id", l.listener_id},
                    {"env", name_}};
      Message msg(name_, Role::System, render(l, ev), std::move(meta));
      try {
        notify(target, msg);
        sent_.fetch_add(1);
      } catch (const std::exception &e) {
        spdlog::warn("listener {} could not reach {}: {}", l.listener_id, target.name(),
                     e.what());
      }
    }
  }
  return ev.result;
}

std::optional<json> Environment::set(const std::string &key, json value) {
  bool existed = false;
  {
    std::shared_lock lock(mu_);
    existed = state_.contains(key);
  }
  json previous = invoke("set", json{{"key", key}, {"value", std::move(value)}});
  // A concurrent writer may have created the key between the check and the
  // write; the returned value is authoritative in that case.
  if (!existed && previous.is_null())
    return std::nullopt;
  return previous;
}

std::string Environment::listen(const std::string &fn_name, Predicate predicate,
                                std::vector<AgentRef> targets,
                                std::string message_template) {
  std::unique_lock lock(mu_);
  if (fn_name != "set" && !functions_.contains(fn_name))
    fail(ErrorCode::UnknownFunction, "cannot listen on unknown function '" + fn_name + "'");
  Listener l{new_uuid(), fn_name, std::move(predicate), std::move(targets),
             std::move(message_template)};
  listeners_.push_back(l);
  return l.listener_id;
}

void Environment::add_listener_target(const std::string &listener_id,
                                      const AgentRef &target) {
  std::unique_lock lock(mu_);
  for (auto &l : listeners_) {
    if (l.listener_id == listener_id) {
      l.targets.push_back(target);
      return;
    }
  }
  fail(ErrorCode::InvalidArgument, "no listener " + listener_id);
}

std::string Environment::render(const Listener &l, const EnvEvent &ev) const {
  if (l.message_template.empty()) {
    json changes = json::object();
    for (const auto &[k, v] : ev.changes)
      changes[k] = v.second;
    return json{{"fn", ev.fn_name}, {"args", ev.args}, {"changes", changes}}.dump();
  }
  std::string out;
  const std::string &t = l.message_template;
  for (std::size_t i = 0; i < t.size();) {
    if (t[i] != '{') {
      out.push_back(t[i++]);
      continue;
    }
    const std::size_t close = t.find('}', i);
    if (close == std::string::npos) {
      out.append(t, i);
      break;
    }
    const std::string field = t.substr(i + 1, close - i - 1);
    if (field == "fn") {
      out += ev.fn_name;
    } else if (field == "result") {
      out += scalar_text(ev.result);
    } else if (field.rfind("new:", 0) == 0) {
      const std::string key = field.substr(4);
      if (auto it = ev.changes.find(key); it != ev.changes.end())
        out += scalar_text(it->second.second);
      else if (ev.state && ev.state->contains(key))
        out += scalar_text(ev.state->at(key));
    } else if (field.rfind("arg:", 0) == 0) {
      out += arg_text(ev.args, field.substr(4));
    } else {
      out.append(t, i, close - i + 1);
    }
    i = close + 1;
  }
  return out;
}

std::shared_ptr<Environment> Environment::parent() const {
  std::shared_lock lock(mu_);
  return parent_.lock();
}

bool Environment::is_self_or_ancestor(const Environment *env) const {
  for (auto cur = std::const_pointer_cast<Environment>(shared_from_this()); cur;
       cur = cur->parent())
    if (cur.get() == env)
      return true;
  return false;
}

void Environment::add_child(EnvChild child) {
  if (auto *env = std::get_if<std::shared_ptr<Environment>>(&child)) {
    if (!*env)
      fail(ErrorCode::InvalidArgument, "null child environment");
    if (is_self_or_ancestor(env->get()))
      fail(ErrorCode::CycleDetected,
           "adding " + (*env)->name() + " under " + name_ + " would create a cycle");
    {
      std::unique_lock lock((*env)->mu_);
      if (!(*env)->parent_.expired())
        fail(ErrorCode::CycleDetected, (*env)->name() + " already has a parent");
      (*env)->parent_ = weak_from_this();
    }
  }
  std::unique_lock lock(mu_);
  children_.push_back(std::move(child));
}

std::vector<EnvChild> Environment::children() const {
  std::shared_lock lock(mu_);
  return children_;
}

bool Environment::has_agent(const std::string &agent_id) const {
  std::shared_lock lock(mu_);
  for (const auto &c : children_)
    if (const auto *ref = std::get_if<AgentRef>(&c); ref && ref->agent_id() == agent_id)
      return true;
  return false;
}

json Environment::lookup(const std::string &key) const {
  for (auto cur = std::const_pointer_cast<Environment>(shared_from_this()); cur;
       cur = cur->parent()) {
    std::shared_lock lock(cur->mu_);
    if (auto it = cur->state_.find(key); it != cur->state_.end())
      return it->second;
  }
  fail(ErrorCode::KeyNotFound, "no key '" + key + "' visible from " + name_);
}

std::shared_ptr<Environment> Environment::find_agent_env(const std::string &agent_id) {
  if (has_agent(agent_id))
    return shared_from_this();
  for (const auto &c : children())
    if (const auto *env = std::get_if<std::shared_ptr<Environment>>(&c))
      if (auto found = (*env)->find_agent_env(agent_id))
        return found;
  return nullptr;
}

bool Environment::subtree_has_key(const std::string &key) const {
  if (contains(key))
    return true;
  for (const auto &c : children())
    if (const auto *env = std::get_if<std::shared_ptr<Environment>>(&c))
      if ((*env)->subtree_has_key(key))
        return true;
  return false;
}

json get_for_agent(const std::shared_ptr<Environment> &root, const std::string &agent_id,
                   const std::string &key) {
  auto home = root->find_agent_env(agent_id);
  if (!home)
    fail(ErrorCode::KeyNotFound, "agent " + agent_id + " is not attached under " +
                                     root->name());
  try {
    return home->lookup(key);
  } catch (const Error &e) {
    if (e.code() == ErrorCode::KeyNotFound && root->subtree_has_key(key))
      fail(ErrorCode::AccessDenied,
           "key '" + key + "' belongs to an environment not visible to agent " + agent_id);
    throw;
  }
}

void register_builtin_env_fn(Environment &env, const std::string &name) {
  if (name == "speak") {
    env.register_fn("speak", [](EnvTransaction &tx, const json &args) -> json {
      if (!args.is_object() || !args.contains("text"))
        fail(ErrorCode::InvalidArgument, "speak needs text");
      json chat = tx.contains("chat") ? tx.get("chat") : json::array();
      chat.push_back(json{{"sender", args.value("sender", std::string())},
                          {"text", args["text"]}});
      const auto n = chat.size();
      tx.set("chat", std::move(chat));
      return n;
    });
  } else if (name == "announce") {
    env.register_fn("announce", [](EnvTransaction &tx, const json &args) -> json {
      if (!args.is_object() || !args.contains("key") || !args["key"].is_string())
        fail(ErrorCode::InvalidArgument, "announce needs a string key");
      tx.set(args["key"].get<std::string>(), args.value("value", json()));
      return args.value("value", json());
    });
  } else {
    fail(ErrorCode::UnknownFunction, "no built-in environment function '" + name + "'");
  }
}

EnvironmentAgent::EnvironmentAgent(const AgentDef &def)
    : Agent(def), env_(Environment::create(def.name)) {
  if (auto it = def.params.find("functions"); it != def.params.end()) {
    if (!it->is_array())
      fail(ErrorCode::InvalidArgument, "environment functions must be a list");
    for (const auto &f : *it)
      register_builtin_env_fn(*env_, f.get<std::string>());
  }
  if (auto it = def.params.find("state"); it != def.params.end() && it->is_object())
    for (const auto &[k, v] : it->items())
      env_->set(k, v);
}

namespace {

AgentRef target_from_json(const json &t) {
  return AgentRef::remote(t.at("agent_id").get<std::string>(), t.value("name", std::string()),
                          Endpoint{t.at("host").get<std::string>(), t.at("port").get<int>()});
}

json run_op(Environment &env, const json &op) {
  const std::string kind = op.at("op").get<std::string>();
  if (kind == "get")
    return env.get(op.at("key").get<std::string>());
  if (kind == "set") {
    auto prev = env.set(op.at("key").get<std::string>(), op.value("value", json()));
    return prev ? *prev : json();
  }
  if (kind == "invoke")
    return env.invoke(op.at("fn").get<std::string>(), op.value("args", json::object()));
  if (kind == "listen") {
    std::vector<AgentRef> targets;
    for (const auto &t : op.value("targets", json::array()))
      targets.push_back(target_from_json(t));
    return env.listen(op.at("fn").get<std::string>(),
                      predicate_from_json(op.value("predicate", json{{"type", "always"}})),
                      std::move(targets), op.value("template", std::string()));
  }
  fail(ErrorCode::InvalidArgument, "unknown environment op '" + kind + "'");
}

} // namespace

Message EnvironmentAgent::reply(std::span<const Message> inputs) {
  json out;
  try {
    if (inputs.empty())
      fail(ErrorCode::InvalidArgument, "environment call without an operation");
    const json op = json::parse(inputs.back().content());
    out = json{{"ok", true}, {"value", run_op(*env_, op)}};
  } catch (const Error &e) {
    out = json{{"ok", false},
               {"error", {{"code", error_code_name(e.code())}, {"message", e.what()}}}};
  } catch (const json::exception &e) {
    out = json{{"ok", false},
               {"error", {{"code", error_code_name(ErrorCode::MalformedPayload)},
                          {"message", e.what()}}}};
  }
  return Message(name(), Role::Assistant, out.dump());
}

std::unique_ptr<Agent> make_environment_agent(const AgentDef &def) {
  return std::make_unique<EnvironmentAgent>(def);
}

} // namespace agentsim
