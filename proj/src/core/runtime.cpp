#include "agentsim/runtime.hpp"

#include "agentsim/error.hpp"

namespace agentsim {

namespace detail {

struct LocalActor {
  AgentDef def;
  std::unique_ptr<Agent> agent;
  std::mutex mu;
  bool stopped = false;
};

} // namespace detail

AgentRef AgentRef::remote(std::string agent_id, std::string name, Endpoint server) {
  AgentRef ref;
  ref.id_ = std::move(agent_id);
  ref.name_ = std::move(name);
  ref.server_ = std::move(server);
  return ref;
}

const AgentDef &AgentRef::def() const {
  if (!local_)
    fail(ErrorCode::InvalidArgument, "agent " + id_ + " is a proxy");
  return local_->def;
}

void AgentRef::with_local(const std::function<void(Agent &)> &fn) const {
  if (!local_)
    fail(ErrorCode::InvalidArgument, "agent " + id_ + " is a proxy");
  std::lock_guard lock(local_->mu);
  fn(*local_->agent);
}

AgentRef spawn_local(const AgentDef &def, const AgentRegistry &registry) {
  auto actor = std::make_shared<detail::LocalActor>();
  actor->def = def;
  actor->agent = registry.create(def);
  AgentRef ref;
  ref.id_ = new_uuid();
  ref.name_ = def.name;
  ref.local_ = std::move(actor);
  return ref;
}

AgentRef to_dist(const AgentRef &ref, const Endpoint &server) {
  const AgentDef &def = ref.def();
  const RpcResponse resp = rpc_call(
      server, RpcRequest::make(RpcKind::CreateAgent, json{{"def", to_json(def)}}),
      kControlTimeout);
  const json &payload = resp.value();
  return AgentRef::remote(payload.at("agent_id").get<std::string>(), def.name, server);
}

namespace {

std::vector<Message> resolve_inputs(std::span<const Payload> inputs) {
  std::vector<Message> out;
  out.reserve(inputs.size());
  for (const auto &p : inputs)
    out.push_back(resolve(p));
  return out;
}

json call_payload(const std::string &agent_id, std::span<const Payload> inputs,
                  bool observe) {
  json arr = json::array();
  for (const auto &p : inputs)
    arr.push_back(to_json(p));
  json j{{"agent_id", agent_id}, {"inputs", std::move(arr)}};
  if (observe)
    j["observe"] = true;
  return j;
}

} // namespace

Payload call(const AgentRef &ref, std::span<const Payload> inputs) {
  if (ref.is_proxy()) {
    const Endpoint &server = *ref.server();
    const RpcResponse resp = rpc_call(
        server,
        RpcRequest::make(RpcKind::CallAgent, call_payload(ref.agent_id(), inputs, false)),
        kControlTimeout);
    return Placeholder(resp.value().at("task_id").get<std::string>(), server.host,
                       server.port);
  }
  auto &actor = *ref.local_;
  const std::vector<Message> resolved = resolve_inputs(inputs);
  std::lock_guard lock(actor.mu);
  if (actor.stopped)
    fail(ErrorCode::AgentNotFound, "agent " + ref.agent_id() + " was stopped");
  return actor.agent->reply(resolved);
}

Payload call(const AgentRef &ref, const Payload &input) {
  return call(ref, std::span<const Payload>(&input, 1));
}

void notify(const AgentRef &ref, const Message &msg) {
  if (ref.is_proxy()) {
    const Payload p = msg;
    rpc_call(*ref.server(),
             RpcRequest::make(RpcKind::CallAgent,
                              call_payload(ref.agent_id(), std::span(&p, 1), true)),
             kControlTimeout)
        .value();
    return;
  }
  auto &actor = *ref.local_;
  std::lock_guard lock(actor.mu);
  if (actor.stopped)
    fail(ErrorCode::AgentNotFound, "agent " + ref.agent_id() + " was stopped");
  actor.agent->observe(msg);
}

void stop(const AgentRef &ref) {
  if (ref.is_proxy()) {
    rpc_call(*ref.server(),
             RpcRequest::make(RpcKind::StopAgent, json{{"agent_id", ref.agent_id()}}),
             kControlTimeout)
        .value();
    return;
  }
  std::lock_guard lock(ref.local_->mu);
  if (ref.local_->stopped)
    fail(ErrorCode::AgentNotFound, "agent " + ref.agent_id() + " was stopped");
  ref.local_->stopped = true;
}

Message resolve(const Placeholder &p, std::chrono::milliseconds timeout) {
  if (auto cached = p.cached())
    return *cached;
  json req{{"task_id", p.task_id()}, {"timeout_ms", timeout.count()}};
  const RpcResponse resp = rpc_call(Endpoint{p.host(), p.port()},
                                    RpcRequest::make(RpcKind::ResolveTask, std::move(req)),
                                    timeout);
  const json &payload = resp.value();
  auto it = payload.find("message");
  if (it == payload.end())
    fail(ErrorCode::MalformedPayload, "resolve_task response lacks message");
  return p.set_cached(message_from_json(*it));
}

Message resolve(const Payload &p, std::chrono::milliseconds timeout) {
  if (const auto *m = std::get_if<Message>(&p))
    return *m;
  return resolve(std::get<Placeholder>(p), timeout);
}

} // namespace agentsim
