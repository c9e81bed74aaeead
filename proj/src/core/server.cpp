#include "agentsim/server.hpp"

#include <cerrno>
#include <csignal>
#include <fcntl.h>
#include <poll.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <condition_variable>
#include <deque>
#include <iostream>
#include <shared_mutex>
#include <thread>
#include <unordered_map>

#include <spdlog/spdlog.h>

#include "agentsim/hub.hpp"
#include "agentsim/rpc.hpp"
#include "agentsim/runtime.hpp"
#include "agentsim/thread_pool.hpp"

extern char **environ;

namespace agentsim {

std::string_view to_string(ServerMode mode) noexcept {
  return mode == ServerMode::OneToOne ? "one_to_one" : "many_to_one";
}

ServerMode server_mode_from_string(std::string_view text) {
  if (text == "one-to-one" || text == "one_to_one")
    return ServerMode::OneToOne;
  if (text == "many-to-one" || text == "many_to_one")
    return ServerMode::ManyToOne;
  fail(ErrorCode::InvalidArgument, "unknown server mode '" + std::string(text) + "'");
}

int ServerConfig::effective_workers() const {
  if (workers > 0)
    return workers;
  const unsigned cpus = std::max(1u, std::thread::hardware_concurrency());
  return static_cast<int>(cpus * 4);
}

void ServerConfig::validate() const {
  if (capacity < 1)
    fail(ErrorCode::InvalidArgument, "capacity must be >= 1");
  if (workers < 0)
    fail(ErrorCode::InvalidArgument, "workers must be >= 1");
  if (listen.port < 0 || listen.port > 65535)
    fail(ErrorCode::InvalidArgument, "listen port out of range");
  if (mode == ServerMode::OneToOne && child_executable.empty())
    fail(ErrorCode::InvalidArgument, "one_to_one mode needs a child executable");
}

json to_json(const ServerConfig &cfg) {
  return json{{"listen", cfg.listen.str()},
              {"mode", to_string(cfg.mode)},
              {"capacity", cfg.capacity},
              {"workers", cfg.workers},
              {"hub", cfg.hub_url},
              {"child_executable", cfg.child_executable},
              {"child_mode", cfg.child_mode},
              {"heartbeat_ms", cfg.heartbeat_interval.count()},
              {"task_ttl_ms", cfg.task_ttl.count()}};
}

ServerConfig server_config_from_json(const json &j) {
  ServerConfig cfg;
  try {
    if (j.contains("listen"))
      cfg.listen = Endpoint::parse(j["listen"].get<std::string>());
    if (j.contains("mode"))
      cfg.mode = server_mode_from_string(j["mode"].get<std::string>());
    cfg.capacity = j.value("capacity", cfg.capacity);
    cfg.workers = j.value("workers", cfg.workers);
    cfg.hub_url = j.value("hub", std::string());
    cfg.child_executable = j.value("child_executable", std::string());
    cfg.child_mode = j.value("child_mode", false);
    cfg.heartbeat_interval = std::chrono::milliseconds(
        j.value("heartbeat_ms", static_cast<std::int64_t>(cfg.heartbeat_interval.count())));
    cfg.task_ttl = std::chrono::milliseconds(
        j.value("task_ttl_ms", static_cast<std::int64_t>(cfg.task_ttl.count())));
  } catch (const json::exception &e) {
    fail(ErrorCode::InvalidArgument, std::string("bad server config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

namespace {

using Clock = std::chrono::steady_clock;

// task_id -> pending | ready(Message) | failed(error). Completed entries expire
// after the configured TTL.
class TaskTable {
public:
  using Waiter = std::function<void(const RpcResponse &)>;

  explicit TaskTable(std::chrono::milliseconds ttl) : ttl_(ttl) {}

  void create(const std::string &id) {
    std::lock_guard lock(mu_);
    sweep_locked();
    entries_.emplace(id, Entry{});
  }

  void complete(const std::string &id, const Message &msg) {
    finish(id, [&](Entry &e) { e.message = msg; });
  }

  void fail_task(const std::string &id, ErrorCode code, const std::string &why) {
    finish(id, [&](Entry &e) { e.error = RpcError{code, why}; });
  }

  // Invokes w with the task's outcome (immediately when already done); w
  // receives a response tagged with request_id.
  void on_done(const std::string &id, const std::string &request_id, Waiter w) {
    std::unique_lock lock(mu_);
    auto it = entries_.find(id);
    if (it == entries_.end()) {
      lock.unlock();
      w(RpcResponse::failure(request_id, ErrorCode::TaskNotFound, "unknown task " + id));
      return;
    }
    if (!it->second.done) {
      it->second.waiters.emplace_back(request_id, std::move(w));
      return;
    }
    RpcResponse resp = response_for(it->second, request_id);
    lock.unlock();
    w(resp);
  }

  std::size_t size() const {
    std::lock_guard lock(mu_);
    return entries_.size();
  }

private:
  struct Entry {
    bool done = false;
    std::optional<Message> message;
    std::optional<RpcError> error;
    Clock::time_point done_at{};
    std::vector<std::pair<std::string, Waiter>> waiters;
  };

  static RpcResponse response_for(const Entry &e, const std::string &request_id) {
    if (e.message)
      return RpcResponse::success(request_id, json{{"message", to_json(*e.message)}});
    const RpcError err = e.error.value_or(RpcError{});
    return RpcResponse::failure(request_id, err.code, err.message);
  }

  template <class F> void finish(const std::string &id, F &&fill) {
    std::vector<std::pair<std::string, Waiter>> waiters;
    Entry snapshot;
    {
      std::lock_guard lock(mu_);
      auto it = entries_.find(id);
      if (it == entries_.end() || it->second.done)
        return;
      fill(it->second);
      it->second.done = true;
      it->second.done_at = Clock::now();
      waiters.swap(it->second.waiters);
      snapshot.message = it->second.message;
      snapshot.error = it->second.error;
    }
    for (auto &[request_id, w] : waiters)
      w(response_for(snapshot, request_id));
  }

  void sweep_locked() {
    const auto now = Clock::now();
    if (now - last_sweep_ < std::chrono::seconds(1) && ttl_ >= std::chrono::seconds(1))
      return;
    last_sweep_ = now;
    std::erase_if(entries_, [&](const auto &kv) {
      return kv.second.done && now - kv.second.done_at > ttl_;
    });
  }

  std::chrono::milliseconds ttl_;
  mutable std::mutex mu_;
  std::unordered_map<std::string, Entry> entries_;
  Clock::time_point last_sweep_{};
};

struct Job {
  std::string task_id;
  bool observe = false;
  std::optional<std::vector<Message>> inputs; // set once placeholders resolve
  std::optional<Error> input_error;

  bool ready() const { return inputs.has_value() || input_error.has_value(); }
};

struct HostedAgent {
  std::string id;
  AgentDef def;
  std::int64_t created_at = 0;
  std::unique_ptr<Agent> agent;

  std::mutex mu;
  std::deque<std::shared_ptr<Job>> queue;
  bool scheduled = false;
  bool stopped = false;
};

struct ChildProcess {
  pid_t pid = -1;
  int lifeline = -1; // write end of the child's stdin; closing it ends the child
  Endpoint endpoint;
  std::shared_ptr<RpcClient> client;
  std::string agent_id;
  AgentDef def;
  std::int64_t created_at = 0;
};

} // namespace

struct AgentServer::Impl : std::enable_shared_from_this<AgentServer::Impl> {
  ServerConfig cfg;
  const AgentRegistry &registry;
  TaskTable tasks;
  std::unique_ptr<ThreadPool> pool;
  std::unique_ptr<RpcServer> rpc;
  std::unique_ptr<HubReporter> reporter;
  Clock::time_point started_at = Clock::now();

  mutable std::shared_mutex agents_mu;
  std::unordered_map<std::string, std::shared_ptr<HostedAgent>> agents;
  std::unordered_map<std::string, std::shared_ptr<ChildProcess>> children;
  std::unordered_map<std::string, std::shared_ptr<ChildProcess>> child_tasks;

  std::mutex resolvers_mu;
  std::vector<std::thread> resolvers;

  std::mutex state_mu;
  std::condition_variable state_cv;
  bool running = false;

  Impl(ServerConfig c, const AgentRegistry &r)
      : cfg(std::move(c)), registry(r), tasks(cfg.task_ttl) {}

  int agent_count() const {
    std::shared_lock lock(agents_mu);
    return static_cast<int>(cfg.mode == ServerMode::OneToOne ? children.size()
                                                             : agents.size());
  }

  json status() const {
    const auto uptime =
        std::chrono::duration_cast<std::chrono::seconds>(Clock::now() - started_at).count();
    return json{{"mode", to_string(cfg.mode)},
                {"agent_count", agent_count()},
                {"capacity", cfg.capacity},
                {"workers", cfg.mode == ServerMode::ManyToOne ? cfg.effective_workers() : 0},
                {"uptime_s", uptime},
                {"listen", rpc ? rpc->listen_endpoint().str() : cfg.listen.str()},
                {"tasks", tasks.size()}};
  }

  void handle(RpcRequest req, const RpcServer::Responder &respond) {
    if (cfg.mode == ServerMode::OneToOne) {
      handle_one_to_one(std::move(req), respond);
      return;
    }
    switch (req.kind) {
    case RpcKind::CreateAgent: respond(create_agent(req)); break;
    case RpcKind::CallAgent: respond(call_agent(req)); break;
    case RpcKind::ResolveTask:
      tasks.on_done(req.payload["task_id"].get<std::string>(), req.request_id, respond);
      break;
    case RpcKind::StopAgent: respond(stop_agent(req)); break;
    case RpcKind::ListAgents: respond(list_agents(req)); break;
    case RpcKind::ServerStatus: respond(RpcResponse::success(req.request_id, status())); break;
    }
  }

  RpcResponse create_agent(const RpcRequest &req) {
    AgentDef def = agent_def_from_json(req.payload["def"]);
    auto hosted = std::make_shared<HostedAgent>();
    hosted->agent = registry.create(def);
    hosted->id = new_uuid();
    hosted->def = std::move(def);
    hosted->created_at = now_millis();
    std::unique_lock lock(agents_mu);
    if (static_cast<int>(agents.size()) >= cfg.capacity)
      return RpcResponse::failure(req.request_id, ErrorCode::CapacityExceeded,
                                  "server at capacity " + std::to_string(cfg.capacity));
    agents.emplace(hosted->id, hosted);
    return RpcResponse::success(req.request_id, json{{"agent_id", hosted->id}});
  }

  std::shared_ptr<HostedAgent> find_agent(const std::string &id) const {
    std::shared_lock lock(agents_mu);
    auto it = agents.find(id);
    return it == agents.end() ? nullptr : it->second;
  }

  RpcResponse call_agent(const RpcRequest &req) {
    const std::string agent_id = req.payload["agent_id"].get<std::string>();
    auto hosted = find_agent(agent_id);
    if (!hosted)
      return RpcResponse::failure(req.request_id, ErrorCode::AgentNotFound,
                                  "no agent " + agent_id);

    std::vector<Payload> inputs;
    bool has_placeholder = false;
    for (const auto &in : req.payload["inputs"]) {
      inputs.push_back(payload_from_json(in));
      has_placeholder = has_placeholder || is_placeholder(inputs.back());
    }

    auto job = std::make_shared<Job>();
    job->task_id = new_uuid();
    job->observe = req.payload.value("observe", false);
    if (!has_placeholder) {
      std::vector<Message> msgs;
      for (auto &p : inputs)
        msgs.push_back(std::get<Message>(std::move(p)));
      job->inputs = std::move(msgs);
    }
    tasks.create(job->task_id);
    {
      std::lock_guard lock(hosted->mu);
      if (hosted->stopped)
        return RpcResponse::failure(req.request_id, ErrorCode::AgentNotFound,
                                    "agent " + agent_id + " stopped");
      hosted->queue.push_back(job);
      maybe_schedule(hosted);
    }
    if (has_placeholder)
      start_resolver(hosted, job, std::move(inputs));
    return RpcResponse::success(req.request_id, json{{"task_id", job->task_id}});
  }

  // Resolution happens off the worker pool so a worker never blocks on another
  // task; the mailbox keeps arrival order by holding the job at its head.
  void start_resolver(std::shared_ptr<HostedAgent> hosted, std::shared_ptr<Job> job,
                      std::vector<Payload> inputs) {
    std::weak_ptr<Impl> weak = shared_from_this();
    std::thread t([weak, hosted, job, inputs = std::move(inputs)] {
      std::vector<Message> msgs;
      std::optional<Error> err;
      try {
        for (const auto &p : inputs)
          msgs.push_back(resolve(p));
      } catch (const Error &e) {
        err = e;
      } catch (const std::exception &e) {
        err = Error(ErrorCode::Internal, e.what());
      }
      auto self = weak.lock();
      if (!self)
        return;
      std::lock_guard lock(hosted->mu);
      if (err)
        job->input_error = std::move(err);
      else
        job->inputs = std::move(msgs);
      self->maybe_schedule(hosted);
    });
    std::lock_guard lock(resolvers_mu);
    resolvers.push_back(std::move(t));
  }

  // Caller holds hosted->mu.
  void maybe_schedule(const std::shared_ptr<HostedAgent> &hosted) {
    if (hosted->scheduled || hosted->queue.empty() || !hosted->queue.front()->ready())
      return;
    hosted->scheduled = true;
    std::weak_ptr<Impl> weak = shared_from_this();
    pool->submit([weak, hosted] {
      if (auto self = weak.lock())
        self->run_one(hosted);
    });
  }

  void run_one(const std::shared_ptr<HostedAgent> &hosted) {
    std::shared_ptr<Job> job;
    {
      std::lock_guard lock(hosted->mu);
      if (hosted->queue.empty()) {
        hosted->scheduled = false;
        return;
      }
      job = hosted->queue.front();
      hosted->queue.pop_front();
    }
    try {
      if (job->input_error) {
        tasks.fail_task(job->task_id, job->input_error->code(), job->input_error->what());
      } else if (job->observe) {
        for (const auto &m : *job->inputs)
          hosted->agent->observe(m);
        tasks.complete(job->task_id, Message(hosted->def.name, Role::System, "ack"));
      } else {
        tasks.complete(job->task_id, hosted->agent->reply(*job->inputs));
      }
    } catch (const Error &e) {
      tasks.fail_task(job->task_id, e.code(),
                      std::string(error_code_name(e.code())) + ": " + e.what());
    } catch (const std::exception &e) {
      tasks.fail_task(job->task_id, ErrorCode::Internal, e.what());
    }
    std::lock_guard lock(hosted->mu);
    hosted->scheduled = false;
    maybe_schedule(hosted);
  }

  RpcResponse stop_agent(const RpcRequest &req) {
    const std::string agent_id = req.payload["agent_id"].get<std::string>();
    std::shared_ptr<HostedAgent> hosted;
    {
      std::unique_lock lock(agents_mu);
      auto it = agents.find(agent_id);
      if (it == agents.end())
        return RpcResponse::failure(req.request_id, ErrorCode::AgentNotFound,
                                    "no agent " + agent_id);
      hosted = it->second;
      agents.erase(it);
    }
    std::deque<std::shared_ptr<Job>> dropped;
    {
      std::lock_guard lock(hosted->mu);
      hosted->stopped = true;
      dropped.swap(hosted->queue);
    }
    for (const auto &job : dropped)
      tasks.fail_task(job->task_id, ErrorCode::AgentNotFound,
                      "agent " + agent_id + " stopped before the task ran");
    return RpcResponse::success(req.request_id, json::object());
  }

  RpcResponse list_agents(const RpcRequest &req) const {
    json arr = json::array();
    std::shared_lock lock(agents_mu);
    if (cfg.mode == ServerMode::OneToOne) {
      for (const auto &[id, c] : children)
        arr.push_back(json{{"agent_id", id}, {"name", c->def.name},
                           {"kind", c->def.kind}, {"created_at", c->created_at}});
    } else {
      for (const auto &[id, a] : agents)
        arr.push_back(json{{"agent_id", id}, {"name", a->def.name},
                           {"kind", a->def.kind}, {"created_at", a->created_at}});
    }
    return RpcResponse::success(req.request_id, json{{"agents", std::move(arr)}});
  }

  // --- one_to_one: each agent lives in its own child server process and this
  // server relays frames to it.

  void handle_one_to_one(RpcRequest req, const RpcServer::Responder &respond) {
    switch (req.kind) {
    case RpcKind::CreateAgent: respond(create_child(req)); return;
    case RpcKind::CallAgent: {
      auto child = find_child(req.payload["agent_id"].get<std::string>());
      if (!child) {
        respond(RpcResponse::failure(req.request_id, ErrorCode::AgentNotFound,
                                     "no agent " + req.payload["agent_id"].get<std::string>()));
        return;
      }
      std::weak_ptr<Impl> weak = shared_from_this();
      const std::string rid = req.request_id;
      child->client->call_async(req, [weak, child, rid, respond](RpcOutcome out) {
        RpcResponse resp = relay(rid, std::move(out));
        if (resp.ok) {
          if (auto self = weak.lock()) {
            std::unique_lock lock(self->agents_mu);
            self->child_tasks[resp.payload["task_id"].get<std::string>()] = child;
          }
        }
        respond(resp);
      });
      return;
    }
    case RpcKind::ResolveTask: {
      const std::string task_id = req.payload["task_id"].get<std::string>();
      std::shared_ptr<ChildProcess> child;
      {
        std::shared_lock lock(agents_mu);
        auto it = child_tasks.find(task_id);
        if (it != child_tasks.end())
          child = it->second;
      }
      if (!child) {
        respond(RpcResponse::failure(req.request_id, ErrorCode::TaskNotFound,
                                     "unknown task " + task_id));
        return;
      }
      const std::string rid = req.request_id;
      child->client->call_async(req, [rid, respond](RpcOutcome out) {
        respond(relay(rid, std::move(out)));
      });
      return;
    }
    case RpcKind::StopAgent: respond(stop_child(req)); return;
    case RpcKind::ListAgents: respond(list_agents(req)); return;
    case RpcKind::ServerStatus: respond(RpcResponse::success(req.request_id, status())); return;
    }
  }

  static RpcResponse relay(const std::string &rid, RpcOutcome out) {
    if (auto *err = std::get_if<Error>(&out)) {
      const ErrorCode code = err->code() == ErrorCode::ConnectionClosed
                                 ? ErrorCode::AgentNotFound
                                 : err->code();
      return RpcResponse::failure(rid, code, err->what());
    }
    auto resp = std::get<RpcResponse>(std::move(out));
    resp.request_id = rid;
    return resp;
  }

  std::shared_ptr<ChildProcess> find_child(const std::string &agent_id) const {
    std::shared_lock lock(agents_mu);
    auto it = children.find(agent_id);
    return it == children.end() ? nullptr : it->second;
  }

  RpcResponse create_child(const RpcRequest &req) {
    {
      std::shared_lock lock(agents_mu);
      if (static_cast<int>(children.size()) >= cfg.capacity)
        return RpcResponse::failure(req.request_id, ErrorCode::CapacityExceeded,
                                    "server at capacity " + std::to_string(cfg.capacity));
    }
    AgentDef def = agent_def_from_json(req.payload["def"]);
    if (!registry.contains(def.kind))
      return RpcResponse::failure(req.request_id, ErrorCode::Internal,
                                  "UnknownAgentKind: " + def.kind);
    auto child = spawn_child();
    child->def = def;
    child->created_at = now_millis();
    try {
      child->client = RpcClient::connect(child->endpoint, kControlTimeout);
      RpcResponse resp = child->client->call(req, kControlTimeout);
      if (!resp.ok) {
        kill_child(*child);
        return resp;
      }
      child->agent_id = resp.payload["agent_id"].get<std::string>();
    } catch (...) {
      kill_child(*child);
      throw;
    }
    std::unique_lock lock(agents_mu);
    if (static_cast<int>(children.size()) >= cfg.capacity) {
      lock.unlock();
      kill_child(*child);
      return RpcResponse::failure(req.request_id, ErrorCode::CapacityExceeded,
                                  "server at capacity " + std::to_string(cfg.capacity));
    }
    children.emplace(child->agent_id, child);
    return RpcResponse::success(req.request_id, json{{"agent_id", child->agent_id}});
  }

  RpcResponse stop_child(const RpcRequest &req) {
    const std::string agent_id = req.payload["agent_id"].get<std::string>();
    std::shared_ptr<ChildProcess> child;
    {
      std::unique_lock lock(agents_mu);
      auto it = children.find(agent_id);
      if (it == children.end())
        return RpcResponse::failure(req.request_id, ErrorCode::AgentNotFound,
                                    "no agent " + agent_id);
      child = it->second;
      children.erase(it);
      std::erase_if(child_tasks, [&](const auto &kv) { return kv.second == child; });
    }
    kill_child(*child);
    return RpcResponse::success(req.request_id, json::object());
  }

  std::shared_ptr<ChildProcess> spawn_child() {
    int fds[2];
    if (::pipe2(fds, O_CLOEXEC) != 0)
      fail(ErrorCode::Internal, "pipe failed");
    int life[2];
    if (::pipe2(life, O_CLOEXEC) != 0) {
      ::close(fds[0]);
      ::close(fds[1]);
      fail(ErrorCode::Internal, "pipe failed");
    }
    posix_spawn_file_actions_t actions;
    posix_spawn_file_actions_init(&actions);
    posix_spawn_file_actions_adddup2(&actions, fds[1], STDOUT_FILENO);
    posix_spawn_file_actions_adddup2(&actions, life[0], STDIN_FILENO);
    std::vector<std::string> args{cfg.child_executable, "--listen", "127.0.0.1:0",
                                  "--mode", "many-to-one", "--capacity", "1",
                                  "--workers", "1", "--child", "--log-level",
                                  std::string(spdlog::level::to_string_view(spdlog::get_level()).data())};
    std::vector<char *> argv;
    for (auto &a : args)
      argv.push_back(a.data());
    argv.push_back(nullptr);
    pid_t pid = -1;
    const int rc = ::posix_spawn(&pid, cfg.child_executable.c_str(), &actions, nullptr,
                                 argv.data(), environ);
    posix_spawn_file_actions_destroy(&actions);
    ::close(fds[1]);
    ::close(life[0]);
    if (rc != 0) {
      ::close(fds[0]);
      ::close(life[1]);
      fail(ErrorCode::Internal, "cannot start " + cfg.child_executable);
    }
    auto child = std::make_shared<ChildProcess>();
    child->pid = pid;
    child->lifeline = life[1];

    std::string line;
    const auto deadline = Clock::now() + kControlTimeout;
    char c = 0;
    while (Clock::now() < deadline) {
      pollfd pfd{fds[0], POLLIN, 0};
      if (::poll(&pfd, 1, 100) <= 0)
        continue;
      if (::read(fds[0], &c, 1) != 1)
        break;
      if (c == '\n')
        break;
      line.push_back(c);
    }
    ::close(fds[0]);
    if (line.rfind("PORT ", 0) != 0) {
      kill_child(*child);
      fail(ErrorCode::Internal, "child server did not report its port");
    }
    child->endpoint = Endpoint{"127.0.0.1", std::stoi(line.substr(5))};
    return child;
  }

  static void kill_child(ChildProcess &child) {
    if (child.client)
      child.client->close();
    if (child.pid > 0) {
      ::kill(child.pid, SIGTERM);
      ::waitpid(child.pid, nullptr, 0);
      child.pid = -1;
    }
    if (child.lifeline >= 0) {
      ::close(child.lifeline);
      child.lifeline = -1;
    }
  }

  void shutdown() {
    if (rpc)
      rpc->stop();
    if (reporter)
      reporter->stop();
    std::vector<std::shared_ptr<ChildProcess>> kids;
    {
      std::unique_lock lock(agents_mu);
      for (auto &[id, c] : children)
        kids.push_back(c);
      children.clear();
      child_tasks.clear();
    }
    for (auto &c : kids)
      kill_child(*c);
    if (pool)
      pool->shutdown();
    std::vector<std::thread> rs;
    {
      std::lock_guard lock(resolvers_mu);
      rs.swap(resolvers);
    }
    for (auto &t : rs)
      if (t.joinable())
        t.join();
  }
};

AgentServer::AgentServer(ServerConfig cfg, const AgentRegistry &registry) {
  cfg.validate();
  impl_ = std::make_shared<Impl>(std::move(cfg), registry);
}

AgentServer::~AgentServer() { stop(); }

void AgentServer::start() {
  auto &impl = *impl_;
  if (impl.cfg.mode == ServerMode::ManyToOne)
    impl.pool = std::make_unique<ThreadPool>(impl.cfg.effective_workers());
  std::weak_ptr<Impl> weak = impl_;
  impl.rpc = std::make_unique<RpcServer>(
      impl.cfg.listen, [weak](RpcRequest req, RpcServer::Responder respond) {
        if (auto self = weak.lock())
          self->handle(std::move(req), respond);
      });
  impl.rpc->start();
  impl.started_at = Clock::now();
  {
    std::lock_guard lock(impl.state_mu);
    impl.running = true;
  }
  if (impl.cfg.child_mode) {
    std::cout << "PORT " << impl.rpc->port() << std::endl;
    // The parent stops reading after the port line; later output goes to stderr.
    ::dup2(STDERR_FILENO, STDOUT_FILENO);
    // stdin is a pipe held open by the parent process, so EOF means it is gone.
    std::thread([] {
      char buf[64];
      for (;;) {
        const ssize_t n = ::read(STDIN_FILENO, buf, sizeof buf);
        if (n == 0 || (n < 0 && errno != EINTR))
          break;
      }
      ::kill(::getpid(), SIGTERM);
    }).detach();
  }
  if (!impl.cfg.hub_url.empty()) {
    Endpoint advertised = impl.rpc->listen_endpoint();
    if (advertised.host.empty() || advertised.host == "0.0.0.0")
      advertised.host = "127.0.0.1";
    impl.reporter = std::make_unique<HubReporter>(
        impl.cfg.hub_url,
        json{{"addr", advertised.str()},
             {"mode", to_string(impl.cfg.mode)},
             {"capacity", impl.cfg.capacity}},
        [weak] {
          auto self = weak.lock();
          return self ? self->agent_count() : 0;
        },
        impl.cfg.heartbeat_interval);
    impl.reporter->start();
  }
  spdlog::info("agent server listening on {} ({})", impl.rpc->listen_endpoint().str(),
               to_string(impl.cfg.mode));
}

void AgentServer::stop() {
  if (!impl_)
    return;
  {
    std::lock_guard lock(impl_->state_mu);
    if (!impl_->running && !impl_->rpc)
      return;
    impl_->running = false;
  }
  impl_->state_cv.notify_all();
  impl_->shutdown();
}

void AgentServer::wait() {
  std::unique_lock lock(impl_->state_mu);
  impl_->state_cv.wait(lock, [this] { return !impl_->running; });
}

int AgentServer::port() const { return impl_->rpc ? impl_->rpc->port() : 0; }

Endpoint AgentServer::endpoint() const {
  return impl_->rpc ? impl_->rpc->listen_endpoint() : impl_->cfg.listen;
}

json AgentServer::status() const { return impl_->status(); }

void run_server(const ServerConfig &cfg) {
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGTERM);
  sigaddset(&set, SIGINT);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);
  AgentServer server(cfg);
  server.start();
  int sig = 0;
  sigwait(&set, &sig);
  spdlog::info("received signal {}, shutting down", sig);
  server.stop();
}

} // namespace agentsim
