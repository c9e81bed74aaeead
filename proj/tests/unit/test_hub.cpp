#include <doctest.h>

#include <atomic>
#include <thread>

#include <httplib.h>

#include "agentsim/error.hpp"
#include "agentsim/hub.hpp"
#include "agentsim/server.hpp"
#include "../support/server_process.hpp"

using namespace agentsim;
using namespace std::chrono_literals;

namespace {

struct HubFixture {
  std::shared_ptr<std::atomic<std::int64_t>> now = std::make_shared<std::atomic<std::int64_t>>(1'000'000);
  Hub hub{Hub::Options{"127.0.0.1", 0, {}, [n = now] { return n->load(); }}};
  std::unique_ptr<httplib::Client> client;

  HubFixture() {
    hub.start();
    client = std::make_unique<httplib::Client>("127.0.0.1", hub.port());
  }
  ~HubFixture() { hub.stop(); }

  std::pair<int, json> post(const std::string &path, const json &body) {
    auto res = client->Post(path, body.dump(), "application/json");
    REQUIRE(res);
    return {res->status, json::parse(res->body)};
  }
  std::pair<int, json> get(const std::string &path) {
    auto res = client->Get(path);
    REQUIRE(res);
    return {res->status, json::parse(res->body)};
  }
  std::pair<int, json> del(const std::string &path) {
    auto res = client->Delete(path);
    REQUIRE(res);
    return {res->status, json::parse(res->body)};
  }
  void advance(std::int64_t ms) { *now += ms; }
};

} // namespace

TEST_SUITE("agent-manager") {
  TEST_CASE("health thresholds") {
    CHECK(health_for_age(9999ms) == ServerHealth::Alive);
    CHECK(health_for_age(10s) == ServerHealth::Stale);
    CHECK(health_for_age(29999ms) == ServerHealth::Stale);
    CHECK(health_for_age(30s) == ServerHealth::Dead);
  }

  TEST_CASE("register, duplicate and heartbeat over HTTP") {
    HubFixture f;
    auto [status, body] = f.post("/api/register", {{"addr", "10.0.0.1:9000"}, {"mode", "many_to_one"}, {"capacity", 8}});
    CHECK(status == 200);
    CHECK(body["ok"] == true);
    const std::string id = body["data"]["server_id"];

    auto dup = f.post("/api/register", {{"addr", "10.0.0.1:9000"}, {"capacity", 8}});
    CHECK(dup.first == 409);
    CHECK(dup.second["ok"] == false);
    CHECK(dup.second["error"]["code"] == "DuplicateAddress");

    CHECK(f.post("/api/register", {{"addr", "nonsense"}}).first == 400);
    CHECK(f.post("/api/register", {{"addr", "10.0.0.2:1"}, {"capacity", 0}}).first == 400);
    auto res = f.client->Post("/api/register", "{not json", "application/json");
    REQUIRE(res);
    CHECK(res->status == 400);

    f.advance(4000);
    auto hb = f.post("/api/heartbeat", {{"server_id", id}, {"agent_count", 3},
                                        {"metrics", {{"cpu_percent", 12.5}, {"mem_bytes", 4096}, {"uptime_s", 4}}}});
    CHECK(hb.first == 200);
    CHECK(f.post("/api/heartbeat", {{"server_id", "ghost"}}).first == 404);

    auto [st, list] = f.get("/api/servers");
    CHECK(st == 200);
    REQUIRE(list["data"].size() == 1);
    const json rec = list["data"][0];
    CHECK(rec["server_id"] == id);
    CHECK(rec["addr"] == "10.0.0.1:9000");
    CHECK(rec["capacity"] == 8);
    CHECK(rec["agent_count"] == 3);
    CHECK(rec["status"] == "alive");
    CHECK(rec["metrics"]["cpu_percent"] == 12.5);
    CHECK(rec["heartbeat_age_ms"] == 0);
    CHECK(std::abs(rec["last_heartbeat"].get<std::int64_t>() - now_millis()) < 5000);
  }

  TEST_CASE("servers go stale then dead without heartbeats") {
    HubFixture f;
    const std::string id = f.hub.register_server(Endpoint{"10.0.0.1", 9000}, "many_to_one", 4);
    CHECK(f.hub.health(id) == ServerHealth::Alive);
    f.advance(15'000);
    CHECK(f.hub.health(id) == ServerHealth::Stale);
    CHECK(f.get("/api/servers").second["data"][0]["status"] == "stale");
    CHECK_THROWS_AS(f.hub.create_remote_agent(id, AgentDef{"e", "echo", json::object()}), Error);
    f.advance(20'000);
    CHECK(f.hub.health(id) == ServerHealth::Dead);
    auto [status, body] = f.get("/api/servers/" + id + "/agents");
    CHECK(status == 503);
    CHECK(body["error"]["code"] == "ServerDead");
    // A dead address may register again.
    const std::string again = f.hub.register_server(Endpoint{"10.0.0.1", 9000}, "many_to_one", 4);
    CHECK(again != id);
    CHECK(f.hub.servers().size() == 1);
  }

  TEST_CASE("metric history keeps the newest 1000 points") {
    HubFixture f;
    const std::string id = f.hub.register_server(Endpoint{"10.0.0.1", 9000}, "many_to_one", 4);
    for (int i = 0; i < 1200; ++i) {
      f.advance(1);
      f.hub.heartbeat(id, i, ProcessMetrics{static_cast<double>(i), 0, 0});
    }
    auto [status, body] = f.get("/api/servers/" + id + "/metrics");
    CHECK(status == 200);
    REQUIRE(body["data"].size() == Hub::kMetricHistory);
    CHECK(body["data"][0]["agent_count"] == 200);
    CHECK(body["data"].back()["cpu_percent"] == 1199.0);
    CHECK(f.get("/api/servers/ghost/metrics").first == 404);
  }

  TEST_CASE("agents on a live server are created, listed and stopped") {
    HubFixture f;
    ServerConfig cfg;
    cfg.capacity = 2;
    AgentServer server(cfg);
    server.start();
    const std::string id = f.hub.register_server(server.endpoint(), "many_to_one", 2);

    auto [cs, created] = f.post("/api/servers/" + id + "/agents", {{"name", "e1"}, {"kind", "echo"}});
    CHECK(cs == 200);
    const std::string agent_id = created["data"]["agent_id"];
    AgentRef other = f.hub.create_remote_agent(id, AgentDef{"e2", "echo", json::object()});
    CHECK(resolve(call(other, Message("t", Role::User, "ping"))).content() == "ping");

    auto full = f.post("/api/servers/" + id + "/agents", {{"name", "e3"}, {"kind", "echo"}});
    CHECK(full.first == 409);
    CHECK(full.second["error"]["code"] == "CapacityExceeded");
    CHECK(f.post("/api/servers/" + id + "/agents", {{"name", "x"}, {"kind", "unicorn"}}).first == 400);

    auto [ls, listed] = f.get("/api/servers/" + id + "/agents");
    CHECK(ls == 200);
    CHECK(listed["data"].size() == 2);

    CHECK(f.del("/api/servers/" + id + "/agents/" + agent_id).first == 200);
    CHECK(f.del("/api/servers/" + id + "/agents/" + agent_id).first == 404);
    CHECK(f.get("/api/servers/" + id + "/agents").second["data"].size() == 1);
    CHECK(f.get("/api/servers/ghost/agents").first == 404);
    server.stop();
  }

  TEST_CASE("round progress is stored per simulation") {
    HubFixture f;
    const std::string url = "127.0.0.1:" + std::to_string(f.hub.port());
    post_round_progress(url, "sim-a", json{{"round", 1}, {"avg", 30.5}, {"target", 20.3}});
    post_round_progress(url, "sim-a", json{{"round", 2}, {"avg", 20.1}, {"target", 13.4}});
    auto [status, body] = f.get("/api/simulations/sim-a/rounds");
    CHECK(status == 200);
    REQUIRE(body["data"].size() == 2);
    CHECK(body["data"][1]["avg"] == 20.1);
    CHECK(f.get("/api/simulations/none/rounds").second["data"].empty());
    CHECK(f.post("/api/simulations/sim-a/rounds", json::array()).first == 400);
    CHECK_THROWS_AS(post_round_progress("127.0.0.1:1", "sim-a", json::object()), Error);
  }

  TEST_CASE("reporter registers, heartbeats and re-registers after a hub restart") {
    const int port = testing::free_port();
    auto make_hub = [&] { return std::make_unique<Hub>(Hub::Options{"127.0.0.1", port, {}, {}}); };
    auto hub = make_hub();
    hub->start();
    HubReporter reporter("127.0.0.1:" + std::to_string(port),
                         json{{"addr", "127.0.0.1:4567"}, {"mode", "many_to_one"}, {"capacity", 9}},
                         [] { return 5; }, 50ms);
    reporter.start();
    auto wait_for = [](auto pred) {
      for (int i = 0; i < 200 && !pred(); ++i)
        std::this_thread::sleep_for(20ms);
      return pred();
    };
    REQUIRE(wait_for([&] { return hub->servers().size() == 1 && hub->servers()[0]["agent_count"] == 5; }));
    const std::string first = reporter.server_id();
    CHECK(hub->servers()[0]["server_id"] == first);

    hub->stop();
    hub = make_hub();
    hub->start();
    REQUIRE(wait_for([&] { return hub->servers().size() == 1; }));
    CHECK(reporter.server_id() != first);
    CHECK(hub->servers()[0]["capacity"] == 9);
    reporter.stop();
    hub->stop();
  }

  TEST_CASE("agent-server registers itself with a hub") {
    Hub hub(Hub::Options{});
    hub.start();
    testing::ServerProcess proc(AGENTSIM_SERVER_BIN, {"--hub", "127.0.0.1:" + std::to_string(hub.port())});
    for (int i = 0; i < 100 && hub.servers().empty(); ++i)
      std::this_thread::sleep_for(50ms);
    REQUIRE(hub.servers().size() == 1);
    CHECK(hub.servers()[0]["addr"] == proc.endpoint().str());
    CHECK(proc.stop() == 0);
    hub.stop();
  }

  TEST_CASE("agent-hub binary serves the API") {
    testing::ServerProcess proc(AGENTSIM_HUB_BIN, {});
    httplib::Client client("127.0.0.1", proc.endpoint().port);
    auto res = client.Get("/api/servers");
    REQUIRE(res);
    CHECK(res->status == 200);
    CHECK(json::parse(res->body) == json{{"ok", true}, {"data", json::array()}});
    CHECK(proc.stop() == 0);
  }
}
