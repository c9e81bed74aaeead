#include <doctest.h>

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <thread>

#include <httplib.h>

#include "agentsim/backends.hpp"
#include "agentsim/error.hpp"

using namespace agentsim;
using doctest::Approx;

namespace {

ErrorCode code_of(const std::function<void()> &f) {
  try {
    f();
  } catch (const Error &e) {
    return e.code();
  }
  return ErrorCode::Ok;
}

GameRule rule(std::int64_t num, std::int64_t den, double offset = 0) {
  GameRule r;
  r.ratio = {num, den};
  r.offset = offset;
  return r;
}

StrategyConfig strategy(StrategyKind kind, int k = 1) {
  StrategyConfig c;
  c.kind = kind;
  c.k = k;
  return c;
}

double decide(const StrategyConfig &c, const GameRule &r, std::optional<double> w = std::nullopt) {
  std::mt19937_64 rng(7);
  return strategy_decide(c, r, w, rng);
}

// Serves /v1/chat/completions with a scripted sequence of statuses.
class StubEndpoint {
public:
  explicit StubEndpoint(std::vector<int> statuses) : statuses_(std::move(statuses)) {
    server_.Post("/v1/chat/completions", [this](const httplib::Request &req, httplib::Response &res) {
      const std::size_t i = hits_++;
      last_body_ = req.body;
      last_auth_ = req.get_header_value("Authorization");
      res.status = i < statuses_.size() ? statuses_[i] : 200;
      res.set_content(json{{"choices", {{{"message", {{"role", "assistant"}, {"content", "I pick 42."}}}}}},
                           {"usage", {{"total_tokens", 17}}}}
                          .dump(),
                      "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~StubEndpoint() {
    server_.stop();
    thread_.join();
  }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1"; }
  std::size_t hits() const { return hits_; }
  json last_body() const { return json::parse(last_body_); }
  std::string last_auth() const { return last_auth_; }

private:
  httplib::Server server_;
  std::vector<int> statuses_;
  std::atomic<std::size_t> hits_{0};
  std::string last_body_;
  std::string last_auth_;
  int port_ = 0;
  std::thread thread_;
};

RemoteConfig remote(const std::string &url) {
  RemoteConfig c;
  c.base_url = url;
  c.model = "stub";
  c.backoff = std::chrono::milliseconds(10);
  c.timeout = std::chrono::milliseconds(5000);
  return c;
}

} // namespace

TEST_SUITE("model-backends") {
  TEST_CASE("strategy examples") {
    CHECK(decide(strategy(StrategyKind::LevelK, 1), rule(2, 3)) == Approx(100.0 / 3).epsilon(1e-12));
    CHECK(decide(strategy(StrategyKind::LevelK, 3), rule(2, 3)) == Approx(400.0 / 27).epsilon(1e-12));
    CHECK(decide(strategy(StrategyKind::FixedZero), rule(1, 2, 5)) == 10.0);
    CHECK(decide(strategy(StrategyKind::FixedZero), rule(2, 3)) == 0.0);
    CHECK(decide(strategy(StrategyKind::RatioOfWinner), rule(2, 3), 12.77) ==
          Approx(2 * 12.77 / 3).epsilon(1e-12));
    CHECK(decide(strategy(StrategyKind::FixedPointIterate), rule(1, 2, 5), 15.0) == 12.5);
    CHECK(decide(strategy(StrategyKind::BelowWinner), rule(2, 3), 15.90) == Approx(15.89));
    CHECK(decide(strategy(StrategyKind::BelowWinner), rule(2, 3), 0.0) == 0.0);
  }

  TEST_CASE("winner-relative strategies without a winner") {
    CHECK(decide(strategy(StrategyKind::RatioOfWinner), rule(2, 3)) == Approx(100.0 / 3));
    StrategyConfig strict = strategy(StrategyKind::BelowWinner);
    strict.strict = true;
    CHECK(code_of([&] { decide(strict, rule(2, 3)); }) == ErrorCode::MissingWinner);
  }

  TEST_CASE("every strategy stays in range") {
    const std::vector<GameRule> rules{rule(2, 3), rule(1, 2, 5), rule(51, 100), rule(99, 100, 40)};
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> any(-50, 150);
    for (int kind = 0; kind <= static_cast<int>(StrategyKind::AnchoredNoise); ++kind) {
      for (const auto &r : rules) {
        for (int i = 0; i < 200; ++i) {
          StrategyConfig c = strategy(static_cast<StrategyKind>(kind), i % 6);
          c.sigma = 30.0;
          const std::optional<double> w = i % 3 ? std::optional<double>(any(rng)) : std::nullopt;
          const double v = strategy_decide(c, r, w, rng, 2.0);
          CHECK(v >= 0.0);
          CHECK(v <= 100.0);
        }
      }
    }
  }

  TEST_CASE("level_k decreases in k while the fixed point is below the anchor") {
    for (const auto &r : {rule(2, 3), rule(1, 2, 5), rule(51, 100), rule(3, 4, 10)}) {
      REQUIRE(r.fixed_point() < 50.0);
      double prev = 50.0;
      for (int k = 1; k <= 12; ++k) {
        const double v = decide(strategy(StrategyKind::LevelK, k), r);
        CHECK(v < prev);
        CHECK(v > r.fixed_point());
        prev = v;
      }
    }
  }

  TEST_CASE("anchored_noise spread grows with sigma, mean barely moves") {
    const GameRule r = rule(2, 3);
    std::vector<double> means, stds;
    for (double sigma : {1.0, 2.0, 4.0, 8.0}) {
      StrategyConfig c = strategy(StrategyKind::AnchoredNoise, 1);
      c.sigma = sigma;
      std::mt19937_64 rng(3);
      double sum = 0, sq = 0;
      for (int i = 0; i < 1000; ++i) {
        const double v = strategy_decide(c, r, std::nullopt, rng);
        sum += v;
        sq += v * v;
      }
      const double mean = sum / 1000;
      means.push_back(mean);
      stds.push_back(std::sqrt(sq / 1000 - mean * mean));
    }
    for (std::size_t i = 1; i < stds.size(); ++i)
      CHECK(stds[i] > stds[i - 1]);
    const auto [lo, hi] = std::minmax_element(means.begin(), means.end());
    CHECK(*hi - *lo < 1.0);
  }

  TEST_CASE("temperature sets sigma when unset") {
    StrategyConfig c = strategy(StrategyKind::AnchoredNoise, 1);
    std::mt19937_64 a(5), b(5);
    StrategyConfig explicit_sigma = c;
    explicit_sigma.sigma = 8.0 * 0.7;
    CHECK(strategy_decide(c, rule(2, 3), std::nullopt, a, 0.7) ==
          strategy_decide(explicit_sigma, rule(2, 3), std::nullopt, b, 0.7));
  }

  TEST_CASE("strategy config parsing") {
    for (int kind = 0; kind <= static_cast<int>(StrategyKind::AnchoredNoise); ++kind) {
      StrategyConfig c = strategy(static_cast<StrategyKind>(kind), 2);
      const StrategyConfig back = strategy_config_from_json(to_json(c));
      CHECK(back.kind == c.kind);
      CHECK(to_json(back) == to_json(c));
    }
    CHECK(code_of([] { strategy_kind_from_string("psychic"); }) == ErrorCode::InvalidArgument);
    StrategyConfig bad = strategy(StrategyKind::BelowWinner);
    bad.delta = 0;
    CHECK(code_of([&] { bad.validate(); }) == ErrorCode::InvalidArgument);
    bad = strategy(StrategyKind::LevelK, -1);
    CHECK(code_of([&] { bad.validate(); }) == ErrorCode::InvalidArgument);
  }

  TEST_CASE("strategy backend is deterministic and reads the last winner") {
    StrategyBackend backend(strategy(StrategyKind::RatioOfWinner), rule(2, 3));
    GenerationParams p;
    p.seed = 99;
    const std::vector<Message> history{
        Message("env", Role::System, "The 2/3 of the average for this round is 12.77. Let's move on.")};
    const auto a = backend.generate("prompt", history, p);
    const auto b = backend.generate("prompt", history, p);
    CHECK(a.text == b.text);
    CHECK(a.token_count == count_whitespace_tokens(a.text));
    REQUIRE(last_number(a.text).has_value());
    CHECK(*last_number(a.text) == Approx(8.513333).epsilon(1e-5));

    const Message first("p", Role::User, a.text);
    const auto extracted = backend.generate(std::string(kExtractionPrompt), std::span(&first, 1), p);
    CHECK(last_number(extracted.text) == last_number(a.text));
  }

  TEST_CASE("scripted backend replays then runs dry") {
    ScriptedBackend s({"only"});
    CHECK(s.generate("", {}, {}).text == "only");
    CHECK(code_of([&] { s.generate("", {}, {}); }) == ErrorCode::BackendError);
    CHECK(s.calls() == 1);
  }

  TEST_CASE("dummy backend sleeps then answers in range, deterministically") {
    DummyBackend d(std::chrono::milliseconds(300));
    GenerationParams p;
    p.seed = 4;
    const auto t0 = std::chrono::steady_clock::now();
    const auto r = d.generate("prompt", {}, p);
    CHECK(std::chrono::steady_clock::now() - t0 >= std::chrono::milliseconds(300));
    const auto v = last_number(r.text);
    REQUIRE(v.has_value());
    CHECK(*v >= 0);
    CHECK(*v <= 100);
    CHECK(d.generate("prompt", {}, p).text == r.text);
    p.seed = 5;
    CHECK(d.generate("prompt", {}, p).text != r.text);
  }

  TEST_CASE("number extraction") {
    CHECK(last_number("My reported number is **33**.") == 33.0);
    CHECK(last_number("from 50 down to 14.81") == 14.81);
    CHECK(last_number("I say -3.5") == -3.5);
    CHECK_FALSE(last_number("no digits here").has_value());
    CHECK(count_whitespace_tokens("  a b\tc\n") == 3);
    const std::vector<Message> h{
        Message("env", Role::System, "The 2/3 of the average for this round is 20."),
        Message("x", Role::User, "other 7"),
        Message("env", Role::System, "The 2/3 of the average of this round is 13.5.")};
    CHECK(last_announced_winner(h) == 13.5);
    CHECK_FALSE(last_announced_winner(std::span(h).first(0)).has_value());
  }

  TEST_CASE("seed derivation is stable and spreads") {
    CHECK(derive_seed(1, "a", 1) == derive_seed(1, "a", 1));
    CHECK(derive_seed(1, "a", 1) != derive_seed(1, "a", 2));
    CHECK(derive_seed(1, "a", 1) != derive_seed(1, "b", 1));
    CHECK(derive_seed(1, "a", 1) != derive_seed(2, "a", 1));
  }

  TEST_CASE("remote backend against a stub endpoint") {
    StubEndpoint stub({});
    RemoteBackend backend(remote(stub.url()));
    const std::vector<Message> history{Message("u", Role::User, "go")};
    const auto r = backend.generate("sys", history, {});
    CHECK(r.text == "I pick 42.");
    CHECK(r.token_count == 17);
    const json body = stub.last_body();
    CHECK(body["model"] == "stub");
    CHECK(body["messages"].size() == 2);
    CHECK(body["messages"][0]["role"] == "system");
    CHECK(body["messages"][1]["content"] == "go");
  }

  TEST_CASE("remote backend retries server errors") {
    StubEndpoint stub({500, 500});
    RemoteBackend backend(remote(stub.url()));
    CHECK(backend.generate("sys", {}, {}).text == "I pick 42.");
    CHECK(stub.hits() == 3);

    StubEndpoint down({500, 500, 500, 500, 500});
    RemoteBackend give_up(remote(down.url()));
    CHECK(code_of([&] { give_up.generate("sys", {}, {}); }) == ErrorCode::BackendError);
    CHECK(down.hits() == 4);
  }

  TEST_CASE("remote backend credentials") {
    StubEndpoint denied({401});
    RemoteBackend backend(remote(denied.url()));
    CHECK(code_of([&] { backend.generate("sys", {}, {}); }) == ErrorCode::AuthError);

    StubEndpoint stub({});
    RemoteConfig c = remote(stub.url());
    c.api_key_env = "AGENTSIM_TEST_KEY_UNSET";
    ::unsetenv("AGENTSIM_TEST_KEY_UNSET");
    RemoteBackend needs_key(c);
    CHECK(code_of([&] { needs_key.generate("sys", {}, {}); }) == ErrorCode::AuthError);
    CHECK(stub.hits() == 0);
    ::setenv("AGENTSIM_TEST_KEY_UNSET", "k123", 1);
    needs_key.generate("sys", {}, {});
    CHECK(stub.last_auth() == "Bearer k123");
    ::unsetenv("AGENTSIM_TEST_KEY_UNSET");

    CHECK(code_of([] { RemoteBackend(remote("https://example.com")); }) == ErrorCode::InvalidArgument);
  }

  TEST_CASE("make_backend dispatch") {
    CHECK(make_backend(json{{"type", "dummy"}, {"sleep_ms", 0}}, rule(2, 3))->kind() == "dummy");
    CHECK(make_backend(json{{"type", "scripted"}, {"script", {"1"}}}, rule(2, 3))->kind() == "scripted");
    CHECK(make_backend(json{{"type", "strategy"}}, rule(2, 3))->kind() == "strategy");
    CHECK(code_of([] { make_backend(json{{"type", "oracle"}}, rule(2, 3)); }) == ErrorCode::InvalidArgument);
  }
}
