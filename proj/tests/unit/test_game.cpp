#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

#include "agentsim/error.hpp"
#include "agentsim/environment.hpp"
#include "agentsim/game.hpp"
#include "agentsim/player.hpp"

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

// A player that reports value every round through the two-call pipeline.
AgentRef fixed_player(const std::string &name, double value, int rounds, const GameRule &r) {
  json script = json::array();
  for (int i = 0; i < rounds; ++i) {
    script.push_back("After some thought my reported number is " + format_number(value) + ".");
    script.push_back(format_number(value));
  }
  return spawn_local(player_def(name, "prompt", json{{"type", "scripted"}, {"script", script}}, r, 1));
}

std::filesystem::path scratch_dir(const std::string &tag) {
  auto dir = std::filesystem::temp_directory_path() / ("agentsim-test-" + tag + "-" + new_uuid());
  std::filesystem::remove_all(dir);
  return dir;
}

std::string slurp(const std::filesystem::path &p) {
  std::ifstream in(p);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

} // namespace

TEST_SUITE("game-engine") {
  TEST_CASE("rules") {
    CHECK(parse_ratio("51/100") == Ratio{51, 100});
    for (const char *bad : {"3/x", "1/0", "3/2", "0/5", "2-3", ""})
      CHECK(code_of([&] { rule(1, 1).ratio = parse_ratio(bad); }) == ErrorCode::InvalidArgument);
    CHECK(rule(2, 3).phrase() == "2/3");
    CHECK(rule(1, 2, 5).phrase() == "5 plus 1/2");
    CHECK(rule(1, 2, 5).fixed_point() == 10.0);
    GameRule bad = rule(2, 3);
    bad.winner_band = 0;
    CHECK(code_of([&] { bad.validate(); }) == ErrorCode::InvalidArgument);
    bad = rule(3, 2);
    CHECK(code_of([&] { bad.validate(); }) == ErrorCode::InvalidArgument);
    const GameRule back = game_rule_from_json(to_json(rule(51, 100, 5)));
    CHECK(back.ratio == Ratio{51, 100});
    CHECK(back.offset == 5);
  }

  TEST_CASE("compute_target examples") {
    const std::vector<double> fifties(10, 50.0), tens(10, 10.0), ends{0, 100};
    CHECK(compute_target(rule(2, 3), fifties) == Approx(100.0 / 3).epsilon(1e-12));
    CHECK(compute_target(rule(1, 2, 5), tens) == 10.0);
    CHECK(compute_target(rule(2, 3), ends) == Approx(100.0 / 3).epsilon(1e-12));
    CHECK(code_of([] { compute_target(rule(2, 3), {}); }) == ErrorCode::EmptyReports);
  }

  TEST_CASE("target is linear in the reports") {
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> u(0, 100);
    for (int t = 0; t < 200; ++t) {
      const GameRule r = rule(1 + static_cast<std::int64_t>(rng() % 9), 10, static_cast<double>(rng() % 10));
      std::vector<double> xs(1 + rng() % 40);
      for (auto &x : xs)
        x = u(rng);
      const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / xs.size();
      CHECK(compute_target(r, xs) == Approx(r.offset + r.ratio.value() * mean).epsilon(1e-12));
    }
  }

  TEST_CASE("everyone at the fixed point wins") {
    for (const auto &r : {rule(2, 3), rule(1, 2, 5), rule(51, 100)}) {
      const std::vector<double> xs(9, r.fixed_point());
      const double t = compute_target(r, xs);
      CHECK(t == Approx(r.fixed_point()));
      const Winners w = determine_winners(xs, t, 0.5);
      CHECK(w.exact.size() == 9);
      CHECK(w.band.size() == 9);
    }
  }

  TEST_CASE("winner examples") {
    const std::vector<double> xs{33, 34, 50};
    const double t = compute_target(rule(2, 3), xs);
    const Winners w = determine_winners(xs, t, 0.5);
    std::size_t best = 0;
    for (std::size_t i = 1; i < xs.size(); ++i)
      if (std::abs(xs[i] - t) < std::abs(xs[best] - t))
        best = i;
    CHECK(w.exact == std::vector<std::size_t>{best});

    const double target = 12.3;
    const std::vector<double> edge{target + 0.5, target - 0.5, target + 0.50001};
    const Winners e = determine_winners(edge, target, 0.5);
    CHECK(e.band == std::vector<std::size_t>{0, 1});
    CHECK(e.exact == std::vector<std::size_t>{0, 1});
  }

  TEST_CASE("summarize examples") {
    const std::vector<double> a{1, 2, 3};
    const Stats s = summarize(a);
    CHECK(s.avg == 2);
    CHECK(s.std == Approx(0.8164966).epsilon(1e-6));
    CHECK(s.median == 2);
    CHECK(s.min == 1);
    CHECK(s.max == 3);
    const std::vector<double> b{0, 0, 100};
    CHECK(summarize(b).mode == 0);
    const std::vector<double> c{4, 1, 3, 2};
    CHECK(summarize(c).median == 2.5);
    const std::vector<double> tie{7, 3, 7, 3};
    CHECK(summarize(tie).mode == 3);
    CHECK(code_of([] { summarize({}); }) == ErrorCode::EmptyReports);
  }

  TEST_CASE("stats ordering holds for random inputs") {
    std::mt19937_64 rng(12);
    std::uniform_real_distribution<double> u(0, 100);
    for (int t = 0; t < 300; ++t) {
      std::vector<double> xs(1 + rng() % 50);
      for (auto &x : xs)
        x = u(rng);
      const Stats s = summarize(xs);
      CHECK(s.min <= s.median);
      CHECK(s.median <= s.max);
      CHECK(s.min <= s.avg + 1e-12);
      CHECK(s.avg <= s.max + 1e-12);
      CHECK(s.std >= 0);
    }
  }

  TEST_CASE("elicit_report pipeline") {
    StrategyConfig level1;
    StrategyBackend strategy(level1, rule(2, 3));
    const Report r = elicit_report(strategy, "prompt", {}, {}, rule(2, 3));
    CHECK(r.value == Approx(100.0 / 3).epsilon(1e-12));
    CHECK(r.backend_calls == 2);
    CHECK_FALSE(r.used_fallback);

    ScriptedBackend bold({"My reported number is **33**.", "33"});
    CHECK(elicit_report(bold, "p", {}, {}, rule(2, 3)).value == 33);

    ScriptedBackend fallback({"My reported number is **33**.", "I cannot tell."});
    const Report f = elicit_report(fallback, "p", {}, {}, rule(2, 3));
    CHECK(f.value == 33);
    CHECK(f.used_fallback);
    CHECK(f.token_count == 5 + 3);

    ScriptedBackend none({"I refuse to answer.", "nothing"});
    CHECK(code_of([&] { elicit_report(none, "p", {}, {}, rule(2, 3)); }) == ErrorCode::UnparseableReport);
    ScriptedBackend high({"I pick 150.", "150"});
    CHECK(code_of([&] { elicit_report(high, "p", {}, {}, rule(2, 3)); }) == ErrorCode::OutOfRangeReport);
  }

  TEST_CASE("prompt errors") {
    CHECK(code_of([] { build_prompt(PromptVariant::P5, rule(2, 3)); }) == ErrorCode::MissingBackground);
    CHECK(code_of([] { build_prompt(PromptVariant::Group, rule(2, 3)); }) == ErrorCode::MissingGroupInfo);
    CHECK(build_prompt(PromptVariant::P1, rule(2, 3)).find("closest to 2/3 of the average") != std::string::npos);
    CHECK(build_prompt(PromptVariant::P2, rule(1, 2, 5)).find("5 plus 1/2 of the average") != std::string::npos);
    CHECK(prompt_variant_from_string("group") == PromptVariant::Group);
    CHECK(code_of([] { prompt_variant_from_string("6"); }) == ErrorCode::InvalidArgument);
  }

  TEST_CASE("individual game announces winners through the environment") {
    const GameRule r = rule(2, 3);
    std::vector<AgentRef> agents{fixed_player("a", 30, 2, r), fixed_player("b", 60, 2, r),
                                 fixed_player("c", 90, 2, r)};
    GameOptions opts;
    opts.rule = r;
    opts.rounds = 2;
    auto env = Environment::create("game");
    const auto results = run_game(agents, opts, env);
    REQUIRE(results.size() == 2);
    CHECK(results[0].target == 40.0);
    CHECK(results[0].exact_winners == std::vector<std::string>{"a"});
    CHECK(results[0].reports.at("b") == 60);
    CHECK(results[0].token_counts.at("a") > 0);
    CHECK(env->get("winner") == 40.0);
    agents[2].with_local([](Agent &a) {
      int seen = 0;
      for (const auto &m : a.memory())
        seen += m.content() == "The winner number of this round is 40. Let's move on to the next round.";
      CHECK(seen == 2);
    });
  }

  TEST_CASE("three groups of five match the hand computation") {
    const GameRule r = rule(2, 3);
    const std::vector<std::vector<double>> values{
        {10, 20, 30, 40, 50}, {0, 0, 0, 0, 5}, {60, 70, 80, 90, 100}};
    std::vector<AgentRef> agents;
    for (std::size_t g = 0; g < values.size(); ++g)
      for (std::size_t i = 0; i < values[g].size(); ++i)
        agents.push_back(fixed_player("g" + std::to_string(g + 1) + "-" + std::to_string(i), values[g][i], 1, r));
    GameOptions opts;
    opts.rule = r;
    opts.topology = Topology::Groups;
    opts.groups = 3;
    const auto results = run_game(agents, opts, Environment::create("global"));
    REQUIRE(results.size() == 1);
    const RoundResult &rr = results[0];
    REQUIRE(rr.group_averages.has_value());
    CHECK(rr.group_averages->at(1) == 30);
    CHECK(rr.group_averages->at(2) == 1);
    CHECK(rr.group_averages->at(3) == 80);
    CHECK(rr.target == Approx(2.0 * 37 / 3).epsilon(1e-12));
    CHECK(rr.winning_groups == std::vector<int>{1});
    CHECK(rr.exact_winners.size() == 5);
    CHECK(rr.stats.avg == Approx(555.0 / 15));
    const std::string expected = group_announcement(r, rr.target, std::vector<double>{30, 1, 80});
    CHECK(expected.find("Group 1: 30, Group 2: 1, Group 3: 80") != std::string::npos);
    for (const auto &a : agents)
      a.with_local([&](Agent &agent) {
        CHECK(std::count_if(agent.memory().begin(), agent.memory().end(),
                            [&](const Message &m) { return m.content() == expected; }) == 1);
      });
  }

  TEST_CASE("failed agents are left out of the round") {
    const GameRule r = rule(2, 3);
    std::vector<AgentRef> agents{fixed_player("ok", 30, 1, r),
                                 spawn_local(player_def("broken", "p", json{{"type", "scripted"}, {"script", {"no", "no"}}}, r, 1))};
    GameOptions opts;
    opts.rule = r;
    const auto results = run_game(agents, opts, nullptr);
    CHECK(results[0].failed == std::vector<std::string>{"broken"});
    CHECK(results[0].reports.size() == 1);
    CHECK(results[0].target == 20);
  }

  TEST_CASE("run_game argument checks") {
    GameOptions opts;
    CHECK(code_of([&] { run_game({}, opts, nullptr); }) == ErrorCode::InvalidArgument);
    std::vector<AgentRef> twins{fixed_player("x", 1, 1, opts.rule), fixed_player("x", 2, 1, opts.rule)};
    CHECK(code_of([&] { run_game(twins, opts, nullptr); }) == ErrorCode::InvalidArgument);
  }

  TEST_CASE("export writes three files") {
    RoundResult r;
    r.round_index = 1;
    r.reports = {{"a", 10.5}, {"b", 99.9}, {"c", 100}};
    r.target = 42;
    r.stats = summarize(std::vector<double>{10.5, 99.9, 100});
    const auto dir = scratch_dir("export");
    export_results(std::span(&r, 1), dir);
    const json rounds = json::parse(slurp(dir / "rounds.json"));
    CHECK(rounds.size() == 1);
    CHECK(rounds[0]["target"] == 42);
    const std::string stats = slurp(dir / "stats.csv");
    CHECK(stats.rfind("round,avg,", 0) == 0);
    CHECK(std::count(stats.begin(), stats.end(), '\n') == 2);
    const std::string hist = slurp(dir / "hist.csv");
    CHECK(std::count(hist.begin(), hist.end(), '\n') == 101);
    CHECK(hist.find("1,99,100,2\n") != std::string::npos);
    CHECK(hist.find("1,10,11,1\n") != std::string::npos);

    const auto empty = scratch_dir("empty");
    export_results({}, empty);
    CHECK(json::parse(slurp(empty / "rounds.json")).empty());
    CHECK(code_of([&] { export_results({}, "/proc/agentsim-cannot-write"); }) == ErrorCode::IoError);
    std::filesystem::remove_all(dir);
    std::filesystem::remove_all(empty);
  }

  TEST_CASE("strategy mix parsing and quotas") {
    const auto mix = parse_strategy_mix("level_k:2=0.5, below_winner:0.1=0.25,anchored_noise:3=0.25");
    REQUIRE(mix.size() == 3);
    CHECK(mix[0].config.k == 2);
    CHECK(mix[1].config.delta == 0.1);
    CHECK(mix[2].config.sigma == 3.0);
    for (const char *bad : {"", "level_k", "level_k=0.5", "psychic=1", "fixed_zero:3=1",
                            "level_k=1,", "level_k:x=1", "level_k=-1,uniform=2", "level_k=1x"})
      CHECK_MESSAGE(code_of([&] { parse_strategy_mix(bad); }) == ErrorCode::ConfigError, bad);

    const std::vector<double> w{0.6, 0.2, 0.2};
    CHECK(quota_counts(w, 1000) == std::vector<std::size_t>{600, 200, 200});
    CHECK(quota_counts(w, 7) == std::vector<std::size_t>{4, 2, 1});
    const std::vector<double> thirds{1.0 / 3, 1.0 / 3, 1.0 / 3};
    const auto c = quota_counts(thirds, 10);
    CHECK(std::accumulate(c.begin(), c.end(), std::size_t{0}) == 10);
  }

  TEST_CASE("simulation config validation") {
    SimulationConfig ok;
    ok.validate();
    const SimulationConfig back = simulation_config_from_json(to_json(ok));
    CHECK(to_json(back) == to_json(ok));
    auto broken = [&](auto mutate) {
      SimulationConfig c;
      mutate(c);
      return code_of([&] { c.validate(); });
    };
    CHECK(broken([](SimulationConfig &c) { c.agents = 0; }) == ErrorCode::ConfigError);
    CHECK(broken([](SimulationConfig &c) { c.backend = "oracle"; }) == ErrorCode::ConfigError);
    CHECK(broken([](SimulationConfig &c) { c.backend = "scripted"; }) == ErrorCode::ConfigError);
    CHECK(broken([](SimulationConfig &c) { c.prompt = PromptVariant::P5; }) == ErrorCode::ConfigError);
    CHECK(broken([](SimulationConfig &c) { c.groups = 101; }) == ErrorCode::ConfigError);
    CHECK(broken([](SimulationConfig &c) { c.strategy_mix = "level_k=0.5"; }) == ErrorCode::ConfigError);
    CHECK(code_of([] { simulation_config_from_json(json{{"ratio", "9/4"}}); }) == ErrorCode::ConfigError);
    CHECK(code_of([] { simulation_config_from_json(json::array()); }) == ErrorCode::ConfigError);
  }

  TEST_CASE("run_simulation exports and is reproducible") {
    SimulationConfig cfg;
    cfg.agents = 12;
    cfg.rounds = 3;
    cfg.strategy_mix = "level_k:1=0.5,anchored_noise=0.5";
    cfg.seed = 5;
    const auto dir = scratch_dir("sim");
    cfg.out_dir = dir.string();
    const SimulationSummary a = run_simulation(cfg);
    REQUIRE(a.rounds.size() == 3);
    CHECK(std::filesystem::exists(dir / "stats.csv"));
    cfg.out_dir.clear();
    const SimulationSummary b = run_simulation(cfg);
    for (int i = 0; i < 3; ++i)
      CHECK(a.rounds[i].reports == b.rounds[i].reports);
    std::filesystem::remove_all(dir);
  }
}
