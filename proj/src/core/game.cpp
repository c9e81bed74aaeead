#include "agentsim/game.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

#include <spdlog/spdlog.h>

#include "agentsim/error.hpp"
#include "agentsim/hub.hpp"
#include "agentsim/player.hpp"
#include "agentsim/population.hpp"
#include "agentsim/thread_pool.hpp"

namespace agentsim {

std::string_view to_string(PromptVariant v) noexcept {
  switch (v) {
  case PromptVariant::P1: return "1";
  case PromptVariant::P2: return "2";
  case PromptVariant::P3: return "3";
  case PromptVariant::P4: return "4";
  case PromptVariant::P5: return "5";
  case PromptVariant::P7: return "7";
  case PromptVariant::Group: return "group";
  }
  return "?";
}

PromptVariant prompt_variant_from_string(std::string_view text) {
  for (auto v : {PromptVariant::P1, PromptVariant::P2, PromptVariant::P3, PromptVariant::P4,
                 PromptVariant::P5, PromptVariant::P7, PromptVariant::Group})
    if (to_string(v) == text)
      return v;
  fail(ErrorCode::InvalidArgument, "unknown prompt '" + std::string(text) + "'");
}

namespace {

std::string rule_lines(const GameRule &rule) {
  return "1. Each player reports a real number between " + format_number(rule.lower) + " and " +
         format_number(rule.upper) +
         ", inclusive.\n"
         "2. The winner will be the player whose number is the closest to " +
         rule.phrase() + " of the average of all reported numbers.\n";
}

constexpr std::string_view kIntro = "You are playing a multiplayer game.\n";
constexpr std::string_view kStepByStep = "Think step by step and then report your number.";
constexpr std::string_view kNote =
    "This game is a variation of the famous \"guess the 2/3 of the average\" game.";

} // namespace

std::string build_prompt(PromptVariant variant, const GameRule &rule,
                         const std::optional<std::string> &background,
                         const std::optional<GroupInfo> &group) {
  std::string out;
  switch (variant) {
  case PromptVariant::P1:
    out = std::string(kIntro) + "\n# Game Rule\n" + rule_lines(rule) +
          "\nDirectly report your number without additional information.";
    break;
  case PromptVariant::P2:
  case PromptVariant::P7:
    out = std::string(kIntro) + "\n# Game Rule\n" + rule_lines(rule) + "\n" +
          std::string(kStepByStep);
    break;
  case PromptVariant::P3:
    out = std::string(kIntro) + "\n# Game Rule\n" + rule_lines(rule) +
          "\n# Note:\n1. All players are rational.\n\n" + std::string(kStepByStep);
    break;
  case PromptVariant::P4:
    out = std::string(kIntro) + "\n# Game Rule\n" + rule_lines(rule) +
          "\n# Note:\n1. All players are rational.\n"
          "2. All players will try to guess the others' strategies to adjust their own "
          "strategies.\n\n" +
          std::string(kStepByStep);
    break;
  case PromptVariant::P5:
    if (!background || background->empty())
      fail(ErrorCode::MissingBackground, "prompt 5 needs a character background");
    out = "You are playing a role in a multiplayer game, make sure your behavior fits the "
          "following character background.\n\n# Character Background\n\n" +
          *background + "\n\n# Game Rule\n" + rule_lines(rule) +
          "\n# Note\n1. Please strictly follow your character background in the game.\n\n" +
          std::string(kStepByStep);
    break;
  case PromptVariant::Group:
    if (!group || group->count < 1 || group->id < 1 || group->id > group->count)
      fail(ErrorCode::MissingGroupInfo, "group prompt needs a group count and id");
    out = std::string(kIntro) + "\n# Game Rule\n1. There are " + std::to_string(group->count) +
          " groups of players in the game.\n2. Each player reports a real number between " +
          format_number(rule.lower) + " and " + format_number(rule.upper) +
          ", inclusive.\n3. Each group reports the average of all players in the group.\n"
          "4. The winner will be the group whose number is the closest to " +
          rule.phrase() + " of the average of all groups' numbers.\n5. You are in group " +
          std::to_string(group->id) + ".\n\n" + std::string(kStepByStep);
    break;
  }
  if (rule.variation_note)
    out += "\n\n" + std::string(kNote);
  return out;
}

std::string individual_announcement(double winner) {
  return "The winner number of this round is " + format_number(winner) +
         ". Let's move on to the next round.";
}

std::string group_announcement(const GameRule &rule, double winner,
                               std::span<const double> group_values) {
  std::string out = "The " + rule.phrase() + " of the average for this round is " +
                    format_number(winner) + ". The numbers reported by groups are ";
  for (std::size_t i = 0; i < group_values.size(); ++i) {
    if (i)
      out += ", ";
    out += "Group " + std::to_string(i + 1) + ": " + format_number(group_values[i]);
  }
  out += ". Let's move on to the next round.";
  return out;
}

Report elicit_report(Backend &backend, const std::string &system_prompt,
                     std::span<const Message> history, const GenerationParams &params,
                     const GameRule &rule) {
  Report report;
  const GenerationResult first = backend.generate(system_prompt, history, params);
  report.raw_text = first.text;
  report.token_count = first.token_count;
  report.backend_calls = 1;

  const Message request("game", Role::User, first.text);
  const GenerationResult second =
      backend.generate(std::string(kExtractionPrompt), std::span(&request, 1), params);
  report.token_count += second.token_count;
  report.backend_calls = 2;

  std::optional<double> value = last_number(second.text);
  if (!value) {
    value = last_number(first.text);
    report.used_fallback = true;
  }
  if (!value)
    fail(ErrorCode::UnparseableReport, "no number in response: " + first.text.substr(0, 200));
  if (!std::isfinite(*value) || *value < rule.lower || *value > rule.upper)
    fail(ErrorCode::OutOfRangeReport, "reported " + format_number(*value) + " outside [" +
                                          format_number(rule.lower) + ", " +
                                          format_number(rule.upper) + "]");
  report.value = *value;
  return report;
}

double compute_target(const GameRule &rule, std::span<const double> reports) {
  if (reports.empty())
    fail(ErrorCode::EmptyReports, "no reports");
  const double mean =
      std::accumulate(reports.begin(), reports.end(), 0.0) / static_cast<double>(reports.size());
  return rule.apply(mean);
}

Winners determine_winners(std::span<const double> reports, double target, double band) {
  Winners w;
  if (reports.empty())
    return w;
  double best = std::abs(reports[0] - target);
  for (double r : reports)
    best = std::min(best, std::abs(r - target));
  for (std::size_t i = 0; i < reports.size(); ++i) {
    if (std::abs(reports[i] - target) == best)
      w.exact.push_back(i);
    // Compared against the interval ends so a report built as target + band is
    // inside regardless of subtraction rounding.
    if (reports[i] >= target - band && reports[i] <= target + band)
      w.band.push_back(i);
  }
  return w;
}

Stats summarize(std::span<const double> reports) {
  if (reports.empty())
    fail(ErrorCode::EmptyReports, "no reports");
  const auto n = static_cast<double>(reports.size());
  std::vector<double> sorted(reports.begin(), reports.end());
  std::sort(sorted.begin(), sorted.end());
  Stats s;
  s.avg = std::accumulate(sorted.begin(), sorted.end(), 0.0) / n;
  s.min = sorted.front();
  s.max = sorted.back();
  double ss = 0;
  for (double x : sorted)
    ss += (x - s.avg) * (x - s.avg);
  s.std = std::sqrt(ss / n);
  const std::size_t mid = sorted.size() / 2;
  s.median = sorted.size() % 2 ? sorted[mid] : (sorted[mid - 1] + sorted[mid]) / 2.0;

  std::map<double, int> freq;
  for (double x : sorted)
    ++freq[std::round(x * 100.0) / 100.0];
  int best = 0;
  for (const auto &[v, c] : freq) {
    if (c > best) {
      best = c;
      s.mode = v;
    }
  }
  return s;
}

json to_json(const Stats &s) {
  return json{{"avg", s.avg},       {"min", s.min},       {"max", s.max},
              {"std", s.std},       {"median", s.median}, {"mode", s.mode}};
}

json to_json(const RoundResult &r) {
  json j{{"round", r.round_index},
         {"reports", r.reports},
         {"target", r.target},
         {"exact_winners", r.exact_winners},
         {"band_winners", r.band_winners},
         {"stats", to_json(r.stats)},
         {"token_counts", r.token_counts},
         {"failed", r.failed}};
  if (r.group_averages) {
    json g = json::object();
    for (const auto &[id, v] : *r.group_averages)
      g[std::to_string(id)] = v;
    j["group_averages"] = std::move(g);
    j["winning_groups"] = r.winning_groups;
  }
  return j;
}

namespace {

struct Outcome {
  std::optional<double> value;
  int tokens = 0;
  std::string error;
};

std::vector<Outcome> elicit_all(const std::vector<AgentRef> &agents, int round,
                                std::size_t parallelism) {
  const std::size_t n = agents.size();
  std::vector<std::optional<Payload>> pending(n);
  std::vector<Outcome> out(n);
  const Message request("game", Role::User,
                        "Round " + std::to_string(round) + ". Please report your number.",
                        Metadata{{"round", static_cast<std::int64_t>(round)}});
  const Payload input = request;

  parallel_for(n, parallelism, [&](std::size_t i) {
    try {
      pending[i] = call(agents[i], input);
    } catch (const std::exception &e) {
      out[i].error = e.what();
    }
  });
  parallel_for(n, parallelism, [&](std::size_t i) {
    if (!pending[i])
      return;
    try {
      const Message m = resolve(*pending[i]);
      out[i].value = m.number("value");
      if (!out[i].value)
        out[i].value = last_number(m.content());
      if (!out[i].value)
        out[i].error = "reply carries no number";
      out[i].tokens = static_cast<int>(m.number("tokens").value_or(0));
    } catch (const std::exception &e) {
      out[i].error = e.what();
    }
  });
  return out;
}

json announce_args(int round, double winner, std::string text) {
  return json{{"round", round}, {"winner", winner}, {"text", std::move(text)}};
}

EnvFunction announce_fn() {
  return [](EnvTransaction &tx, const json &args) -> json {
    tx.set("round", args.value("round", 0));
    tx.set("winner", args.value("winner", 0.0));
    if (args.contains("group_values"))
      tx.set("group_values", args["group_values"]);
    return args.value("winner", 0.0);
  };
}

std::string round_progress_path(const std::string &sim_id) {
  return "/api/simulations/" + sim_id + "/rounds";
}

} // namespace

std::vector<RoundResult> run_game(const std::vector<AgentRef> &agents, const GameOptions &opts,
                                  const std::shared_ptr<Environment> &env_in) {
  opts.rule.validate();
  if (agents.empty())
    fail(ErrorCode::InvalidArgument, "run_game needs at least one agent");
  if (opts.rounds < 1)
    fail(ErrorCode::InvalidArgument, "rounds must be >= 1");
  {
    std::set<std::string> names;
    for (const auto &a : agents)
      if (!names.insert(a.name()).second)
        fail(ErrorCode::InvalidArgument, "duplicate agent name '" + a.name() + "'");
  }
  const bool grouped = opts.topology == Topology::Groups;
  const int group_count = grouped ? opts.groups : 1;
  if (grouped && (group_count < 1 || static_cast<std::size_t>(group_count) > agents.size()))
    fail(ErrorCode::InvalidArgument, "group count must be between 1 and the agent count");

  auto env = env_in ? env_in : Environment::create("game");
  const std::size_t n = agents.size();

  // Contiguous, as even as possible.
  std::vector<int> group_of(n, 0);
  std::vector<std::shared_ptr<Environment>> group_envs;
  if (!env->has_fn("announce"))
    env->register_fn("announce", announce_fn());
  if (grouped) {
    for (int g = 0; g < group_count; ++g) {
      auto genv = Environment::create("group-" + std::to_string(g + 1));
      genv->register_fn("announce", announce_fn());
      env->add_child(genv);
      std::vector<AgentRef> members;
      const std::size_t lo = n * g / group_count, hi = n * (g + 1) / group_count;
      for (std::size_t i = lo; i < hi; ++i) {
        group_of[i] = g;
        members.push_back(agents[i]);
        genv->add_child(agents[i]);
      }
      genv->listen("announce", Predicate::always(), members, "{arg:text}");
      if (opts.group_chatter) {
        register_builtin_env_fn(*genv, "speak");
        genv->listen("speak", Predicate::always(), members, "{arg:sender}: {arg:text}");
      }
      group_envs.push_back(std::move(genv));
    }
  } else {
    for (const auto &a : agents)
      if (!env->has_agent(a.agent_id()))
        env->add_child(a);
    env->listen("announce", Predicate::always(), agents, "{arg:text}");
  }

  std::vector<RoundResult> results;
  for (int round = 1; round <= opts.rounds; ++round) {
    const auto outcomes = elicit_all(agents, round, std::max<std::size_t>(1, opts.parallelism));

    RoundResult rr;
    rr.round_index = round;
    std::vector<double> values;
    std::vector<std::size_t> who;
    for (std::size_t i = 0; i < n; ++i) {
      if (outcomes[i].value) {
        values.push_back(*outcomes[i].value);
        who.push_back(i);
        rr.reports[agents[i].name()] = *outcomes[i].value;
        rr.token_counts[agents[i].name()] = outcomes[i].tokens;
      } else {
        rr.failed.push_back(agents[i].name());
        spdlog::warn("round {}: agent {} excluded: {}", round, agents[i].name(),
                     outcomes[i].error);
      }
    }
    if (values.empty())
      fail(ErrorCode::EmptyReports, "round " + std::to_string(round) + ": every agent failed");
    rr.stats = summarize(values);

    if (!grouped) {
      rr.target = compute_target(opts.rule, values);
      const Winners w = determine_winners(values, rr.target, opts.rule.winner_band);
      for (auto i : w.exact)
        rr.exact_winners.push_back(agents[who[i]].name());
      for (auto i : w.band)
        rr.band_winners.push_back(agents[who[i]].name());
      env->invoke("announce",
                  announce_args(round, rr.target, individual_announcement(rr.target)));
    } else {
      std::vector<double> sums(group_count, 0.0);
      std::vector<int> counts(group_count, 0);
      for (std::size_t j = 0; j < values.size(); ++j) {
        sums[group_of[who[j]]] += values[j];
        ++counts[group_of[who[j]]];
      }
      std::map<int, double> averages;
      std::vector<double> means;
      std::vector<int> mean_group;
      for (int g = 0; g < group_count; ++g) {
        if (counts[g] == 0)
          continue;
        averages[g + 1] = sums[g] / counts[g];
        means.push_back(averages[g + 1]);
        mean_group.push_back(g);
      }
      rr.target = compute_target(opts.rule, means);
      const Winners gw = determine_winners(means, rr.target, opts.rule.winner_band);
      std::set<int> winning;
      for (auto i : gw.exact) {
        winning.insert(mean_group[i]);
        rr.winning_groups.push_back(mean_group[i] + 1);
      }
      for (std::size_t j = 0; j < values.size(); ++j)
        if (winning.contains(group_of[who[j]]))
          rr.exact_winners.push_back(agents[who[j]].name());
      const Winners w = determine_winners(values, rr.target, opts.rule.winner_band);
      for (auto i : w.band)
        rr.band_winners.push_back(agents[who[i]].name());
      rr.group_averages = averages;

      std::vector<double> shown;
      for (int g = 0; g < group_count; ++g)
        shown.push_back(counts[g] ? sums[g] / counts[g] : 0.0);
      const std::string text = group_announcement(opts.rule, rr.target, shown);
      json global_args = announce_args(round, rr.target, text);
      global_args["group_values"] = shown;
      env->invoke("announce", global_args);
      for (auto &genv : group_envs)
        genv->invoke("announce", announce_args(round, rr.target, text));
      if (opts.group_chatter) {
        for (std::size_t j = 0; j < values.size(); ++j)
          group_envs[group_of[who[j]]]->invoke(
              "speak", json{{"sender", agents[who[j]].name()},
                            {"text", "I reported " + format_number(values[j]) + "."}});
      }
    }

    if (!opts.hub_url.empty() && !opts.sim_id.empty()) {
      json progress = to_json(rr.stats);
      progress["round"] = round;
      progress["target"] = rr.target;
      try {
        post_round_progress(opts.hub_url, opts.sim_id, progress);
      } catch (const std::exception &e) {
        spdlog::warn("could not post round {} to {}{}: {}", round, opts.hub_url,
                     round_progress_path(opts.sim_id), e.what());
      }
    }
    if (opts.on_round)
      opts.on_round(rr);
    results.push_back(std::move(rr));
  }
  return results;
}

namespace {

void write_file(const std::filesystem::path &path, const std::string &content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out)
    fail(ErrorCode::IoError, "cannot write " + path.string());
  out << content;
  out.flush();
  if (!out)
    fail(ErrorCode::IoError, "write failed for " + path.string());
}

} // namespace

void export_results(std::span<const RoundResult> results, const std::filesystem::path &out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec || !std::filesystem::is_directory(out_dir))
    fail(ErrorCode::IoError, "cannot create " + out_dir.string());

  json rounds = json::array();
  std::string stats = "round,avg,min,max,std,median,mode,target,reports,exact_winners,"
                      "band_winners,failed\n";
  std::string hist = "round,bin_lower,bin_upper,count\n";
  for (const auto &r : results) {
    rounds.push_back(to_json(r));
    const Stats &s = r.stats;
    stats += std::to_string(r.round_index) + "," + format_number(s.avg) + "," +
             format_number(s.min) + "," + format_number(s.max) + "," + format_number(s.std) +
             "," + format_number(s.median) + "," + format_number(s.mode) + "," +
             format_number(r.target) + "," + std::to_string(r.reports.size()) + "," +
             std::to_string(r.exact_winners.size()) + "," +
             std::to_string(r.band_winners.size()) + "," + std::to_string(r.failed.size()) +
             "\n";
    std::array<int, 100> bins{};
    for (const auto &[name, v] : r.reports) {
      const int b = std::clamp(static_cast<int>(std::floor(v)), 0, 99);
      ++bins[b];
    }
    for (int b = 0; b < 100; ++b)
      hist += std::to_string(r.round_index) + "," + std::to_string(b) + "," +
              std::to_string(b + 1) + "," + std::to_string(bins[b]) + "\n";
  }
  write_file(out_dir / "rounds.json", rounds.dump(2) + "\n");
  write_file(out_dir / "stats.csv", stats);
  write_file(out_dir / "hist.csv", hist);
}

std::vector<StrategyMixEntry> parse_strategy_mix(std::string_view spec) {
  std::vector<StrategyMixEntry> out;
  double total = 0;
  std::size_t start = 0;
  while (start <= spec.size()) {
    auto end = spec.find(',', start);
    if (end == std::string_view::npos)
      end = spec.size();
    std::string item(spec.substr(start, end - start));
    start = end + 1;
    item.erase(std::remove_if(item.begin(), item.end(), ::isspace), item.end());
    if (item.empty())
      fail(ErrorCode::ConfigError, "empty entry in strategy mix '" + std::string(spec) + "'");
    const auto eq = item.find('=');
    if (eq == std::string::npos)
      fail(ErrorCode::ConfigError, "strategy mix entry '" + item + "' lacks =weight");
    std::string lhs = item.substr(0, eq);
    StrategyMixEntry e;
    try {
      std::size_t used = 0;
      e.weight = std::stod(item.substr(eq + 1), &used);
      if (used != item.size() - eq - 1)
        throw std::invalid_argument("trailing characters");
      const auto colon = lhs.find(':');
      e.config.kind = strategy_kind_from_string(lhs.substr(0, colon));
      if (colon != std::string::npos) {
        const std::string param = lhs.substr(colon + 1);
        switch (e.config.kind) {
        case StrategyKind::LevelK:
        case StrategyKind::AnchoredNoise:
          if (e.config.kind == StrategyKind::LevelK)
            e.config.k = std::stoi(param);
          else
            e.config.sigma = std::stod(param);
          break;
        case StrategyKind::BelowWinner:
          e.config.delta = std::stod(param);
          break;
        default:
          fail(ErrorCode::ConfigError, "strategy " + lhs.substr(0, colon) + " takes no parameter");
        }
      }
      e.config.validate();
    } catch (const Error &err) {
      if (err.code() == ErrorCode::ConfigError)
        throw;
      fail(ErrorCode::ConfigError, "strategy mix entry '" + item + "': " + err.what());
    } catch (const std::exception &) {
      fail(ErrorCode::ConfigError, "strategy mix entry '" + item + "' is malformed");
    }
    if (!(e.weight >= 0))
      fail(ErrorCode::ConfigError, "negative weight in '" + item + "'");
    total += e.weight;
    out.push_back(e);
    if (end == spec.size())
      break;
  }
  if (std::abs(total - 1.0) > 1e-6)
    fail(ErrorCode::ConfigError, "strategy mix weights sum to " + format_number(total));
  return out;
}

std::vector<std::size_t> quota_counts(std::span<const double> weights, std::size_t total) {
  std::vector<std::size_t> counts(weights.size());
  std::vector<std::pair<double, std::size_t>> rem;
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double exact = weights[i] * static_cast<double>(total);
    counts[i] = static_cast<std::size_t>(std::floor(exact + 1e-9));
    assigned += counts[i];
    rem.emplace_back(exact - static_cast<double>(counts[i]), i);
  }
  std::stable_sort(rem.begin(), rem.end(),
                   [](const auto &a, const auto &b) { return a.first > b.first; });
  for (std::size_t j = 0; assigned < total && j < rem.size(); ++j, ++assigned)
    ++counts[rem[j].second];
  return counts;
}

void SimulationConfig::validate() const {
  auto bad = [](const std::string &why) { fail(ErrorCode::ConfigError, why); };
  if (agents < 1)
    bad("agents must be >= 1");
  if (rounds < 1)
    bad("rounds must be >= 1");
  try {
    rule.validate();
  } catch (const Error &e) {
    bad(e.what());
  }
  static const std::set<std::string> kBackends{"strategy", "dummy", "scripted", "remote"};
  if (!kBackends.contains(backend))
    bad("unknown backend '" + backend + "'");
  if (backend == "strategy")
    parse_strategy_mix(strategy_mix);
  if (backend == "scripted" && script.empty())
    bad("scripted backend needs a script");
  if (backend == "remote" && !remote.contains("base_url"))
    bad("remote backend needs base_url");
  if (prompt == PromptVariant::P5 && population_config.empty())
    bad("prompt 5 needs a population config for backgrounds");
  if (groups < 0 || groups > agents)
    bad("groups must be between 0 and the agent count");
  if (temperature < 0)
    bad("temperature must be >= 0");
}

json to_json(const SimulationConfig &cfg) {
  json servers = json::array();
  for (const auto &s : cfg.servers)
    servers.push_back(s.str());
  return json{{"agents", cfg.agents},
              {"rounds", cfg.rounds},
              {"ratio", cfg.rule.ratio.str()},
              {"offset", cfg.rule.offset},
              {"note", cfg.rule.variation_note},
              {"winner_band", cfg.rule.winner_band},
              {"prompt", to_string(cfg.prompt)},
              {"backend", cfg.backend},
              {"strategy_mix", cfg.strategy_mix},
              {"groups", cfg.groups},
              {"population_config", cfg.population_config},
              {"servers", servers},
              {"seed", cfg.seed},
              {"out", cfg.out_dir},
              {"temperature", cfg.temperature},
              {"max_tokens", cfg.max_tokens},
              {"dummy_sleep_ms", cfg.dummy_sleep_ms},
              {"script", cfg.script},
              {"remote", cfg.remote},
              {"parallelism", cfg.parallelism},
              {"hub", cfg.hub_url},
              {"sim_id", cfg.sim_id}};
}

SimulationConfig simulation_config_from_json(const json &j) {
  SimulationConfig cfg;
  try {
    if (!j.is_object())
      fail(ErrorCode::ConfigError, "simulation config must be an object");
    cfg.agents = j.value("agents", cfg.agents);
    cfg.rounds = j.value("rounds", cfg.rounds);
    if (j.contains("ratio"))
      cfg.rule.ratio = parse_ratio(j["ratio"].get<std::string>());
    cfg.rule.offset = j.value("offset", cfg.rule.offset);
    cfg.rule.variation_note = j.value("note", cfg.rule.variation_note);
    cfg.rule.winner_band = j.value("winner_band", cfg.rule.winner_band);
    if (j.contains("prompt")) {
      const json &p = j["prompt"];
      cfg.prompt = prompt_variant_from_string(p.is_string() ? p.get<std::string>() : p.dump());
    }
    cfg.backend = j.value("backend", cfg.backend);
    cfg.strategy_mix = j.value("strategy_mix", cfg.strategy_mix);
    cfg.groups = j.value("groups", cfg.groups);
    cfg.population_config = j.value("population_config", cfg.population_config);
    if (j.contains("servers")) {
      const json &s = j["servers"];
      std::vector<std::string> items;
      if (s.is_string()) {
        const std::string text = s.get<std::string>();
        std::size_t start = 0;
        while (start < text.size()) {
          auto end = text.find(',', start);
          if (end == std::string::npos)
            end = text.size();
          if (end > start)
            items.push_back(text.substr(start, end - start));
          start = end + 1;
        }
      } else {
        items = s.get<std::vector<std::string>>();
      }
      for (const auto &item : items)
        cfg.servers.push_back(Endpoint::parse(item));
    }
    cfg.seed = j.value("seed", cfg.seed);
    cfg.out_dir = j.value("out", cfg.out_dir);
    cfg.temperature = j.value("temperature", cfg.temperature);
    cfg.max_tokens = j.value("max_tokens", cfg.max_tokens);
    cfg.dummy_sleep_ms = j.value("dummy_sleep_ms", cfg.dummy_sleep_ms);
    if (j.contains("script"))
      cfg.script = j["script"].get<std::vector<std::string>>();
    cfg.remote = j.value("remote", cfg.remote);
    cfg.parallelism = j.value("parallelism", cfg.parallelism);
    cfg.hub_url = j.value("hub", cfg.hub_url);
    cfg.sim_id = j.value("sim_id", cfg.sim_id);
  } catch (const json::exception &e) {
    fail(ErrorCode::ConfigError, std::string("bad simulation config: ") + e.what());
  } catch (const Error &e) {
    if (e.code() == ErrorCode::ConfigError)
      throw;
    fail(ErrorCode::ConfigError, e.what());
  }
  cfg.validate();
  return cfg;
}

json to_json(const SimulationSummary &s) {
  json rounds = json::array();
  for (const auto &r : s.rounds)
    rounds.push_back(to_json(r));
  return json{{"rounds", std::move(rounds)}, {"seconds", s.seconds}};
}

namespace {

std::string padded_name(const std::string &prefix, std::size_t i, std::size_t total) {
  const std::size_t width = std::max<std::size_t>(4, std::to_string(total).size());
  std::string num = std::to_string(i + 1);
  return prefix + std::string(width - num.size(), '0') + num;
}

json backend_spec(const SimulationConfig &cfg, const StrategyConfig *strategy) {
  if (cfg.backend == "strategy")
    return json{{"type", "strategy"}, {"strategy", to_json(*strategy)}};
  if (cfg.backend == "dummy")
    return json{{"type", "dummy"}, {"sleep_ms", cfg.dummy_sleep_ms}};
  if (cfg.backend == "scripted")
    return json{{"type", "scripted"}, {"script", cfg.script}};
  json spec = cfg.remote;
  spec["type"] = "remote";
  return spec;
}

} // namespace

SimulationSummary run_simulation(const SimulationConfig &cfg) {
  cfg.validate();
  const auto started = std::chrono::steady_clock::now();
  const auto n = static_cast<std::size_t>(cfg.agents);
  const int groups = cfg.groups > 0 ? cfg.groups : (cfg.prompt == PromptVariant::Group ? 3 : 0);
  if (groups > cfg.agents)
    fail(ErrorCode::ConfigError, "more groups than agents");

  // Strategy assignment: exact headcounts from the weights, shuffled by seed.
  std::vector<StrategyConfig> strategies(n);
  if (cfg.backend == "strategy") {
    const auto mix = parse_strategy_mix(cfg.strategy_mix);
    std::vector<double> weights;
    for (const auto &e : mix)
      weights.push_back(e.weight);
    const auto counts = quota_counts(weights, n);
    std::vector<std::size_t> slots;
    for (std::size_t e = 0; e < counts.size(); ++e)
      slots.insert(slots.end(), counts[e], e);
    std::mt19937_64 rng(derive_seed(cfg.seed, "strategy-mix", 0));
    std::shuffle(slots.begin(), slots.end(), rng);
    for (std::size_t i = 0; i < n; ++i)
      strategies[i] = mix[slots[i]].config;
  }

  std::vector<std::optional<std::string>> backgrounds(n);
  if (!cfg.population_config.empty()) {
    PopulationConfig pop;
    try {
      pop = load_population_config(cfg.population_config);
    } catch (const Error &e) {
      fail(ErrorCode::ConfigError, e.what());
    }
    pop.population = cfg.agents;
    auto profiles = sample_profiles(pop, cfg.seed, SamplingMode::Independent);
    const json spec = backend_spec(cfg, &strategies[0]);
    auto backend = make_backend(spec, cfg.rule);
    for (std::size_t i = 0; i < n; ++i)
      backgrounds[i] = generate_background(profiles[i], *backend,
                                           derive_seed(cfg.seed, profiles[i].profile_id, 0),
                                           cfg.temperature);
  }

  std::vector<AgentRef> agents;
  agents.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::optional<GroupInfo> group;
    if (groups > 0)
      group = GroupInfo{groups, static_cast<int>(i * groups / n) + 1};
    const PromptVariant variant =
        groups > 0 && cfg.prompt != PromptVariant::P5 ? PromptVariant::Group : cfg.prompt;
    const std::string prompt = build_prompt(variant, cfg.rule, backgrounds[i], group);
    AgentDef def = player_def(padded_name("agent-", i, n), prompt,
                              backend_spec(cfg, &strategies[i]), cfg.rule, cfg.seed,
                              cfg.temperature, cfg.max_tokens);
    AgentRef local = spawn_local(def);
    if (cfg.servers.empty())
      agents.push_back(std::move(local));
    else
      agents.push_back(to_dist(local, cfg.servers[i % cfg.servers.size()]));
  }

  GameOptions opts;
  opts.rule = cfg.rule;
  opts.rounds = cfg.rounds;
  opts.topology = groups > 0 ? Topology::Groups : Topology::Individual;
  opts.groups = groups > 0 ? groups : 3;
  opts.parallelism = cfg.parallelism ? cfg.parallelism : std::min<std::size_t>(n, 256);
  opts.hub_url = cfg.hub_url;
  opts.sim_id = cfg.sim_id;

  SimulationSummary summary;
  try {
    summary.rounds = run_game(agents, opts, Environment::create("game"));
  } catch (...) {
    for (const auto &a : agents)
      if (a.is_proxy())
        try {
          stop(a);
        } catch (const std::exception &) {
        }
    throw;
  }
  for (const auto &a : agents)
    if (a.is_proxy())
      try {
        stop(a);
      } catch (const std::exception &e) {
        spdlog::warn("stopping {}: {}", a.name(), e.what());
      }
  summary.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  if (!cfg.out_dir.empty())
    export_results(summary.rounds, cfg.out_dir);
  return summary;
}

} // namespace agentsim
