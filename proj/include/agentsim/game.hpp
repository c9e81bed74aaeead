#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "agentsim/backends.hpp"
#include "agentsim/environment.hpp"
#include "agentsim/rule.hpp"
#include "agentsim/runtime.hpp"

namespace agentsim {

enum class PromptVariant { P1, P2, P3, P4, P5, P7, Group };

std::string_view to_string(PromptVariant v) noexcept; // "1".."7", "group"
PromptVariant prompt_variant_from_string(std::string_view text);

struct GroupInfo {
  int count = 3;
  int id = 1; // 1-based
};

// Throws MissingBackground (P5) or MissingGroupInfo (Group).
std::string build_prompt(PromptVariant variant, const GameRule &rule,
                         const std::optional<std::string> &background = std::nullopt,
                         const std::optional<GroupInfo> &group = std::nullopt);

std::string individual_announcement(double winner);
std::string group_announcement(const GameRule &rule, double winner,
                               std::span<const double> group_values);

struct Report {
  double value = 0;
  std::string raw_text;
  int token_count = 0; // both calls
  int backend_calls = 0;
  bool used_fallback = false;
};

// Two backend calls: the first produces the response, the second is asked to
// output only the reported number (its sole user message is the first
// response). If the second answer does not parse, the last number in the
// first response is used. Throws UnparseableReport or OutOfRangeReport.
Report elicit_report(Backend &backend, const std::string &system_prompt,
                     std::span<const Message> history, const GenerationParams &params,
                     const GameRule &rule);

double compute_target(const GameRule &rule, std::span<const double> reports); // EmptyReports

struct Winners {
  std::vector<std::size_t> exact; // every index at minimal distance
  std::vector<std::size_t> band;  // |report - target| <= band
};

Winners determine_winners(std::span<const double> reports, double target, double band);

struct Stats {
  double avg = 0, min = 0, max = 0, std = 0, median = 0, mode = 0;
};

// Population std; median averages the middle pair; mode is taken over values
// rounded to two decimals, smallest on ties. Throws EmptyReports.
Stats summarize(std::span<const double> reports);

json to_json(const Stats &s);

struct RoundResult {
  int round_index = 0;
  // Keyed by agent name so results do not depend on generated ids.
  std::map<std::string, double> reports;
  double target = 0;
  std::vector<std::string> exact_winners;
  std::vector<std::string> band_winners;
  Stats stats;
  std::optional<std::map<int, double>> group_averages;
  std::vector<int> winning_groups;
  std::map<std::string, int> token_counts;
  std::vector<std::string> failed;
};

json to_json(const RoundResult &r);

enum class Topology { Individual, Groups };

struct GameOptions {
  GameRule rule;
  int rounds = 1;
  Topology topology = Topology::Individual;
  int groups = 3;
  // Each member's report is spoken in its group's chatroom after the round.
  bool group_chatter = false;
  std::size_t parallelism = 64;
  std::string hub_url; // round progress is posted here when set
  std::string sim_id;
  std::function<void(const RoundResult &)> on_round;
};

// Per round: ask every agent for its number in parallel, score the round,
// set the winner in the environment and let its listeners deliver the
// announcement before the next round. Agents whose report fails are left out
// of the round.
std::vector<RoundResult> run_game(const std::vector<AgentRef> &agents, const GameOptions &opts,
                                  const std::shared_ptr<Environment> &env);

// rounds.json, stats.csv and hist.csv under out_dir. Throws IoError.
void export_results(std::span<const RoundResult> results, const std::filesystem::path &out_dir);

struct StrategyMixEntry {
  StrategyConfig config;
  double weight = 0;
};

// "kind[:param]=weight,..." with weights summing to 1 within 1e-6. param is k
// for level_k, delta for below_winner and sigma for anchored_noise.
std::vector<StrategyMixEntry> parse_strategy_mix(std::string_view spec);

// Largest-remainder counts per weight.
std::vector<std::size_t> quota_counts(std::span<const double> weights, std::size_t total);

struct SimulationConfig {
  int agents = 100;
  int rounds = 1;
  GameRule rule;
  PromptVariant prompt = PromptVariant::P2;
  std::string backend = "strategy"; // strategy | dummy | scripted | remote
  std::string strategy_mix = "level_k:1=1";
  int groups = 0; // 0: individual play (3 when the group prompt is chosen)
  std::string population_config;
  std::vector<Endpoint> servers;
  std::uint64_t seed = 0;
  std::string out_dir;
  double temperature = 1.0;
  int max_tokens = 1024;
  int dummy_sleep_ms = 1000;
  std::vector<std::string> script;
  json remote = json::object();
  std::size_t parallelism = 0; // 0: one thread per agent, capped at 256
  std::string hub_url;
  std::string sim_id;

  void validate() const; // throws ConfigError
};

json to_json(const SimulationConfig &cfg);
SimulationConfig simulation_config_from_json(const json &j); // throws ConfigError

struct SimulationSummary {
  std::vector<RoundResult> rounds;
  double seconds = 0;
};

json to_json(const SimulationSummary &s);

SimulationSummary run_simulation(const SimulationConfig &cfg);

} // namespace agentsim
