#pragma once

#include <chrono>
#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "agentsim/message.hpp"
#include "agentsim/rule.hpp"

namespace agentsim {

struct GenerationParams {
  double temperature = 1.0;
  std::uint64_t seed = 0;
  int max_tokens = 1024;
};

struct GenerationResult {
  std::string text;
  int token_count = 0;
};

// System prompt of the second call in the report pipeline.
inline constexpr std::string_view kExtractionPrompt =
    "You will be given the response of a player in a number guessing game. "
    "Output only the number the player reported, with no other text.";

// Meta prompt prefix used for background generation; backends that synthesize
// backgrounds recognize requests by it.
inline constexpr std::string_view kBackgroundMetaPrefix =
    "You need to generate a person's background description";

int count_whitespace_tokens(std::string_view text);

// Last real number in text, ignoring markdown emphasis. Accepts a leading
// minus sign and a fractional part.
std::optional<double> last_number(std::string_view text);

// The most recent announced winner in history, recognized by the announcement
// wording ("... of this round is X" / "... for this round is X").
std::optional<double> last_announced_winner(std::span<const Message> history);

// splitmix64 mixing of (global seed, agent name, round).
std::uint64_t derive_seed(std::uint64_t global_seed, std::string_view agent_name,
                          std::uint64_t round);

class Backend {
public:
  virtual ~Backend() = default;
  // Must be safe for concurrent calls.
  virtual GenerationResult generate(const std::string &system_prompt,
                                    std::span<const Message> history,
                                    const GenerationParams &params) = 0;
  virtual std::string kind() const = 0;
};

// Sleeps, then reports U[0,100]. Extraction requests answer immediately with
// the number found in the text.
class DummyBackend : public Backend {
public:
  explicit DummyBackend(std::chrono::milliseconds sleep = std::chrono::milliseconds(1000))
      : sleep_(sleep) {}
  GenerationResult generate(const std::string &system_prompt, std::span<const Message> history,
                            const GenerationParams &params) override;
  std::string kind() const override { return "dummy"; }

private:
  std::chrono::milliseconds sleep_;
};

// Replays a fixed list of responses in order; BackendError once exhausted.
class ScriptedBackend : public Backend {
public:
  explicit ScriptedBackend(std::vector<std::string> script) : script_(std::move(script)) {}
  GenerationResult generate(const std::string &system_prompt, std::span<const Message> history,
                            const GenerationParams &params) override;
  std::string kind() const override { return "scripted"; }
  std::size_t calls() const;

private:
  mutable std::mutex mu_;
  std::vector<std::string> script_;
  std::size_t next_ = 0;
};

enum class StrategyKind {
  Uniform,
  LevelK,
  FixedZero,
  BelowWinner,
  RatioOfWinner,
  FixedPointIterate,
  AnchoredNoise
};

std::string_view to_string(StrategyKind kind) noexcept;
StrategyKind strategy_kind_from_string(std::string_view text); // throws InvalidArgument

struct StrategyConfig {
  StrategyKind kind = StrategyKind::LevelK;
  int k = 1;
  double delta = 0.01;
  double anchor = 50.0;
  std::optional<double> sigma; // unset: 8 * temperature
  // Raise MissingWinner instead of falling back to level-1 when a
  // winner-relative strategy has no winner to work from.
  bool strict = false;

  void validate() const;
};

json to_json(const StrategyConfig &cfg);
StrategyConfig strategy_config_from_json(const json &j);

// Level-k steps start from the last announced winner once one exists and from
// cfg.anchor before that. The result is clamped to [rule.lower, rule.upper].
double strategy_decide(const StrategyConfig &cfg, const GameRule &rule,
                       std::optional<double> last_winner, std::mt19937_64 &rng,
                       double temperature = 1.0);

// Deterministic stand-in for a reasoning model: a one-line rationale followed
// by "My reported number is X." Also answers extraction requests and
// background meta prompts.
class StrategyBackend : public Backend {
public:
  StrategyBackend(StrategyConfig cfg, GameRule rule) : cfg_(cfg), rule_(rule) {}
  GenerationResult generate(const std::string &system_prompt, std::span<const Message> history,
                            const GenerationParams &params) override;
  std::string kind() const override { return "strategy"; }
  const StrategyConfig &config() const noexcept { return cfg_; }

private:
  StrategyConfig cfg_;
  GameRule rule_;
};

// Templated background text for a meta prompt whose JSON block lists the
// profile's aspects. The name, age, gender and job are drawn from seed.
std::string synthesize_background(std::string_view meta_prompt, std::uint64_t seed);

struct RemoteConfig {
  std::string base_url; // http://host:port[/prefix]
  std::string model;
  std::string api_key_env; // empty: no Authorization header
  std::chrono::milliseconds timeout{60000};
  std::chrono::milliseconds backoff{500}; // doubled per retry
  int max_retries = 3;
};

RemoteConfig remote_config_from_json(const json &j);

// Chat-completions client. Retries 5xx responses; 401/403 raise AuthError.
class RemoteBackend : public Backend {
public:
  explicit RemoteBackend(RemoteConfig cfg);
  GenerationResult generate(const std::string &system_prompt, std::span<const Message> history,
                            const GenerationParams &params) override;
  std::string kind() const override { return "remote"; }

private:
  RemoteConfig cfg_;
  std::string scheme_host_port_;
  std::string path_prefix_;
};

// {"type":"strategy","strategy":{...}} | {"type":"dummy","sleep_ms":N} |
// {"type":"scripted","script":[...]} | {"type":"remote",...RemoteConfig}
std::shared_ptr<Backend> make_backend(const json &spec, const GameRule &rule);

} // namespace agentsim
