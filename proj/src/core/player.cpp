#include "agentsim/player.hpp"

#include "agentsim/error.hpp"
#include "agentsim/game.hpp"

namespace agentsim {

PlayerAgent::PlayerAgent(const AgentDef &def) : Agent(def) {
  const json &p = def.params;
  try {
    rule_ = game_rule_from_json(p.value("rule", json::object()));
    system_prompt_ = p.value("system_prompt", std::string());
    seed_ = p.value("seed", std::uint64_t{0});
    base_params_.temperature = p.value("temperature", 1.0);
    base_params_.max_tokens = p.value("max_tokens", 1024);
  } catch (const json::exception &e) {
    fail(ErrorCode::InvalidArgument, std::string("bad player params: ") + e.what());
  }
  backend_ = make_backend(p.value("backend", json{{"type", "strategy"}}), rule_);
}

Message PlayerAgent::reply(std::span<const Message> inputs) {
  int round = replies_ + 1;
  for (const auto &m : inputs)
    if (auto r = m.number("round"))
      round = static_cast<int>(*r);
  for (const auto &m : inputs)
    memory_.push_back(m);

  GenerationParams params = base_params_;
  params.seed = derive_seed(seed_, name(), static_cast<std::uint64_t>(round));
  const Report report = elicit_report(*backend_, system_prompt_, memory_, params, rule_);
  ++replies_;
  memory_.emplace_back(name(), Role::Assistant, report.raw_text);

  Metadata meta{{"value", report.value},
                {"tokens", static_cast<std::int64_t>(report.token_count)},
                {"round", static_cast<std::int64_t>(round)}};
  return Message(name(), Role::Assistant, format_number(report.value), std::move(meta));
}

std::unique_ptr<Agent> make_player_agent(const AgentDef &def) {
  return std::make_unique<PlayerAgent>(def);
}

AgentDef player_def(std::string name, std::string system_prompt, json backend_spec,
                    const GameRule &rule, std::uint64_t seed, double temperature,
                    int max_tokens) {
  return AgentDef{std::move(name), "player",
                  json{{"system_prompt", std::move(system_prompt)},
                       {"backend", std::move(backend_spec)},
                       {"rule", to_json(rule)},
                       {"seed", seed},
                       {"temperature", temperature},
                       {"max_tokens", max_tokens}}};
}

} // namespace agentsim
