#pragma once

#include <memory>

#include "agentsim/agent.hpp"
#include "agentsim/backends.hpp"
#include "agentsim/rule.hpp"

namespace agentsim {

// A game participant. params:
//   system_prompt  string
//   backend        backend spec (see make_backend)
//   rule           game rule object
//   seed           global seed; each call derives its own from (seed, name, round)
//   temperature, max_tokens
// Inputs are round requests carrying metadata "round"; the reply content is
// the reported number and its metadata holds value, tokens and round.
// Notifications received through observe() become conversation history.
class PlayerAgent : public Agent {
public:
  explicit PlayerAgent(const AgentDef &def);

  Message reply(std::span<const Message> inputs) override;

  Backend &backend() noexcept { return *backend_; }

private:
  std::shared_ptr<Backend> backend_;
  GameRule rule_;
  std::string system_prompt_;
  std::uint64_t seed_ = 0;
  GenerationParams base_params_;
  int replies_ = 0;
};

std::unique_ptr<Agent> make_player_agent(const AgentDef &def);

AgentDef player_def(std::string name, std::string system_prompt, json backend_spec,
                    const GameRule &rule, std::uint64_t seed, double temperature = 1.0,
                    int max_tokens = 1024);

} // namespace agentsim
