#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "agentsim/backends.hpp"

namespace agentsim {

struct Category {
  std::string name;
  double proportion = 0;
};

struct Aspect {
  std::string name;
  std::vector<Category> categories;
};

struct PopulationConfig {
  int population = 0;
  std::vector<Aspect> distributions;

  // Throws InvalidProportions (naming the aspect and its sum) or
  // InvalidArgument for duplicate names or a non-positive population.
  void validate() const;
};

// YAML with top-level `population` and `distributions`, each distribution a
// `name` plus `categories` of {name, proportion}. Throws ParseError.
PopulationConfig parse_population_config(std::string_view yaml);
PopulationConfig load_population_config(const std::filesystem::path &path);

struct AgentProfile {
  std::string profile_id;
  // In the config's aspect order.
  std::vector<std::pair<std::string, std::string>> aspects;
  std::optional<std::string> background;

  const std::string *aspect(const std::string &name) const;
};

enum class SamplingMode { Independent, ExactQuota };

// Independent: every aspect drawn i.i.d. per agent. ExactQuota: per aspect,
// largest-remainder headcounts shuffled over agents. Aspects are sampled
// independently of each other; the same (cfg, seed, mode) always yields the
// same list.
std::vector<AgentProfile> sample_profiles(const PopulationConfig &cfg, std::uint64_t seed,
                                          SamplingMode mode);

// Largest-remainder allocation of population across the aspect's categories.
std::vector<std::size_t> quota_allocation(const Aspect &aspect, std::size_t population);

extern const std::string_view kBackgroundMetaPrompt; // contains the {JSON} slot

std::string build_generation_instruction(const AgentProfile &profile);

// Calls the backend once and keeps the text after the first "## Background"
// line. Throws MissingBackgroundTag or whatever the backend raises.
std::string generate_background(AgentProfile &profile, Backend &backend, std::uint64_t seed,
                                double temperature);

std::string extract_background(std::string_view text); // throws MissingBackgroundTag

} // namespace agentsim
