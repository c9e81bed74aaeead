#include "agentsim/population.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include <yaml-cpp/yaml.h>

#include "agentsim/error.hpp"

namespace agentsim {

void PopulationConfig::validate() const {
  if (population <= 0)
    fail(ErrorCode::InvalidArgument, "population must be positive");
  std::set<std::string> aspect_names;
  for (const auto &aspect : distributions) {
    if (!aspect_names.insert(aspect.name).second)
      fail(ErrorCode::InvalidArgument, "duplicate aspect '" + aspect.name + "'");
    if (aspect.categories.empty())
      fail(ErrorCode::InvalidProportions, "aspect '" + aspect.name + "' has no categories");
    std::set<std::string> names;
    double sum = 0;
    for (const auto &c : aspect.categories) {
      if (!names.insert(c.name).second)
        fail(ErrorCode::InvalidArgument,
             "duplicate category '" + c.name + "' in aspect '" + aspect.name + "'");
      if (!(c.proportion >= 0) || c.proportion > 1)
        fail(ErrorCode::InvalidProportions, "aspect '" + aspect.name + "' category '" +
                                                c.name + "' has proportion " +
                                                format_number(c.proportion));
      sum += c.proportion;
    }
    if (std::abs(sum - 1.0) > 1e-6)
      fail(ErrorCode::InvalidProportions,
           "aspect '" + aspect.name + "' proportions sum to " + format_number(sum));
  }
}

PopulationConfig parse_population_config(std::string_view yaml) {
  PopulationConfig cfg;
  try {
    const YAML::Node root = YAML::Load(std::string(yaml));
    if (!root.IsMap() || !root["population"] || !root["distributions"])
      fail(ErrorCode::ParseError, "config needs population and distributions");
    cfg.population = root["population"].as<int>();
    const YAML::Node dists = root["distributions"];
    if (!dists.IsSequence())
      fail(ErrorCode::ParseError, "distributions must be a list");
    for (const auto &d : dists) {
      Aspect aspect;
      aspect.name = d["name"].as<std::string>();
      const YAML::Node cats = d["categories"];
      if (!cats || !cats.IsSequence())
        fail(ErrorCode::ParseError, "aspect '" + aspect.name + "' needs a categories list");
      for (const auto &c : cats)
        aspect.categories.push_back({c["name"].as<std::string>(), c["proportion"].as<double>()});
      cfg.distributions.push_back(std::move(aspect));
    }
  } catch (const YAML::Exception &e) {
    fail(ErrorCode::ParseError, std::string("population config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

PopulationConfig load_population_config(const std::filesystem::path &path) {
  std::ifstream in(path);
  if (!in)
    fail(ErrorCode::ParseError, "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_population_config(ss.str());
}

const std::string *AgentProfile::aspect(const std::string &name) const {
  for (const auto &[k, v] : aspects)
    if (k == name)
      return &v;
  return nullptr;
}

std::vector<std::size_t> quota_allocation(const Aspect &aspect, std::size_t population) {
  const std::size_t n = aspect.categories.size();
  std::vector<std::size_t> counts(n);
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double exact = aspect.categories[i].proportion * static_cast<double>(population);
    counts[i] = static_cast<std::size_t>(std::floor(exact));
    assigned += counts[i];
    remainders.emplace_back(exact - std::floor(exact), i);
  }
  // Larger remainder first; earlier category wins ties.
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto &a, const auto &b) { return a.first > b.first; });
  for (std::size_t j = 0; assigned < population && j < remainders.size(); ++j, ++assigned)
    ++counts[remainders[j].second];
  return counts;
}

std::vector<AgentProfile> sample_profiles(const PopulationConfig &cfg, std::uint64_t seed,
                                          SamplingMode mode) {
  cfg.validate();
  const auto n = static_cast<std::size_t>(cfg.population);
  const int width = std::max<int>(4, static_cast<int>(std::to_string(n).size()));
  std::vector<AgentProfile> profiles(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::string id = std::to_string(i + 1);
    profiles[i].profile_id = "profile-" + std::string(width - id.size(), '0') + id;
  }
  std::mt19937_64 rng(seed);
  for (const auto &aspect : cfg.distributions) {
    if (mode == SamplingMode::Independent) {
      std::vector<double> weights;
      for (const auto &c : aspect.categories)
        weights.push_back(c.proportion);
      std::discrete_distribution<std::size_t> dist(weights.begin(), weights.end());
      for (auto &p : profiles)
        p.aspects.emplace_back(aspect.name, aspect.categories[dist(rng)].name);
    } else {
      const auto counts = quota_allocation(aspect, n);
      std::vector<std::size_t> slots;
      slots.reserve(n);
      for (std::size_t c = 0; c < counts.size(); ++c)
        slots.insert(slots.end(), counts[c], c);
      std::shuffle(slots.begin(), slots.end(), rng);
      for (std::size_t i = 0; i < n; ++i)
        profiles[i].aspects.emplace_back(aspect.name, aspect.categories[slots[i]].name);
    }
  }
  return profiles;
}

const std::string_view kBackgroundMetaPrompt =
    "You need to generate a person's background description based on the user-provided "
    "JSON format information.\n"
    "In addition to the information provided by the user, each background description must "
    "also include the person's name, age, gender, job, and a paragraph describing the "
    "character's personality.\n"
    "Please output the background description after \"## Background\" tag.\n"
    "\n"
    "{JSON}";

std::string build_generation_instruction(const AgentProfile &profile) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto &[k, v] : profile.aspects)
    j[k] = v;
  std::string out(kBackgroundMetaPrompt);
  out.replace(out.find("{JSON}"), 6, j.dump());
  return out;
}

std::string extract_background(std::string_view text) {
  static constexpr std::string_view kTag = "## Background";
  const auto pos = text.find(kTag);
  if (pos == std::string_view::npos)
    fail(ErrorCode::MissingBackgroundTag, "response has no \"## Background\" tag");
  auto line_end = text.find('\n', pos);
  std::string_view rest = line_end == std::string_view::npos ? std::string_view()
                                                             : text.substr(line_end + 1);
  const auto first = rest.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos)
    fail(ErrorCode::MissingBackgroundTag, "nothing follows the \"## Background\" tag");
  rest.remove_prefix(first);
  const auto last = rest.find_last_not_of(" \t\r\n");
  return std::string(rest.substr(0, last + 1));
}

std::string generate_background(AgentProfile &profile, Backend &backend, std::uint64_t seed,
                                double temperature) {
  GenerationParams params;
  params.seed = seed;
  params.temperature = temperature;
  const Message request("population", Role::User, build_generation_instruction(profile));
  const GenerationResult out = backend.generate("", std::span(&request, 1), params);
  profile.background = extract_background(out.text);
  return *profile.background;
}

} // namespace agentsim
