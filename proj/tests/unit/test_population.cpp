#include <doctest.h>

#include <map>
#include <set>

#include "agentsim/error.hpp"
#include "agentsim/population.hpp"

using namespace agentsim;

namespace {

ErrorCode code_of(const std::function<void()> &f) {
  try {
    f();
  } catch (const Error &e) {
    return e.code();
  }
  return ErrorCode::Ok;
}

PopulationConfig listing(int population) {
  PopulationConfig cfg = load_population_config(std::string(AGENTSIM_TEST_DATA) + "/listing1.yaml");
  cfg.population = population;
  return cfg;
}

std::map<std::string, std::size_t> counts(const std::vector<AgentProfile> &ps, const std::string &aspect) {
  std::map<std::string, std::size_t> out;
  for (const auto &p : ps)
    ++out[*p.aspect(aspect)];
  return out;
}

const char *kThomasReed =
    "Sure.\n"
    "## Background\n"
    "Thomas Reed is a meticulous and driven individual with a Bachelor's Degree in Computer "
    "Science. He has a sharp analytical mind and an insatiable curiosity for technology and "
    "coding.\n";

} // namespace

TEST_SUITE("population-config") {
  TEST_CASE("listing parses with aspects in order") {
    const PopulationConfig cfg = listing(1000);
    REQUIRE(cfg.distributions.size() == 2);
    CHECK(cfg.distributions[0].name == "Education Level");
    CHECK(cfg.distributions[0].categories.size() == 5);
    CHECK(cfg.distributions[1].name == "Gender");
    for (const auto &c : cfg.distributions[0].categories)
      CHECK(c.proportion == 0.2);
  }

  TEST_CASE("invalid configs") {
    CHECK(code_of([] {
            parse_population_config("population: 5\ndistributions:\n  - name: A\n    categories:\n"
                                    "      - {name: x, proportion: 0.5}\n      - {name: y, proportion: 0.6}\n");
          }) == ErrorCode::InvalidProportions);
    CHECK(code_of([] { parse_population_config("population: [1, 2"); }) == ErrorCode::ParseError);
    CHECK(code_of([] { parse_population_config("population: 5\n"); }) == ErrorCode::ParseError);
    CHECK(code_of([] {
            parse_population_config("population: 0\ndistributions:\n  - name: A\n    categories:\n"
                                    "      - {name: x, proportion: 1}\n");
          }) == ErrorCode::InvalidArgument);
    CHECK(code_of([] { load_population_config("/nonexistent/pop.yaml"); }) == ErrorCode::ParseError);
    try {
      parse_population_config("population: 5\ndistributions:\n  - name: Mood\n    categories:\n"
                              "      - {name: x, proportion: 0.5}\n      - {name: y, proportion: 0.6}\n");
    } catch (const Error &e) {
      CHECK(std::string(e.what()).find("Mood") != std::string::npos);
      CHECK(std::string(e.what()).find("1.1") != std::string::npos);
    }
  }

  TEST_CASE("a single category with proportion 1 fills everyone") {
    const PopulationConfig cfg = parse_population_config(
        "population: 7\ndistributions:\n  - name: Job\n    categories:\n      - {name: Artist, proportion: 1.0}\n");
    for (auto mode : {SamplingMode::Independent, SamplingMode::ExactQuota}) {
      const auto ps = sample_profiles(cfg, 1, mode);
      REQUIRE(ps.size() == 7);
      for (const auto &p : ps)
        CHECK(*p.aspect("Job") == "Artist");
    }
  }

  TEST_CASE("sampling is deterministic in the seed") {
    const PopulationConfig cfg = listing(50);
    for (auto mode : {SamplingMode::Independent, SamplingMode::ExactQuota}) {
      const auto a = sample_profiles(cfg, 42, mode);
      const auto b = sample_profiles(cfg, 42, mode);
      const auto c = sample_profiles(cfg, 43, mode);
      bool same = true, differs = false;
      for (std::size_t i = 0; i < a.size(); ++i) {
        same = same && a[i].aspects == b[i].aspects;
        differs = differs || a[i].aspects != c[i].aspects;
      }
      CHECK(same);
      CHECK(differs);
      CHECK(a.front().profile_id == "profile-0001");
    }
  }

  TEST_CASE("exact quota matches largest-remainder counts") {
    const auto at10 = counts(sample_profiles(listing(10), 9, SamplingMode::ExactQuota), "Education Level");
    REQUIRE(at10.size() == 5);
    for (const auto &[name, n] : at10)
      CHECK(n == 2);

    std::mt19937_64 rng(17);
    for (int trial = 0; trial < 200; ++trial) {
      const int cats = 1 + static_cast<int>(rng() % 6);
      std::vector<double> raw(cats);
      double sum = 0;
      for (auto &w : raw)
        sum += (w = 1 + static_cast<double>(rng() % 100));
      Aspect aspect{"A", {}};
      for (int c = 0; c < cats; ++c)
        aspect.categories.push_back({"c" + std::to_string(c), raw[c] / sum});
      PopulationConfig cfg{1 + static_cast<int>(rng() % 300), {aspect}};
      double total = 0;
      for (const auto &c : cfg.distributions[0].categories)
        total += c.proportion;
      if (std::abs(total - 1.0) > 1e-6)
        continue;
      const auto expected = quota_allocation(aspect, cfg.population);
      std::size_t assigned = 0;
      for (std::size_t c = 0; c < expected.size(); ++c) {
        const double exact = aspect.categories[c].proportion * cfg.population;
        CHECK(std::abs(static_cast<double>(expected[c]) - exact) < 1.0);
        assigned += expected[c];
      }
      CHECK(assigned == static_cast<std::size_t>(cfg.population));
      const auto got = counts(sample_profiles(cfg, trial, SamplingMode::ExactQuota), "A");
      for (std::size_t c = 0; c < expected.size(); ++c) {
        auto it = got.find("c" + std::to_string(c));
        CHECK((it == got.end() ? 0 : it->second) == expected[c]);
      }
    }
  }

  TEST_CASE("generation instruction embeds the aspects") {
    AgentProfile p{"profile-0001", {{"Education Level", "Bachelor's Degree"}, {"Gender", "Male"}}, {}};
    const std::string text = build_generation_instruction(p);
    CHECK(text.rfind(kBackgroundMetaPrefix, 0) == 0);
    CHECK(text.find("after \"## Background\" tag") != std::string::npos);
    CHECK(text.find(R"({"Education Level":"Bachelor's Degree","Gender":"Male"})") != std::string::npos);
    CHECK(text.find("{JSON}") == std::string::npos);
    AgentProfile empty{"profile-0002", {}, {}};
    const std::string bare = build_generation_instruction(empty);
    CHECK(bare.substr(bare.size() - 2) == "{}");
  }

  TEST_CASE("background extraction") {
    AgentProfile p{"profile-0001", {{"Education Level", "Bachelor's Degree"}}, {}};
    ScriptedBackend scripted({kThomasReed});
    const std::string bg = generate_background(p, scripted, 1, 1.0);
    CHECK(bg.rfind("Thomas Reed is a meticulous", 0) == 0);
    CHECK(p.background == bg);
    CHECK(scripted.calls() == 1);

    ScriptedBackend untagged({"Thomas Reed is a meticulous person."});
    CHECK(code_of([&] { generate_background(p, untagged, 1, 1.0); }) == ErrorCode::MissingBackgroundTag);
    CHECK(code_of([] { extract_background("## Background\n   \n"); }) == ErrorCode::MissingBackgroundTag);
  }

  TEST_CASE("templated backgrounds vary with the seed") {
    GameRule rule;
    StrategyBackend backend(StrategyConfig{}, rule);
    std::set<std::string> names;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      AgentProfile p{"p", {{"Job", "Artist"}}, {}};
      const std::string bg = generate_background(p, backend, seed, 1.0);
      CHECK(bg.rfind("Name: ", 0) == 0);
      names.insert(bg.substr(0, bg.find('\n')));
    }
    CHECK(names.size() >= 2);
  }
}
