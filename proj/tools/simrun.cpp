// simrun: plays the guessing game with a population of agents.
#include <cstdio>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "agentsim/agentsim.h"

namespace {

constexpr int kConfigError = 2;
constexpr int kRuntimeError = 3;

bool is_config_error(as_status st) {
  switch (st) {
  case AS_CONFIG_ERROR:
  case AS_INVALID_ARGUMENT:
  case AS_MALFORMED_PAYLOAD:
  case AS_PARSE_ERROR:
  case AS_INVALID_PROPORTIONS:
    return true;
  default:
    return false;
  }
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"Run a guess-a-fraction-of-the-average game"};
  int agents = 100;
  int rounds = 1;
  std::string ratio = "2/3";
  double offset = 0;
  bool note = false;
  std::string prompt = "2";
  std::string backend = "strategy";
  std::string strategy_mix = "level_k:1=1";
  int groups = 0;
  std::string population_config;
  std::string servers;
  std::uint64_t seed = 0;
  std::string out;
  double temperature = 1.0;
  int max_tokens = 1024;
  int dummy_sleep_ms = 1000;
  std::string script_file;
  std::string remote_url;
  std::string remote_model;
  std::string hub;
  std::string sim_id;
  std::size_t parallelism = 0;
  std::string log_level = "warn";

  app.add_option("--agents", agents)->check(CLI::PositiveNumber)->capture_default_str();
  app.add_option("--rounds", rounds)->check(CLI::PositiveNumber)->capture_default_str();
  app.add_option("--ratio", ratio, "P/Q")->capture_default_str();
  app.add_option("--offset", offset)->capture_default_str();
  app.add_flag("--note", note, "append the variation note to the game prompt");
  app.add_option("--prompt", prompt)
      ->check(CLI::IsMember({"1", "2", "3", "4", "5", "7", "group"}))
      ->capture_default_str();
  app.add_option("--backend", backend)
      ->check(CLI::IsMember({"strategy", "dummy", "scripted", "remote"}))
      ->capture_default_str();
  app.add_option("--strategy-mix", strategy_mix, "kind[:param]=weight,...")
      ->capture_default_str();
  app.add_option("--groups", groups)->check(CLI::NonNegativeNumber);
  app.add_option("--population-config", population_config, "YAML population file")
      ->check(CLI::ExistingFile);
  app.add_option("--servers", servers, "HOST:PORT,... agent servers");
  app.add_option("--seed", seed)->capture_default_str();
  app.add_option("--out", out, "output directory");
  app.add_option("--temperature", temperature)->capture_default_str();
  app.add_option("--max-tokens", max_tokens)->capture_default_str();
  app.add_option("--dummy-sleep-ms", dummy_sleep_ms)->capture_default_str();
  app.add_option("--script", script_file, "JSON array of replies for the scripted backend")
      ->check(CLI::ExistingFile);
  app.add_option("--remote-url", remote_url, "chat completions base URL");
  app.add_option("--remote-model", remote_model);
  app.add_option("--hub", hub, "hub URL for round progress");
  app.add_option("--sim-id", sim_id);
  app.add_option("--parallelism", parallelism);
  app.add_option("--log-level", log_level)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kConfigError;
  }

  if (as_set_log_level(log_level.c_str()) != AS_OK) {
    std::fprintf(stderr, "simrun: %s\n", as_last_error());
    return kConfigError;
  }

  nlohmann::json cfg{{"agents", agents},
                     {"rounds", rounds},
                     {"ratio", ratio},
                     {"offset", offset},
                     {"note", note},
                     {"prompt", prompt},
                     {"backend", backend},
                     {"strategy_mix", strategy_mix},
                     {"groups", groups},
                     {"population_config", population_config},
                     {"servers", servers},
                     {"seed", seed},
                     {"out", out},
                     {"temperature", temperature},
                     {"max_tokens", max_tokens},
                     {"dummy_sleep_ms", dummy_sleep_ms},
                     {"parallelism", parallelism},
                     {"hub", hub},
                     {"sim_id", sim_id}};
  if (!script_file.empty()) {
    std::FILE *f = std::fopen(script_file.c_str(), "rb");
    nlohmann::json script = f ? nlohmann::json::parse(f, nullptr, false) : nlohmann::json();
    if (f)
      std::fclose(f);
    if (!script.is_array()) {
      std::fprintf(stderr, "simrun: %s is not a JSON array of strings\n", script_file.c_str());
      return kConfigError;
    }
    cfg["script"] = script;
  }
  if (!remote_url.empty()) {
    cfg["remote"] = {{"base_url", remote_url}};
    if (!remote_model.empty())
      cfg["remote"]["model"] = remote_model;
  }

  char *summary = nullptr;
  const as_status st = as_simulation_run(cfg.dump().c_str(), &summary);
  if (st != AS_OK) {
    std::fprintf(stderr, "simrun: %s: %s\n", as_status_name(st), as_last_error());
    return is_config_error(st) ? kConfigError : kRuntimeError;
  }
  const auto result = nlohmann::json::parse(summary);
  as_string_free(summary);
  std::printf("round,avg,target,median,std\n");
  for (const auto &r : result["rounds"]) {
    const auto &s = r["stats"];
    std::printf("%d,%.6g,%.6g,%.6g,%.6g\n", r.value("round", 0), s.value("avg", 0.0),
                r.value("target", 0.0), s.value("median", 0.0), s.value("std", 0.0));
  }
  std::fprintf(stderr, "simrun: %zu rounds in %.2f s\n", result["rounds"].size(),
               result.value("seconds", 0.0));
  return 0;
}
