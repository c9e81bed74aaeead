#include "agentsim/backends.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <thread>

#include <httplib.h>
#include <spdlog/spdlog.h>

#include "agentsim/error.hpp"

namespace agentsim {

int count_whitespace_tokens(std::string_view text) {
  int n = 0;
  bool in_token = false;
  for (char c : text) {
    const bool space = std::isspace(static_cast<unsigned char>(c)) != 0;
    if (!space && !in_token)
      ++n;
    in_token = !space;
  }
  return n;
}

namespace {

bool is_digit(char c) { return c >= '0' && c <= '9'; }

// Parses the number starting at text[pos] (a digit or a sign); returns the
// position past it.
std::optional<std::pair<double, std::size_t>> number_at(std::string_view text,
                                                        std::size_t pos) {
  std::size_t end = pos;
  if (end < text.size() && text[end] == '-')
    ++end;
  while (end < text.size() && is_digit(text[end]))
    ++end;
  if (end + 1 < text.size() && text[end] == '.' && is_digit(text[end + 1])) {
    ++end;
    while (end < text.size() && is_digit(text[end]))
      ++end;
  }
  if (end + 1 < text.size() && (text[end] == 'e' || text[end] == 'E')) {
    std::size_t e = end + 1;
    if (e < text.size() && (text[e] == '-' || text[e] == '+'))
      ++e;
    if (e < text.size() && is_digit(text[e])) {
      while (e < text.size() && is_digit(text[e]))
        ++e;
      end = e;
    }
  }
  double v = 0;
  auto [ptr, ec] = std::from_chars(text.data() + pos, text.data() + end, v);
  if (ec != std::errc() || ptr != text.data() + end)
    return std::nullopt;
  return std::make_pair(v, end);
}

} // namespace

std::optional<double> last_number(std::string_view text) {
  std::optional<double> last;
  std::size_t i = 0;
  while (i < text.size()) {
    const char c = text[i];
    const bool starts_negative =
        c == '-' && i + 1 < text.size() && is_digit(text[i + 1]) &&
        (i == 0 || std::isspace(static_cast<unsigned char>(text[i - 1])) ||
         text[i - 1] == '(' || text[i - 1] == '*');
    const bool starts_digit =
        is_digit(c) && (i == 0 || !(std::isalpha(static_cast<unsigned char>(text[i - 1]))));
    if (starts_negative || starts_digit) {
      if (auto got = number_at(text, i)) {
        last = got->first;
        i = got->second;
        continue;
      }
    }
    // Skip the rest of an alphanumeric token so "Llama3" yields nothing.
    if (std::isalpha(static_cast<unsigned char>(c))) {
      while (i < text.size() && std::isalnum(static_cast<unsigned char>(text[i])))
        ++i;
      continue;
    }
    ++i;
  }
  return last;
}

std::optional<double> last_announced_winner(std::span<const Message> history) {
  static constexpr std::array<std::string_view, 2> kMarkers{"of this round is ",
                                                            "for this round is "};
  for (auto it = history.rbegin(); it != history.rend(); ++it) {
    const std::string &text = it->content();
    for (auto marker : kMarkers) {
      const auto pos = text.rfind(marker);
      if (pos == std::string::npos)
        continue;
      if (auto got = number_at(text, pos + marker.size()))
        return got->first;
    }
  }
  return std::nullopt;
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string_view last_user_text(std::span<const Message> history) {
  return history.empty() ? std::string_view() : std::string_view(history.back().content());
}

GenerationResult make_result(std::string text) {
  GenerationResult r;
  r.token_count = count_whitespace_tokens(text);
  r.text = std::move(text);
  return r;
}

GenerationResult extraction_answer(std::span<const Message> history) {
  auto v = last_number(last_user_text(history));
  return make_result(v ? format_number(*v) : std::string("none"));
}

} // namespace

std::uint64_t derive_seed(std::uint64_t global_seed, std::string_view agent_name,
                          std::uint64_t round) {
  return splitmix64(splitmix64(global_seed) ^ splitmix64(fnv1a(agent_name)) ^
                    splitmix64(round * 0x632be59bd9b4e019ULL + 1));
}

GenerationResult DummyBackend::generate(const std::string &system_prompt,
                                        std::span<const Message> history,
                                        const GenerationParams &params) {
  if (system_prompt == kExtractionPrompt)
    return extraction_answer(history);
  if (system_prompt.rfind(kBackgroundMetaPrefix, 0) == 0 ||
      (!history.empty() && history.back().content().rfind(kBackgroundMetaPrefix, 0) == 0))
    return make_result(synthesize_background(
        system_prompt.rfind(kBackgroundMetaPrefix, 0) == 0 ? system_prompt
                                                           : history.back().content(),
        params.seed));
  std::this_thread::sleep_for(sleep_);
  std::mt19937_64 rng(params.seed);
  std::uniform_real_distribution<double> dist(0.0, 100.0);
  return make_result(format_number(dist(rng)));
}

GenerationResult ScriptedBackend::generate(const std::string &, std::span<const Message>,
                                           const GenerationParams &) {
  std::lock_guard lock(mu_);
  if (next_ >= script_.size())
    fail(ErrorCode::BackendError,
         "script exhausted after " + std::to_string(script_.size()) + " responses");
  return make_result(script_[next_++]);
}

std::size_t ScriptedBackend::calls() const {
  std::lock_guard lock(mu_);
  return next_;
}

std::string_view to_string(StrategyKind kind) noexcept {
  switch (kind) {
  case StrategyKind::Uniform: return "uniform";
  case StrategyKind::LevelK: return "level_k";
  case StrategyKind::FixedZero: return "fixed_zero";
  case StrategyKind::BelowWinner: return "below_winner";
  case StrategyKind::RatioOfWinner: return "ratio_of_winner";
  case StrategyKind::FixedPointIterate: return "fixed_point_iterate";
  case StrategyKind::AnchoredNoise: return "anchored_noise";
  }
  return "?";
}

StrategyKind strategy_kind_from_string(std::string_view text) {
  for (auto k : {StrategyKind::Uniform, StrategyKind::LevelK, StrategyKind::FixedZero,
                 StrategyKind::BelowWinner, StrategyKind::RatioOfWinner,
                 StrategyKind::FixedPointIterate, StrategyKind::AnchoredNoise})
    if (to_string(k) == text)
      return k;
  fail(ErrorCode::InvalidArgument, "unknown strategy '" + std::string(text) + "'");
}

void StrategyConfig::validate() const {
  if (kind == StrategyKind::LevelK && k < 0)
    fail(ErrorCode::InvalidArgument, "level_k needs k >= 0");
  if (kind == StrategyKind::BelowWinner && !(delta > 0))
    fail(ErrorCode::InvalidArgument, "below_winner needs delta > 0");
  if (sigma && !(*sigma >= 0))
    fail(ErrorCode::InvalidArgument, "sigma must be >= 0");
  if (!std::isfinite(anchor))
    fail(ErrorCode::InvalidArgument, "anchor must be finite");
}

json to_json(const StrategyConfig &cfg) {
  json j{{"kind", to_string(cfg.kind)}, {"k", cfg.k}, {"delta", cfg.delta},
         {"anchor", cfg.anchor}, {"strict", cfg.strict}};
  if (cfg.sigma)
    j["sigma"] = *cfg.sigma;
  return j;
}

StrategyConfig strategy_config_from_json(const json &j) {
  StrategyConfig cfg;
  try {
    cfg.kind = strategy_kind_from_string(j.at("kind").get<std::string>());
    cfg.k = j.value("k", cfg.k);
    cfg.delta = j.value("delta", cfg.delta);
    cfg.anchor = j.value("anchor", cfg.anchor);
    cfg.strict = j.value("strict", cfg.strict);
    if (j.contains("sigma") && !j["sigma"].is_null())
      cfg.sigma = j["sigma"].get<double>();
  } catch (const json::exception &e) {
    fail(ErrorCode::InvalidArgument, std::string("bad strategy config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

namespace {

double level_k(const GameRule &rule, double start, int k) {
  double x = start;
  for (int i = 0; i < k; ++i)
    x = rule.apply(x);
  return x;
}

} // namespace

double strategy_decide(const StrategyConfig &cfg, const GameRule &rule,
                       std::optional<double> last_winner, std::mt19937_64 &rng,
                       double temperature) {
  const double start = last_winner.value_or(cfg.anchor);
  double x = 0;
  switch (cfg.kind) {
  case StrategyKind::Uniform:
    x = std::uniform_real_distribution<double>(rule.lower, rule.upper)(rng);
    break;
  case StrategyKind::LevelK:
    x = level_k(rule, start, cfg.k);
    break;
  case StrategyKind::FixedZero:
    x = rule.fixed_point();
    break;
  case StrategyKind::BelowWinner:
  case StrategyKind::RatioOfWinner:
  case StrategyKind::FixedPointIterate:
    if (!last_winner) {
      if (cfg.strict)
        fail(ErrorCode::MissingWinner,
             std::string(to_string(cfg.kind)) + " has no previous winner");
      x = level_k(rule, cfg.anchor, 1);
    } else if (cfg.kind == StrategyKind::BelowWinner) {
      x = std::max(rule.lower, *last_winner - cfg.delta);
    } else {
      x = rule.apply(*last_winner);
    }
    break;
  case StrategyKind::AnchoredNoise: {
    const double sigma = cfg.sigma.value_or(8.0 * temperature);
    x = level_k(rule, start, cfg.k);
    if (sigma > 0)
      x += std::normal_distribution<double>(0.0, sigma)(rng);
    break;
  }
  }
  return std::clamp(x, rule.lower, rule.upper);
}

GenerationResult StrategyBackend::generate(const std::string &system_prompt,
                                           std::span<const Message> history,
                                           const GenerationParams &params) {
  if (system_prompt == kExtractionPrompt)
    return extraction_answer(history);
  if (system_prompt.rfind(kBackgroundMetaPrefix, 0) == 0)
    return make_result(synthesize_background(system_prompt, params.seed));
  if (!history.empty() && history.back().content().rfind(kBackgroundMetaPrefix, 0) == 0)
    return make_result(synthesize_background(history.back().content(), params.seed));

  const auto winner = last_announced_winner(history);
  std::mt19937_64 rng(params.seed);
  const double x = strategy_decide(cfg_, rule_, winner, rng, params.temperature);

  std::string why;
  const std::string rule_text = rule_.phrase() + " of the average";
  switch (cfg_.kind) {
  case StrategyKind::Uniform:
    why = "I pick a number at random.";
    break;
  case StrategyKind::LevelK:
    why = "Starting from " + format_number(winner.value_or(cfg_.anchor)) + ", I apply " +
          rule_text + " " + std::to_string(cfg_.k) + " times.";
    break;
  case StrategyKind::FixedZero:
    why = "If all players are rational the only stable choice is the equilibrium.";
    break;
  case StrategyKind::BelowWinner:
    why = winner ? "The last winner was " + format_number(*winner) +
                       ", so I go slightly below it."
                 : "Without a previous winner I take " + rule_text + " of the midpoint.";
    break;
  case StrategyKind::RatioOfWinner:
  case StrategyKind::FixedPointIterate:
    why = winner ? "Taking " + rule_text + " applied to the last winner " +
                       format_number(*winner) + "."
                 : "Without a previous winner I take " + rule_text + " of the midpoint.";
    break;
  case StrategyKind::AnchoredNoise:
    why = "I reason from the rule and then trust my instinct.";
    break;
  }
  return make_result(why + " My reported number is " + format_number(x) + ".");
}

namespace {

constexpr std::array<std::string_view, 16> kFirstNames{
    "Thomas", "Maria",  "James", "Aiko",  "Liam",  "Sofia", "Noah",  "Elena",
    "Omar",   "Grace",  "Lucas", "Priya", "Ethan", "Chloe", "Mateo", "Hannah"};
constexpr std::array<std::string_view, 16> kLastNames{
    "Reed",  "Garcia", "Chen",   "Okafor", "Novak", "Silva", "Kim",    "Rossi",
    "Haddad", "Muller", "Tanaka", "Patel",  "Evans", "Dubois", "Lopez", "Berg"};
constexpr std::array<std::string_view, 10> kJobs{
    "Software Engineer", "Teacher",    "Nurse",     "Accountant", "Artist",
    "Electrician",       "Researcher", "Shop Owner", "Chef",      "Civil Servant"};
constexpr std::array<std::string_view, 8> kTraits{
    "meticulous", "driven", "curious", "patient", "cautious", "outgoing", "pragmatic", "warm"};

template <std::size_t N>
std::string_view pick(const std::array<std::string_view, N> &items, std::mt19937_64 &rng) {
  return items[std::uniform_int_distribution<std::size_t>(0, N - 1)(rng)];
}

} // namespace

std::string synthesize_background(std::string_view meta_prompt, std::uint64_t seed) {
  nlohmann::ordered_json aspects = nlohmann::ordered_json::object();
  if (const auto pos = meta_prompt.rfind("\n\n"); pos != std::string_view::npos) {
    try {
      aspects = nlohmann::ordered_json::parse(meta_prompt.substr(pos + 2));
    } catch (const nlohmann::json::exception &) {
      aspects = nlohmann::ordered_json::object();
    }
  }
  std::mt19937_64 rng(seed);
  const std::string name =
      std::string(pick(kFirstNames, rng)) + " " + std::string(pick(kLastNames, rng));
  const int age = std::uniform_int_distribution<int>(18, 75)(rng);
  std::string gender = std::uniform_int_distribution<int>(0, 1)(rng) ? "Female" : "Male";
  std::string job(pick(kJobs, rng));
  const std::string trait1(pick(kTraits, rng));
  const std::string trait2(pick(kTraits, rng));

  std::string extra;
  if (aspects.is_object()) {
    for (const auto &[key, value] : aspects.items()) {
      const std::string text = value.is_string() ? value.get<std::string>() : value.dump();
      if (key == "Gender")
        gender = text;
      else if (key == "Job" || key == "Occupation")
        job = text;
      else
        extra += key + ": " + text + "\n";
    }
  }
  std::string out = "## Background\nName: " + name + "\nAge: " + std::to_string(age) +
                    "\nGender: " + gender + "\nJob: " + job + "\n" + extra + "\n";
  out += name + " is a " + trait1 + " and " + (trait2 == trait1 ? "steady" : trait2) +
         " individual who works as a " + job + ". " +
         (gender == "Female" ? "She" : "He") +
         " weighs choices carefully and likes to understand the rules before acting.";
  return out;
}

RemoteConfig remote_config_from_json(const json &j) {
  RemoteConfig cfg;
  try {
    cfg.base_url = j.at("base_url").get<std::string>();
    cfg.model = j.value("model", std::string());
    cfg.api_key_env = j.value("api_key_env", std::string());
    cfg.timeout = std::chrono::milliseconds(j.value("timeout_ms", 60000));
    cfg.backoff = std::chrono::milliseconds(j.value("backoff_ms", 500));
    cfg.max_retries = j.value("max_retries", 3);
  } catch (const json::exception &e) {
    fail(ErrorCode::InvalidArgument, std::string("bad remote backend config: ") + e.what());
  }
  return cfg;
}

RemoteBackend::RemoteBackend(RemoteConfig cfg) : cfg_(std::move(cfg)) {
  const std::string &url = cfg_.base_url;
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos || url.substr(0, scheme_end) != "http")
    fail(ErrorCode::InvalidArgument, "remote backend supports http:// URLs, got '" + url + "'");
  const auto path_start = url.find('/', scheme_end + 3);
  scheme_host_port_ = url.substr(0, path_start);
  path_prefix_ = path_start == std::string::npos ? std::string() : url.substr(path_start);
  while (!path_prefix_.empty() && path_prefix_.back() == '/')
    path_prefix_.pop_back();
}

GenerationResult RemoteBackend::generate(const std::string &system_prompt,
                                         std::span<const Message> history,
                                         const GenerationParams &params) {
  std::string api_key;
  if (!cfg_.api_key_env.empty()) {
    const char *v = std::getenv(cfg_.api_key_env.c_str());
    if (!v || !*v)
      fail(ErrorCode::AuthError, "environment variable " + cfg_.api_key_env + " is not set");
    api_key = v;
  }

  json messages = json::array();
  messages.push_back(json{{"role", "system"}, {"content", system_prompt}});
  for (const auto &m : history)
    messages.push_back(json{{"role", to_string(m.role())}, {"content", m.content()}});
  const json body{{"model", cfg_.model},
                  {"messages", std::move(messages)},
                  {"temperature", params.temperature},
                  {"seed", params.seed},
                  {"max_tokens", params.max_tokens}};
  const std::string payload = body.dump();

  httplib::Client client(scheme_host_port_);
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(cfg_.timeout).count();
  client.set_connection_timeout(std::max<long>(1, secs), 0);
  client.set_read_timeout(std::max<long>(1, secs), 0);
  httplib::Headers headers;
  if (!api_key.empty())
    headers.emplace("Authorization", "Bearer " + api_key);

  auto backoff = cfg_.backoff;
  for (int attempt = 0;; ++attempt) {
    auto res = client.Post(path_prefix_ + "/chat/completions", headers, payload,
                           "application/json");
    if (!res)
      fail(ErrorCode::BackendError, "request failed: " + httplib::to_string(res.error()));
    if (res->status == 401 || res->status == 403)
      fail(ErrorCode::AuthError, "endpoint rejected credentials (HTTP " +
                                     std::to_string(res->status) + ")");
    if (res->status >= 500 && attempt < cfg_.max_retries) {
      spdlog::debug("remote backend HTTP {}, retrying in {} ms", res->status, backoff.count());
      std::this_thread::sleep_for(backoff);
      backoff *= 2;
      continue;
    }
    if (res->status != 200)
      fail(ErrorCode::BackendError, "HTTP " + std::to_string(res->status));
    try {
      const json j = json::parse(res->body);
      GenerationResult out;
      out.text = j.at("choices").at(0).at("message").at("content").get<std::string>();
      if (j.contains("usage") && j["usage"].contains("total_tokens"))
        out.token_count = j["usage"]["total_tokens"].get<int>();
      else
        out.token_count = count_whitespace_tokens(out.text);
      return out;
    } catch (const json::exception &e) {
      fail(ErrorCode::BackendError, std::string("unexpected response body: ") + e.what());
    }
  }
}

std::shared_ptr<Backend> make_backend(const json &spec, const GameRule &rule) {
  const std::string type = spec.value("type", std::string("strategy"));
  if (type == "strategy")
    return std::make_shared<StrategyBackend>(
        strategy_config_from_json(spec.value("strategy", json{{"kind", "level_k"}})), rule);
  if (type == "dummy")
    return std::make_shared<DummyBackend>(
        std::chrono::milliseconds(spec.value("sleep_ms", 1000)));
  if (type == "scripted") {
    std::vector<std::string> script;
    for (const auto &s : spec.value("script", json::array()))
      script.push_back(s.get<std::string>());
    return std::make_shared<ScriptedBackend>(std::move(script));
  }
  if (type == "remote")
    return std::make_shared<RemoteBackend>(remote_config_from_json(spec));
  fail(ErrorCode::InvalidArgument, "unknown backend type '" + type + "'");
}

} // namespace agentsim
