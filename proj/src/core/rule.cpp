#include "agentsim/rule.hpp"

#include <charconv>
#include <cmath>

#include "agentsim/error.hpp"

namespace agentsim {

Ratio parse_ratio(std::string_view text) {
  const auto slash = text.find('/');
  if (slash == std::string_view::npos)
    fail(ErrorCode::InvalidArgument, "ratio must look like P/Q, got '" + std::string(text) + "'");
  Ratio r{};
  const auto num = text.substr(0, slash);
  const auto den = text.substr(slash + 1);
  auto [p1, e1] = std::from_chars(num.data(), num.data() + num.size(), r.num);
  auto [p2, e2] = std::from_chars(den.data(), den.data() + den.size(), r.den);
  if (e1 != std::errc() || e2 != std::errc() || p1 != num.data() + num.size() ||
      p2 != den.data() + den.size())
    fail(ErrorCode::InvalidArgument, "ratio must look like P/Q, got '" + std::string(text) + "'");
  if (r.num <= 0 || r.den <= 0 || r.num >= r.den)
    fail(ErrorCode::InvalidArgument, "ratio must lie strictly between 0 and 1");
  return r;
}

void GameRule::validate() const {
  if (ratio.num <= 0 || ratio.den <= 0 || ratio.num >= ratio.den)
    fail(ErrorCode::InvalidArgument, "ratio must lie strictly between 0 and 1");
  if (!std::isfinite(offset) || offset < 0)
    fail(ErrorCode::InvalidArgument, "offset must be >= 0");
  if (!(lower < upper))
    fail(ErrorCode::InvalidArgument, "lower must be below upper");
  if (!(winner_band > 0))
    fail(ErrorCode::InvalidArgument, "winner band must be positive");
}

std::string GameRule::phrase() const {
  if (offset == 0)
    return ratio.str();
  return format_number(offset) + " plus " + ratio.str();
}

json to_json(const GameRule &rule) {
  return json{{"ratio", rule.ratio.str()},  {"offset", rule.offset},
              {"lower", rule.lower},        {"upper", rule.upper},
              {"winner_band", rule.winner_band}, {"variation_note", rule.variation_note}};
}

GameRule game_rule_from_json(const json &j) {
  GameRule rule;
  try {
    if (j.contains("ratio"))
      rule.ratio = parse_ratio(j["ratio"].get<std::string>());
    rule.offset = j.value("offset", rule.offset);
    rule.lower = j.value("lower", rule.lower);
    rule.upper = j.value("upper", rule.upper);
    rule.winner_band = j.value("winner_band", rule.winner_band);
    rule.variation_note = j.value("variation_note", rule.variation_note);
  } catch (const json::exception &e) {
    fail(ErrorCode::InvalidArgument, std::string("bad game rule: ") + e.what());
  }
  rule.validate();
  return rule;
}

} // namespace agentsim
