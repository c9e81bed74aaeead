#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "agentsim/message.hpp"

namespace agentsim {

struct Ratio {
  std::int64_t num = 2;
  std::int64_t den = 3;

  double value() const noexcept { return static_cast<double>(num) / static_cast<double>(den); }
  std::string str() const { return std::to_string(num) + "/" + std::to_string(den); }
  friend bool operator==(const Ratio &, const Ratio &) = default;
};

Ratio parse_ratio(std::string_view text); // "P/Q"; throws InvalidArgument

// target = offset + ratio * mean(reports)
struct GameRule {
  Ratio ratio;
  double offset = 0.0;
  double lower = 0.0;
  double upper = 100.0;
  double winner_band = 0.5;
  bool variation_note = false;

  void validate() const; // throws InvalidArgument

  // offset + ratio * x, multiplying by the numerator before dividing.
  double apply(double x) const noexcept {
    return offset + static_cast<double>(ratio.num) * x / static_cast<double>(ratio.den);
  }
  // f* with f* = offset + ratio * f*.
  double fixed_point() const noexcept {
    return offset * static_cast<double>(ratio.den) /
           static_cast<double>(ratio.den - ratio.num);
  }
  // "2/3", or "5 plus 1/2" when an offset is present.
  std::string phrase() const;
};

json to_json(const GameRule &rule);
GameRule game_rule_from_json(const json &j);

} // namespace agentsim
