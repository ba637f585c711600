#include "dil/model.hpp"

namespace dil {

namespace {
constexpr const char* kStrategyNames[] = {
    "fe", "ft", "single", "multi", "bn_stats", "clf", "bn", "bn_clf", "adil"};
constexpr Strategy kStrategyValues[] = {
    Strategy::kFe,      Strategy::kFt,  Strategy::kSingle,
    Strategy::kMulti,   Strategy::kBnStats, Strategy::kClf,
    Strategy::kBn,      Strategy::kBnClf,   Strategy::kAdil};
}  // namespace

const char* strategy_name(Strategy s) {
  for (size_t i = 0; i < std::size(kStrategyValues); ++i) {
    if (kStrategyValues[i] == s) return kStrategyNames[i];
  }
  throw ConfigError("unknown strategy value");
}

Strategy strategy_from_name(const std::string& name) {
  for (size_t i = 0; i < std::size(kStrategyNames); ++i) {
    if (name == kStrategyNames[i]) return kStrategyValues[i];
  }
  std::string all;
  for (size_t i = 0; i < std::size(kStrategyNames); ++i) {
    if (i > 0) all += ", ";
    all += kStrategyNames[i];
  }
  throw ConfigError("unknown strategy '" + name + "' (valid: " + all + ")");
}

std::vector<std::string> strategy_names() {
  return {kStrategyNames, kStrategyNames + std::size(kStrategyNames)};
}

bool strategy_is_banked(Strategy s) {
  switch (s) {
    case Strategy::kBnStats:
    case Strategy::kClf:
    case Strategy::kBn:
    case Strategy::kBnClf:
    case Strategy::kAdil:
      return true;
    case Strategy::kFe:
    case Strategy::kFt:
    case Strategy::kSingle:
    case Strategy::kMulti:
      return false;
  }
  return false;
}

}  // namespace dil
