#pragma once

#include <string>

#include "dil/trainer.hpp"

namespace dil {

// A full experiment description: the protocol plus the numeric precision
// the run executes in. Parsed from a flat key-value text format where
// ordered, repeatable [domain] sections spell out the incremental sequence
// (see configs/default.ini for a commented example). Omitting every
// [domain] section selects the stock three-domain benchmark.
struct ExperimentConfig {
  ProtocolConfig protocol;
  std::string precision = "f32";  // f32 | f64
};

// Parse errors carry the 1-based line number of the offending entry.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::string& path);

}  // namespace dil
