#pragma once

#include <string>

#include "dil/metrics.hpp"

namespace dil {

// Machine-readable JSON document. Doubles keep full round-trip precision,
// so parse(render(r)) == r holds exactly.
std::string report_to_json(const MetricsReport& report);
MetricsReport report_from_json(const std::string& text);

// Flat comma-separated table, one row per (step, domain) cell, for plotting.
std::string report_to_csv(const MetricsReport& report);

// Learning-curve table: one row per step with the current-domain score,
// the running average, and forgetting.
std::string plot_steps_csv(const MetricsReport& report);

// Final-step per-domain scores tagged with the method name, so tables from
// several runs concatenate into one method-comparison grid.
std::string plot_domains_csv(const std::string& method,
                             const std::vector<std::string>& domain_names,
                             const MetricsReport& report);

// Human-readable summary with scores in percent, one decimal.
std::string report_summary(const MetricsReport& report);

}  // namespace dil
