#include "dil/report.hpp"

#include <cstdio>

#include "dil/common.hpp"
#include "json.hpp"

namespace dil {

namespace {

// Shortest representation that parses back to the same double.
std::string full_precision(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string percent(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.1f", v * 100.0);
  return buf;
}

}  // namespace

std::string report_to_json(const MetricsReport& report) {
  nlohmann::json doc;
  doc["metric"] = report.metric_kind;
  doc["steps"] = nlohmann::json::array();
  for (size_t t = 0; t < report.acc.size(); ++t) {
    nlohmann::json step;
    step["step"] = t;
    step["scores"] = report.acc[t];
    step["average"] = report.average[t];
    if (report.fr[t].has_value()) {
      step["forgetting"] = *report.fr[t];
    } else {
      step["forgetting"] = nullptr;
    }
    doc["steps"].push_back(std::move(step));
  }
  return doc.dump(2) + "\n";
}

MetricsReport report_from_json(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("report parse: ") + e.what());
  }
  MetricsReport report;
  try {
    report.metric_kind = doc.at("metric").get<std::string>();
    for (const auto& step : doc.at("steps")) {
      report.acc.push_back(step.at("scores").get<std::vector<double>>());
      report.average.push_back(step.at("average").get<double>());
      const auto& fr = step.at("forgetting");
      if (fr.is_null()) {
        report.fr.emplace_back(std::nullopt);
      } else {
        report.fr.emplace_back(fr.get<double>());
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("report schema: ") + e.what());
  }
  return report;
}

std::string report_to_csv(const MetricsReport& report) {
  std::string out = "step,domain,score,step_average,step_forgetting\n";
  for (size_t t = 0; t < report.acc.size(); ++t) {
    for (size_t i = 0; i < report.acc[t].size(); ++i) {
      out += std::to_string(t) + "," + std::to_string(i) + "," +
             full_precision(report.acc[t][i]) + "," +
             full_precision(report.average[t]) + ",";
      if (report.fr[t].has_value()) out += full_precision(*report.fr[t]);
      out += "\n";
    }
  }
  return out;
}

std::string plot_steps_csv(const MetricsReport& report) {
  std::string out = "step,current_score,average,forgetting\n";
  for (size_t t = 0; t < report.acc.size(); ++t) {
    out += std::to_string(t) + "," + full_precision(report.acc[t][t]) + "," +
           full_precision(report.average[t]) + ",";
    if (report.fr[t].has_value()) out += full_precision(*report.fr[t]);
    out += "\n";
  }
  return out;
}

std::string plot_domains_csv(const std::string& method,
                             const std::vector<std::string>& domain_names,
                             const MetricsReport& report) {
  if (report.acc.empty()) throw DataError("plot table: empty report");
  const auto& last = report.acc.back();
  if (domain_names.size() != last.size()) {
    throw DataError("plot table: " + std::to_string(domain_names.size()) +
                    " domain names for " + std::to_string(last.size()) +
                    " scores");
  }
  std::string out = "method,domain,score\n";
  for (size_t i = 0; i < last.size(); ++i) {
    out += method + "," + domain_names[i] + "," + full_precision(last[i]) +
           "\n";
  }
  return out;
}

std::string report_summary(const MetricsReport& report) {
  std::string out = "metric: " + report.metric_kind + " (scores in %)\n";
  for (size_t t = 0; t < report.acc.size(); ++t) {
    out += "step " + std::to_string(t) + ": scores";
    for (double v : report.acc[t]) out += " " + percent(v);
    out += " | average " + percent(report.average[t]);
    if (report.fr[t].has_value()) {
      out += " | forgetting " + percent(*report.fr[t]);
    }
    out += "\n";
  }
  return out;
}

}  // namespace dil
