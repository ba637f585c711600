#include "dil/metrics.hpp"

#include <algorithm>
#include <numeric>

#include "dil/common.hpp"

namespace dil {

double accuracy(const std::vector<int>& predictions,
                const std::vector<int>& labels) {
  if (predictions.empty()) {
    throw DataError("accuracy: empty prediction list");
  }
  if (predictions.size() != labels.size()) {
    throw DataError("accuracy: " + std::to_string(predictions.size()) +
                    " predictions vs " + std::to_string(labels.size()) +
                    " labels");
  }
  size_t hits = 0;
  for (size_t i = 0; i < predictions.size(); ++i) {
    if (predictions[i] == labels[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(predictions.size());
}

double lwlrap(int n, int c, const std::vector<double>& scores,
              const std::vector<int>& targets) {
  if (n < 1 || c < 1) throw DataError("lwlrap: empty score grid");
  const size_t expect = static_cast<size_t>(n) * static_cast<size_t>(c);
  if (scores.size() != expect || targets.size() != expect) {
    throw DataError("lwlrap: payload does not match " + std::to_string(n) +
                    "x" + std::to_string(c));
  }
  double precision_sum = 0.0;
  size_t positives = 0;
  std::vector<int> order(static_cast<size_t>(c));
  for (int s = 0; s < n; ++s) {
    const double* row = scores.data() + static_cast<size_t>(s) * c;
    const int* t = targets.data() + static_cast<size_t>(s) * c;
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      return row[a] > row[b];  // stable keeps ties in class-index order
    });
    int seen_positive = 0;
    for (int rank = 1; rank <= c; ++rank) {
      const int cls = order[static_cast<size_t>(rank - 1)];
      if (t[cls] != 0) {
        ++seen_positive;
        precision_sum += static_cast<double>(seen_positive) / rank;
        ++positives;
      }
    }
  }
  if (positives == 0) throw DataError("lwlrap: no positive labels");
  return precision_sum / static_cast<double>(positives);
}

double average_over_domains(const std::vector<double>& row) {
  if (row.empty()) throw DataError("average_over_domains: empty row");
  const double s = std::accumulate(row.begin(), row.end(), 0.0);
  return s / static_cast<double>(row.size());
}

double forgetting(const std::vector<std::vector<double>>& acc, int t) {
  if (t < 1) {
    throw DataError("forgetting: undefined before step 1 (got step " +
                    std::to_string(t) + ")");
  }
  if (static_cast<size_t>(t) >= acc.size()) {
    throw DataError("forgetting: matrix has no row for step " +
                    std::to_string(t));
  }
  for (int r = 0; r <= t; ++r) {
    if (acc[static_cast<size_t>(r)].size() < static_cast<size_t>(r) + 1) {
      throw DataError("forgetting: row " + std::to_string(r) +
                      " is missing diagonal entries");
    }
  }
  double drop = 0.0;
  for (int i = 0; i < t; ++i) {
    drop += acc[static_cast<size_t>(i)][static_cast<size_t>(i)] -
            acc[static_cast<size_t>(t)][static_cast<size_t>(i)];
  }
  return drop / static_cast<double>(t);
}

MetricsReport build_report(const std::vector<EvalCell>& cells,
                           const std::string& metric_kind) {
  if (cells.empty()) throw DataError("build_report: no evaluations");
  int max_step = 0;
  for (const auto& cell : cells) {
    if (cell.step < 0 || cell.domain < 0 || cell.domain > cell.step) {
      throw DataError("build_report: invalid cell (step " +
                      std::to_string(cell.step) + ", domain " +
                      std::to_string(cell.domain) + ")");
    }
    max_step = std::max(max_step, cell.step);
  }

  MetricsReport report;
  report.metric_kind = metric_kind;
  report.acc.assign(static_cast<size_t>(max_step) + 1, {});
  std::vector<std::vector<char>> filled(static_cast<size_t>(max_step) + 1);
  for (int t = 0; t <= max_step; ++t) {
    report.acc[static_cast<size_t>(t)].assign(static_cast<size_t>(t) + 1, 0.0);
    filled[static_cast<size_t>(t)].assign(static_cast<size_t>(t) + 1, 0);
  }
  for (const auto& cell : cells) {
    char& seen = filled[static_cast<size_t>(cell.step)]
                       [static_cast<size_t>(cell.domain)];
    if (seen != 0) {
      throw DataError("build_report: duplicate cell (step " +
                      std::to_string(cell.step) + ", domain " +
                      std::to_string(cell.domain) + ")");
    }
    seen = 1;
    report.acc[static_cast<size_t>(cell.step)]
              [static_cast<size_t>(cell.domain)] = cell.score;
  }
  for (int t = 0; t <= max_step; ++t) {
    for (int i = 0; i <= t; ++i) {
      if (filled[static_cast<size_t>(t)][static_cast<size_t>(i)] == 0) {
        throw DataError("build_report: missing cell (step " +
                        std::to_string(t) + ", domain " + std::to_string(i) +
                        ")");
      }
    }
  }

  report.average.reserve(report.acc.size());
  report.fr.reserve(report.acc.size());
  for (int t = 0; t <= max_step; ++t) {
    report.average.push_back(
        average_over_domains(report.acc[static_cast<size_t>(t)]));
    if (t >= 1) {
      report.fr.emplace_back(forgetting(report.acc, t));
    } else {
      report.fr.emplace_back(std::nullopt);
    }
  }
  return report;
}

}  // namespace dil
