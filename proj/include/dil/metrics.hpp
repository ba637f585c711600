#pragma once

#include <optional>
#include <string>
#include <vector>

namespace dil {

// One evaluated (step, domain) cell of the incremental protocol, with
// 0-based indices and domain <= step.
struct EvalCell {
  int step = 0;
  int domain = 0;
  double score = 0.0;
};

// Lower-triangular score matrix over (step, domain) plus the per-step
// average and forgetting columns. Steps are 0-based; forgetting is
// undefined at step 0 and stored as an empty optional there.
struct MetricsReport {
  std::string metric_kind;                    // "accuracy" or "lwlrap"
  std::vector<std::vector<double>> acc;       // acc[t][i], i <= t
  std::vector<double> average;                // mean of acc[t][0..t]
  std::vector<std::optional<double>> fr;      // forgetting per step

  bool operator==(const MetricsReport&) const = default;
};

// Fraction of matching entries. Throws DataError when empty or the two
// sequences disagree in length.
double accuracy(const std::vector<int>& predictions,
                const std::vector<int>& labels);

// Label-weighted label-ranking average precision over an n x c score grid
// with multi-hot targets (0/1). For every positive (sample, class) pair,
// take the precision of positives among the classes ranked at or above it
// (scores descending, ties broken toward the lower class index), then
// average with every positive pair weighted equally. Throws DataError when
// no positive label exists.
double lwlrap(int n, int c, const std::vector<double>& scores,
              const std::vector<int>& targets);

// Arithmetic mean of one matrix row. Throws DataError on empty input.
double average_over_domains(const std::vector<double>& row);

// Mean drop on previously seen domains at 0-based step t:
//   (1/t) * sum_{i<t} (acc[i][i] - acc[t][i])
// in the units of the matrix entries. Throws DataError for t < 1 (the
// quantity is undefined before a second domain exists) and when the matrix
// is not lower-triangular up to row t.
double forgetting(const std::vector<std::vector<double>>& acc, int t);

// Assembles the matrix from evaluated cells and fills in averages and
// forgetting. Every (t, i <= t) cell up to the largest step must be present
// exactly once; a missing or duplicate cell raises DataError naming it.
MetricsReport build_report(const std::vector<EvalCell>& cells,
                           const std::string& metric_kind);

}  // namespace dil
