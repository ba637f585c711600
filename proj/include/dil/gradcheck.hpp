#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "dil/tensor.hpp"

namespace dil {

// Central-difference gradient verification, meant to run in double precision.
// `fn` must rebuild its graph from the given point on every call and return a
// scalar loss. Coordinates with |x| < exclusion_margin are skipped (used to
// keep ReLU kinks out of the comparison).
struct GradCheckReport {
  struct Entry {
    size_t index;
    double analytic;
    double numeric;
    double rel_error;
  };
  std::vector<Entry> failures;  // coordinates whose error exceeds tol
  double max_rel_error = 0.0;
  size_t checked = 0;
  size_t excluded = 0;
  bool pass = false;
};

inline GradCheckReport gradient_check(
    const std::function<Tensor<double>(const Tensor<double>&)>& fn,
    const Tensor<double>& point, double epsilon, double tol,
    double exclusion_margin = 0.0) {
  if (epsilon <= 0.0) throw AutogradError("gradient_check: epsilon must be > 0");
  if (tol <= 0.0) throw AutogradError("gradient_check: tol must be > 0");

  Tensor<double> x = point.clone();
  x.set_requires_grad(true);
  Tensor<double> loss = fn(x);
  if (loss.numel() != 1) {
    throw AutogradError("gradient_check: fn must return a scalar loss");
  }
  backward(loss);
  const std::vector<double> analytic(x.grad().begin(), x.grad().end());

  GradCheckReport report;
  const auto base = point.data();
  for (size_t i = 0; i < base.size(); ++i) {
    if (exclusion_margin > 0.0 && std::abs(base[i]) < exclusion_margin) {
      ++report.excluded;
      continue;
    }
    Tensor<double> hi = point.clone();
    hi.raw_data()[i] += epsilon;
    Tensor<double> lo = point.clone();
    lo.raw_data()[i] -= epsilon;
    const double f_hi = fn(hi).item();
    const double f_lo = fn(lo).item();
    const double numeric = (f_hi - f_lo) / (2.0 * epsilon);
    const double denom =
        std::max({1.0, std::abs(analytic[i]), std::abs(numeric)});
    const double rel = std::abs(analytic[i] - numeric) / denom;
    report.max_rel_error = std::max(report.max_rel_error, rel);
    if (rel > tol) report.failures.push_back({i, analytic[i], numeric, rel});
    ++report.checked;
  }
  report.pass = report.failures.empty() && report.checked > 0;
  return report;
}

}  // namespace dil
