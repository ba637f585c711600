#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>

namespace dil {

// Error categories. The CLI maps each one to a distinct exit code, so code
// below the CLI should pick the category that matches the root cause.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
// Misuse of the autograd tape (non-scalar loss, backward without a graph, ...).
struct AutogradError : std::logic_error {
  using std::logic_error::logic_error;
};

// Whether a domain carries one class per sample (softmax + cross-entropy)
// or a multi-hot label set (sigmoid + binary cross-entropy).
enum class TaskKind { kSingleLabel, kMultiLabel };

// Non-finite values are never allowed to propagate: every op output and every
// gradient contribution is scanned and raises immediately.
template <typename T>
inline void ensure_finite(std::span<const T> values, const char* op) {
  for (const T& v : values) {
    if (!std::isfinite(static_cast<double>(v))) {
      throw NumericError(std::string(op) + " produced a non-finite value");
    }
  }
}

}  // namespace dil
