#pragma once

#include <cmath>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "dil/common.hpp"
#include "dil/model.hpp"

namespace dil {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Per-parameter first/second moment estimates, keyed by parameter name so
// the same state follows a parameter across training calls.
template <typename T>
struct AdamState {
  struct Slot {
    std::vector<T> m;
    std::vector<T> v;
  };
  std::map<std::string, Slot> slots;
  long long step = 0;
};

// One bias-corrected Adam update over the given parameters, in place.
// Parameters without an accumulated gradient are treated as g = 0 (their
// moments decay; a zero-state parameter does not move). Gradients are left
// untouched; callers clear them between steps.
template <typename T>
void adam_step(std::vector<NamedParam<T>>& params, AdamState<T>& state,
               double lr, const AdamConfig& config = {}) {
  state.step += 1;
  const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));
  for (auto& p : params) {
    auto data = p.tensor.raw_data();
    auto& slot = state.slots[p.name];
    if (slot.m.empty()) {
      slot.m.assign(data.size(), T(0));
      slot.v.assign(data.size(), T(0));
    } else if (slot.m.size() != data.size()) {
      throw ConfigError("adam_step: state for '" + p.name + "' has " +
                        std::to_string(slot.m.size()) + " entries, parameter " +
                        std::to_string(data.size()));
    }
    const bool has_grad = p.tensor.has_grad();
    const std::span<const T> grad =
        has_grad ? p.tensor.grad() : std::span<const T>();
    for (size_t i = 0; i < data.size(); ++i) {
      const double g = has_grad ? static_cast<double>(grad[i]) : 0.0;
      const double m = config.beta1 * static_cast<double>(slot.m[i]) +
                       (1.0 - config.beta1) * g;
      const double v = config.beta2 * static_cast<double>(slot.v[i]) +
                       (1.0 - config.beta2) * g * g;
      slot.m[i] = static_cast<T>(m);
      slot.v[i] = static_cast<T>(v);
      const double m_hat = m / bc1;
      const double v_hat = v / bc2;
      data[i] = static_cast<T>(static_cast<double>(data[i]) -
                               lr * m_hat / (std::sqrt(v_hat) + config.eps));
      if (!std::isfinite(static_cast<double>(data[i]))) {
        throw NumericError("adam_step produced a non-finite value in '" +
                           p.name + "'");
      }
    }
  }
}

// Cosine annealing from lr_max (epoch 0) down to eta_min (epoch == total):
//   eta = eta_min + (lr_max - eta_min) * (1 + cos(pi * epoch / total)) / 2
inline double cosine_lr(int epoch, int total, double lr_max, double eta_min) {
  if (total <= 0) throw ConfigError("cosine_lr: total epochs must be > 0");
  if (epoch < 0 || epoch > total) {
    throw ConfigError("cosine_lr: epoch " + std::to_string(epoch) +
                      " outside [0, " + std::to_string(total) + "]");
  }
  const double phase = M_PI * static_cast<double>(epoch) / total;
  return eta_min + 0.5 * (lr_max - eta_min) * (1.0 + std::cos(phase));
}

}  // namespace dil
