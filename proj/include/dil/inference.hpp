#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "dil/common.hpp"
#include "dil/model.hpp"

namespace dil {

// Per-sample outcome of bank-routed inference.
struct Prediction {
  int chosen_bank = 0;
  std::vector<double> probabilities;  // over the chosen bank's class list
  std::vector<double> uncertainties;  // one per candidate bank
};

// Index of the largest probability, ties toward the lower class index.
inline int predicted_class(const std::vector<double>& probabilities) {
  int best = 0;
  for (size_t c = 1; c < probabilities.size(); ++c) {
    if (probabilities[c] > probabilities[static_cast<size_t>(best)]) {
      best = static_cast<int>(c);
    }
  }
  return best;
}

// Predictive entropy: -sum p ln p for single-label distributions, the mean
// per-class binary entropy for multi-label ones; 0 ln 0 counts as 0.
inline double entropy_uncertainty(const std::vector<double>& probabilities,
                                  TaskKind task) {
  if (probabilities.empty()) {
    throw DataError("entropy_uncertainty: empty probability vector");
  }
  for (double p : probabilities) {
    if (!(p >= 0.0 && p <= 1.0)) {
      throw DataError("entropy_uncertainty: probability " + std::to_string(p) +
                      " outside [0, 1]");
    }
  }
  double u = 0.0;
  if (task == TaskKind::kSingleLabel) {
    for (double p : probabilities) {
      if (p > 0.0) u -= p * std::log(p);
    }
  } else {
    for (double p : probabilities) {
      double h = 0.0;
      if (p > 0.0) h -= p * std::log(p);
      if (p < 1.0) h -= (1.0 - p) * std::log(1.0 - p);
      u += h;
    }
    u /= static_cast<double>(probabilities.size());
  }
  return u;
}

namespace detail {

// Row-wise probabilities from logits: stabilized softmax for single-label
// tasks, element-wise sigmoid for multi-label ones.
template <typename T>
std::vector<double> probability_rows(const Tensor<T>& logits, TaskKind task) {
  const int n = logits.shape()[0];
  const int c = logits.shape()[1];
  std::vector<double> probs(static_cast<size_t>(n) * c);
  for (int i = 0; i < n; ++i) {
    const T* row = logits.data().data() + static_cast<size_t>(i) * c;
    double* out = probs.data() + static_cast<size_t>(i) * c;
    if (task == TaskKind::kSingleLabel) {
      double peak = static_cast<double>(row[0]);
      for (int j = 1; j < c; ++j) {
        peak = std::max(peak, static_cast<double>(row[j]));
      }
      double denom = 0.0;
      for (int j = 0; j < c; ++j) {
        out[j] = std::exp(static_cast<double>(row[j]) - peak);
        denom += out[j];
      }
      for (int j = 0; j < c; ++j) out[j] /= denom;
    } else {
      for (int j = 0; j < c; ++j) {
        out[j] = 1.0 / (1.0 + std::exp(-static_cast<double>(row[j])));
      }
    }
  }
  return probs;
}

}  // namespace detail

// Routes the batch through one chosen bank (EVAL-mode BN) and reports that
// bank's probabilities and uncertainty per sample.
template <typename T>
std::vector<Prediction> predict_domain_aware(DilModel<T>& model, int bank_id,
                                             const Tensor<T>& batch) {
  auto logits = model_forward(model, bank_id, batch, BnMode::kEval, false);
  const auto& bank = model.banks[static_cast<size_t>(bank_id)];
  const int n = logits.shape()[0];
  const int c = logits.shape()[1];
  const auto probs = detail::probability_rows(logits, bank.spec.task);
  std::vector<Prediction> out(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    auto& p = out[static_cast<size_t>(i)];
    p.chosen_bank = bank_id;
    p.probabilities.assign(
        probs.begin() + static_cast<size_t>(i) * c,
        probs.begin() + static_cast<size_t>(i + 1) * c);
    p.uncertainties = {entropy_uncertainty(p.probabilities, bank.spec.task)};
  }
  return out;
}

// Routes the batch through every bank, scores each bank's predictive
// entropy per sample, and keeps the bank with the smallest uncertainty
// (ties toward the lowest bank index). When `normalize_by_class_count` is
// set, single-label entropies are divided by ln(C) of their bank so banks
// with different class counts compare on a common [0, 1] scale.
template <typename T>
std::vector<Prediction> predict_domain_agnostic(
    DilModel<T>& model, const Tensor<T>& batch,
    bool normalize_by_class_count = false) {
  const int n_banks = static_cast<int>(model.banks.size());
  const int n = batch.shape()[0];
  std::vector<std::vector<double>> bank_probs(static_cast<size_t>(n_banks));
  std::vector<int> bank_classes(static_cast<size_t>(n_banks));
  std::vector<std::vector<double>> bank_u(
      static_cast<size_t>(n_banks), std::vector<double>(static_cast<size_t>(n)));

  for (int b = 0; b < n_banks; ++b) {
    auto logits = model_forward(model, b, batch, BnMode::kEval, false);
    const auto& bank = model.banks[static_cast<size_t>(b)];
    const int c = logits.shape()[1];
    bank_classes[static_cast<size_t>(b)] = c;
    bank_probs[static_cast<size_t>(b)] =
        detail::probability_rows(logits, bank.spec.task);
    for (int i = 0; i < n; ++i) {
      std::vector<double> row(
          bank_probs[static_cast<size_t>(b)].begin() +
              static_cast<size_t>(i) * c,
          bank_probs[static_cast<size_t>(b)].begin() +
              static_cast<size_t>(i + 1) * c);
      double u = entropy_uncertainty(row, bank.spec.task);
      if (normalize_by_class_count && bank.spec.task == TaskKind::kSingleLabel &&
          c > 1) {
        u /= std::log(static_cast<double>(c));
      }
      bank_u[static_cast<size_t>(b)][static_cast<size_t>(i)] = u;
    }
  }

  std::vector<Prediction> out(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    int best = 0;
    for (int b = 1; b < n_banks; ++b) {
      if (bank_u[static_cast<size_t>(b)][static_cast<size_t>(i)] <
          bank_u[static_cast<size_t>(best)][static_cast<size_t>(i)]) {
        best = b;
      }
    }
    auto& p = out[static_cast<size_t>(i)];
    p.chosen_bank = best;
    const int c = bank_classes[static_cast<size_t>(best)];
    p.probabilities.assign(
        bank_probs[static_cast<size_t>(best)].begin() +
            static_cast<size_t>(i) * c,
        bank_probs[static_cast<size_t>(best)].begin() +
            static_cast<size_t>(i + 1) * c);
    p.uncertainties.resize(static_cast<size_t>(n_banks));
    for (int b = 0; b < n_banks; ++b) {
      p.uncertainties[static_cast<size_t>(b)] =
          bank_u[static_cast<size_t>(b)][static_cast<size_t>(i)];
    }
  }
  return out;
}

}  // namespace dil
