#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "dil/common.hpp"
#include "dil/data.hpp"
#include "dil/inference.hpp"
#include "dil/metrics.hpp"
#include "dil/model.hpp"
#include "dil/optim.hpp"
#include "dil/rng.hpp"

namespace dil {

struct TrainConfig {
  int epochs = 20;
  int batch_size = 32;
  double lr = 1e-3;
  double eta_min = 0.0;
  AdamConfig adam{};
  uint64_t seed = 1;
  std::ostream* log = nullptr;  // optional per-epoch progress lines
};

struct EpochStats {
  int epoch = 0;  // 0-based
  double lr = 0.0;
  double loss = 0.0;
  double train_score = 0.0;  // accuracy (single-label) or lwlrap
};

// The bank layout a banked strategy trains with.
inline HeadMode strategy_head_mode(Strategy s) {
  switch (s) {
    case Strategy::kBnStats:
    case Strategy::kBn:
      return HeadMode::kSharedBase;
    case Strategy::kClf:
    case Strategy::kBnClf:
      return HeadMode::kIndependent;
    case Strategy::kAdil:
      return HeadMode::kResidual;
    default:
      throw ConfigError(std::string("strategy '") + strategy_name(s) +
                        "' does not add per-domain banks");
  }
}

// Head-only strategies keep the running statistics frozen; they normalize
// with batch statistics while training but never fold them in, so their
// eval-time features keep the old domain's normalization.
inline bool strategy_updates_stats(Strategy s) {
  return s != Strategy::kFe && s != Strategy::kClf;
}

namespace detail {

template <typename T>
int bank_logit_width(const DilModel<T>& model, int bank_id) {
  if (bank_id < 0 || bank_id >= static_cast<int>(model.banks.size())) {
    throw ConfigError("bank " + std::to_string(bank_id) +
                      " out of range (have " +
                      std::to_string(model.banks.size()) + ")");
  }
  const auto& bank = model.banks[static_cast<size_t>(bank_id)];
  if (bank.head_mode == HeadMode::kBase) {
    return static_cast<int>(model.banks[0].spec.class_list.size());
  }
  return static_cast<int>(bank.spec.class_list.size());
}

template <typename T>
const std::vector<std::string>& bank_class_names(const DilModel<T>& model,
                                                 int bank_id) {
  const auto& bank = model.banks.at(static_cast<size_t>(bank_id));
  if (bank.head_mode == HeadMode::kBase) {
    return model.banks[0].spec.class_list;
  }
  return bank.spec.class_list;
}

inline void check_train_config(const TrainConfig& cfg) {
  if (cfg.epochs < 0) throw ConfigError("train: epochs must be >= 0");
  if (cfg.batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (!(cfg.lr >= 0.0)) throw ConfigError("train: lr must be >= 0");
  if (!(cfg.eta_min >= 0.0) || cfg.eta_min > cfg.lr) {
    throw ConfigError("train: eta_min must lie in [0, lr]");
  }
}

// Argmax with ties toward the lower index, over one logit row.
template <typename T>
int argmax_row(const T* row, int c) {
  int best = 0;
  for (int j = 1; j < c; ++j) {
    if (row[j] > row[best]) best = j;
  }
  return best;
}

}  // namespace detail

// Rewrites a dataset's label space into the head columns of `bank_id`.
// `class_names` lists the dataset's classes in its own label order; the
// result's labels (or multi-hot columns) index the bank's logits instead.
// Labeled classes the bank cannot express are DataErrors.
template <typename T>
Dataset relabel_for_bank(const DilModel<T>& model, int bank_id,
                         const Dataset& data,
                         const std::vector<std::string>& class_names) {
  const int width = detail::bank_logit_width(model, bank_id);
  const auto& head_names = detail::bank_class_names(model, bank_id);
  if (static_cast<int>(class_names.size()) != data.n_classes) {
    throw DataError("relabel_for_bank: " + std::to_string(class_names.size()) +
                    " class names for a dataset with " +
                    std::to_string(data.n_classes) + " classes");
  }
  std::vector<int> map(class_names.size(), -1);
  for (size_t j = 0; j < class_names.size(); ++j) {
    for (size_t k = 0; k < head_names.size(); ++k) {
      if (head_names[k] == class_names[j]) {
        map[j] = static_cast<int>(k);
        break;
      }
    }
  }
  auto unmapped = [&](size_t j) {
    return DataError("relabel_for_bank: class '" + class_names[j] +
                     "' has no column in bank " + std::to_string(bank_id));
  };

  Dataset out = data;
  out.n_classes = width;
  if (data.task == TaskKind::kSingleLabel) {
    for (auto& y : out.labels) {
      const size_t j = static_cast<size_t>(y);
      if (map[j] < 0) throw unmapped(j);
      y = map[j];
    }
  } else {
    out.multi_hot.assign(static_cast<size_t>(data.n) * width, 0);
    for (int i = 0; i < data.n; ++i) {
      for (int j = 0; j < data.n_classes; ++j) {
        if (!data.multi_hot[static_cast<size_t>(i) * data.n_classes + j]) {
          continue;
        }
        if (map[static_cast<size_t>(j)] < 0) {
          throw unmapped(static_cast<size_t>(j));
        }
        out.multi_hot[static_cast<size_t>(i) * width +
                      map[static_cast<size_t>(j)]] = 1;
      }
    }
  }
  return out;
}

// Concatenates sample collections with identical shapes and label spaces.
inline Dataset concat_datasets(const std::vector<Dataset>& parts) {
  if (parts.empty()) throw DataError("concat_datasets: nothing to concatenate");
  Dataset out = parts.front();
  for (size_t p = 1; p < parts.size(); ++p) {
    const Dataset& d = parts[p];
    if (d.f != out.f || d.t != out.t || d.n_classes != out.n_classes ||
        d.task != out.task) {
      throw DataError("concat_datasets: part " + std::to_string(p) +
                      " disagrees on shape or label space");
    }
    out.n += d.n;
    out.features.insert(out.features.end(), d.features.begin(),
                        d.features.end());
    out.labels.insert(out.labels.end(), d.labels.begin(), d.labels.end());
    out.multi_hot.insert(out.multi_hot.end(), d.multi_hot.begin(),
                         d.multi_hot.end());
  }
  return out;
}

// Trains one bank on one dataset under a strategy's parameter budget.
// Dataset labels must already index the bank's logit columns (see
// relabel_for_bank). Per epoch: cosine-annealed lr, a seeded shuffle,
// TRAIN-mode forwards, Adam steps over exactly the strategy's trainable
// parameters. kBnStats takes no gradient steps (the forwards alone move the
// running statistics); kFe/kClf keep the running statistics frozen.
template <typename T>
std::vector<EpochStats> train_domain(DilModel<T>& model, int bank_id,
                                     const Dataset& data, Strategy strategy,
                                     const TrainConfig& cfg) {
  detail::check_train_config(cfg);
  const int width = detail::bank_logit_width(model, bank_id);
  const auto& bank = model.banks[static_cast<size_t>(bank_id)];
  if (data.n == 0) throw DataError("train_domain: empty dataset");
  if (data.task != bank.spec.task) {
    throw DataError("train_domain: dataset task does not match bank " +
                    std::to_string(bank_id));
  }
  if (data.n_classes != width) {
    throw DataError("train_domain: dataset labels span " +
                    std::to_string(data.n_classes) + " classes but bank " +
                    std::to_string(bank_id) + " produces " +
                    std::to_string(width) + " logits");
  }

  auto params = trainable_params(model, strategy, bank_id);
  for (auto& p : params) p.tensor.set_requires_grad(true);
  const bool update_stats = strategy_updates_stats(strategy);
  AdamState<T> state;
  std::vector<EpochStats> history;
  history.reserve(static_cast<size_t>(cfg.epochs));

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cosine_lr(epoch, cfg.epochs, cfg.lr, cfg.eta_min);
    const auto batches = batch_indices(
        data.n, cfg.batch_size,
        derive_seed(cfg.seed, static_cast<uint64_t>(epoch)));
    double loss_sum = 0.0;
    long long seen = 0;
    long long correct = 0;
    std::vector<double> epoch_scores;
    std::vector<int> epoch_targets;
    if (data.task == TaskKind::kMultiLabel) {
      epoch_scores.reserve(static_cast<size_t>(data.n) * width);
      epoch_targets.reserve(static_cast<size_t>(data.n) * width);
    }

    for (const auto& idx : batches) {
      auto x = assemble_batch<T>(data, idx);
      auto logits = model_forward(model, bank_id, x, BnMode::kTrain,
                                  update_stats);
      Tensor<T> loss;
      if (data.task == TaskKind::kSingleLabel) {
        const auto labels = batch_labels(data, idx);
        loss = cross_entropy_loss(logits, labels);
        const auto rows = logits.data();
        for (size_t b = 0; b < idx.size(); ++b) {
          const int pred =
              detail::argmax_row(rows.data() + b * width, width);
          if (pred == labels[b]) ++correct;
        }
      } else {
        auto targets = batch_multi_hot<T>(data, idx);
        loss = binary_cross_entropy_loss(logits, targets);
        const auto rows = logits.data();
        const auto trows = targets.data();
        for (size_t j = 0; j < rows.size(); ++j) {
          epoch_scores.push_back(static_cast<double>(rows[j]));
          epoch_targets.push_back(static_cast<int>(trows[j]));
        }
      }
      const double value = static_cast<double>(loss.item());
      if (!std::isfinite(value)) {
        throw NumericError("train_domain: non-finite loss at epoch " +
                           std::to_string(epoch));
      }
      loss_sum += value * static_cast<double>(idx.size());
      seen += static_cast<long long>(idx.size());
      if (!params.empty()) {
        for (auto& p : params) p.tensor.clear_grad();
        backward(loss);
        adam_step(params, state, lr, cfg.adam);
      }
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.lr = lr;
    stats.loss = loss_sum / static_cast<double>(seen);
    stats.train_score =
        data.task == TaskKind::kSingleLabel
            ? static_cast<double>(correct) / static_cast<double>(seen)
            : lwlrap(data.n, width, epoch_scores, epoch_targets);
    if (cfg.log) {
      char line[160];
      std::snprintf(line, sizeof line,
                    "  epoch %3d/%d  lr %.6f  loss %.4f  train %.4f",
                    epoch + 1, cfg.epochs, stats.lr, stats.loss,
                    stats.train_score);
      *cfg.log << line << '\n';
    }
    history.push_back(stats);
  }

  for (auto& p : params) {
    p.tensor.set_requires_grad(false);
    p.tensor.clear_grad();
  }
  return history;
}

// EVAL-mode test score of one bank: accuracy for single-label tasks, lwlrap
// for multi-label ones. Labels must already index the bank's logit columns.
template <typename T>
double evaluate_bank(DilModel<T>& model, int bank_id, const Dataset& data,
                     int eval_batch = 256) {
  const int width = detail::bank_logit_width(model, bank_id);
  if (data.n == 0) throw DataError("evaluate_bank: empty dataset");
  if (data.task != model.banks[static_cast<size_t>(bank_id)].spec.task) {
    throw DataError("evaluate_bank: dataset task does not match bank");
  }
  if (data.n_classes != width) {
    throw DataError("evaluate_bank: dataset labels span " +
                    std::to_string(data.n_classes) + " classes but bank " +
                    std::to_string(bank_id) + " produces " +
                    std::to_string(width) + " logits");
  }
  if (eval_batch < 1) throw ConfigError("evaluate_bank: eval_batch must be >= 1");

  std::vector<int> predictions;
  predictions.reserve(static_cast<size_t>(data.n));
  std::vector<double> scores;
  if (data.task == TaskKind::kMultiLabel) {
    scores.reserve(static_cast<size_t>(data.n) * width);
  }
  for (int at = 0; at < data.n; at += eval_batch) {
    const int stop = std::min(data.n, at + eval_batch);
    std::vector<int> idx(static_cast<size_t>(stop - at));
    for (int i = at; i < stop; ++i) idx[static_cast<size_t>(i - at)] = i;
    auto x = assemble_batch<T>(data, idx);
    auto logits = model_forward(model, bank_id, x, BnMode::kEval, false);
    const auto rows = logits.data();
    if (data.task == TaskKind::kSingleLabel) {
      for (size_t b = 0; b < idx.size(); ++b) {
        predictions.push_back(
            detail::argmax_row(rows.data() + b * width, width));
      }
    } else {
      for (size_t j = 0; j < rows.size(); ++j) {
        scores.push_back(static_cast<double>(rows[j]));
      }
    }
  }
  if (data.task == TaskKind::kSingleLabel) {
    return accuracy(predictions, data.labels);
  }
  return lwlrap(data.n, width, scores, data.multi_hot);
}

struct AgnosticEval {
  double score = 0.0;        // accuracy or lwlrap under per-sample routing
  long long chosen_true = 0;  // samples routed to `true_bank`
  long long total = 0;
  std::vector<long long> chosen;  // samples routed to each bank
};

// Entropy-routed test score: every sample is classified by the bank the
// uncertainty rule selects. Correctness is judged by class NAME so banks
// with different class orders compare fairly; `class_names` lists the
// dataset's classes in its own label order. For multi-label data the chosen
// bank's probabilities are scattered back into the dataset's class space
// (classes the bank lacks sink below every expressed score). Pass
// true_bank -1 when the data's origin is unknown; chosen_true then stays 0.
template <typename T>
AgnosticEval evaluate_agnostic(DilModel<T>& model, const Dataset& data,
                               int true_bank,
                               const std::vector<std::string>& class_names,
                               bool normalize_by_class_count = false,
                               int eval_batch = 256) {
  if (data.n == 0) throw DataError("evaluate_agnostic: empty dataset");
  if (static_cast<int>(class_names.size()) != data.n_classes) {
    throw DataError("evaluate_agnostic: " +
                    std::to_string(class_names.size()) +
                    " class names for a dataset with " +
                    std::to_string(data.n_classes) + " classes");
  }
  if (true_bank < -1 || true_bank >= static_cast<int>(model.banks.size())) {
    throw ConfigError("evaluate_agnostic: true bank " +
                      std::to_string(true_bank) + " out of range");
  }
  if (eval_batch < 1) {
    throw ConfigError("evaluate_agnostic: eval_batch must be >= 1");
  }

  AgnosticEval out;
  out.chosen.assign(model.banks.size(), 0);
  long long correct = 0;
  std::vector<double> scores;
  if (data.task == TaskKind::kMultiLabel) {
    scores.assign(static_cast<size_t>(data.n) * data.n_classes, -1.0);
  }
  for (int at = 0; at < data.n; at += eval_batch) {
    const int stop = std::min(data.n, at + eval_batch);
    std::vector<int> idx(static_cast<size_t>(stop - at));
    for (int i = at; i < stop; ++i) idx[static_cast<size_t>(i - at)] = i;
    auto x = assemble_batch<T>(data, idx);
    const auto preds =
        predict_domain_agnostic(model, x, normalize_by_class_count);
    for (size_t b = 0; b < preds.size(); ++b) {
      const auto& p = preds[b];
      const int i = idx[b];
      ++out.chosen[static_cast<size_t>(p.chosen_bank)];
      if (p.chosen_bank == true_bank) ++out.chosen_true;
      const auto& chosen_names =
          detail::bank_class_names(model, p.chosen_bank);
      if (data.task == TaskKind::kSingleLabel) {
        const int pred = predicted_class(p.probabilities);
        const auto& truth =
            class_names[static_cast<size_t>(data.labels[static_cast<size_t>(i)])];
        if (chosen_names[static_cast<size_t>(pred)] == truth) ++correct;
      } else {
        double* row = scores.data() + static_cast<size_t>(i) * data.n_classes;
        for (size_t k = 0; k < chosen_names.size(); ++k) {
          for (int j = 0; j < data.n_classes; ++j) {
            if (class_names[static_cast<size_t>(j)] == chosen_names[k]) {
              row[j] = p.probabilities[k];
              break;
            }
          }
        }
      }
    }
  }
  out.total = data.n;
  out.score = data.task == TaskKind::kSingleLabel
                  ? static_cast<double>(correct) / static_cast<double>(data.n)
                  : lwlrap(data.n, data.n_classes, scores, data.multi_hot);
  return out;
}

struct ProtocolConfig {
  ArchConfig arch{};
  std::vector<std::string> vocabulary;  // derived from class ids when empty
  std::vector<SyntheticDomainSpec> domains = default_synthetic_domains();
  Strategy strategy = Strategy::kAdil;
  int epochs = 20;
  int batch_size = 32;
  double lr_base = 1e-3;         // first domain (and every non-incremental fit)
  double lr_incremental = 1e-4;  // later domains
  double eta_min = 0.0;
  AdamConfig adam{};
  uint64_t seed = 1;
  bool agnostic = false;           // also evaluate with entropy bank selection
  bool normalize_entropy = false;  // divide single-label entropy by ln(C)
  int eval_batch = 256;
  std::ostream* log = nullptr;
};

// One domain's samples in whatever label space they were loaded in;
// `class_names` names that space, and the protocol relabels into bank
// columns as needed.
struct DomainData {
  Dataset train;
  Dataset test;
  std::vector<std::string> class_names;
};

// The vocabulary a protocol run works over: the configured one, or
// "class_<id>" spanning every class id the domains use.
inline std::vector<std::string> protocol_vocabulary(
    const ProtocolConfig& cfg) {
  if (!cfg.vocabulary.empty()) return cfg.vocabulary;
  int max_id = 0;
  for (const auto& d : cfg.domains) {
    for (int id : d.class_ids) max_id = std::max(max_id, id);
  }
  std::vector<std::string> vocab;
  vocab.reserve(static_cast<size_t>(max_id) + 1);
  for (int id = 0; id <= max_id; ++id) {
    vocab.push_back("class_" + std::to_string(id));
  }
  return vocab;
}

// Generates every domain's train/test splits in memory, each from its own
// seed stream. The label space is the domain's own class list.
inline std::vector<DomainData> synthetic_domain_data(
    const ProtocolConfig& cfg) {
  const auto vocab = protocol_vocabulary(cfg);
  std::vector<DomainData> out;
  out.reserve(cfg.domains.size());
  for (size_t d = 0; d < cfg.domains.size(); ++d) {
    const auto& spec = cfg.domains[d];
    const uint64_t data_seed =
        derive_seed(cfg.seed, 50, static_cast<uint64_t>(d));
    DomainData data;
    data.train = generate_synthetic_domain(spec, data_seed, true);
    data.test = generate_synthetic_domain(spec, data_seed, false);
    for (int id : spec.class_ids) {
      if (id >= static_cast<int>(vocab.size())) {
        throw ConfigError("protocol: domain '" + spec.name + "' class id " +
                          std::to_string(id) + " is outside the vocabulary");
      }
      data.class_names.push_back(vocab[static_cast<size_t>(id)]);
    }
    out.push_back(std::move(data));
  }
  return out;
}

// Loads every domain's splits from a directory tree written by `generate`:
// <root>/vocabulary.txt plus <root>/<domain>/{train,test}.csv manifests.
// Loaded labels are vocabulary indices, so each domain's class space is the
// full vocabulary. A missing or unreadable manifest names its domain.
inline std::vector<DomainData> load_domain_data(const ProtocolConfig& cfg,
                                                const std::string& data_root) {
  namespace fs = std::filesystem;
  const fs::path root(data_root);
  const fs::path vocab_path = root / "vocabulary.txt";
  if (!fs::exists(vocab_path)) {
    throw DataError("data root '" + data_root + "' has no vocabulary.txt");
  }
  const auto vocab = load_vocabulary(vocab_path.string());
  std::vector<DomainData> out;
  out.reserve(cfg.domains.size());
  for (const auto& spec : cfg.domains) {
    const fs::path dir = root / spec.name;
    DomainData data;
    for (const bool train : {true, false}) {
      const fs::path manifest_path = dir / (train ? "train.csv" : "test.csv");
      if (!fs::exists(manifest_path)) {
        throw DataError("domain '" + spec.name + "': missing manifest " +
                        manifest_path.string());
      }
      const auto manifest = load_manifest(manifest_path.string());
      Dataset& split = train ? data.train : data.test;
      split = load_manifest_dataset(manifest, vocab, spec.task);
    }
    data.class_names = vocab;
    out.push_back(std::move(data));
  }
  return out;
}

template <typename T>
struct ProtocolResult {
  DilModel<T> model;  // after the final step (kSingle/kMulti: the last fit)
  MetricsReport aware;
  std::optional<MetricsReport> agnostic;
  // Fraction of final-step test samples routed to their own bank.
  std::optional<double> selection_accuracy;
};

namespace detail {

inline void log_step(std::ostream* log, int step, const std::string& name,
                     Strategy strategy, double lr) {
  if (!log) return;
  char line[160];
  std::snprintf(line, sizeof line, "step %d: train domain '%s' (%s, lr %g)",
                step, name.c_str(), strategy_name(strategy), lr);
  *log << line << '\n';
}

inline void log_eval(std::ostream* log, int step, int domain, double score) {
  if (!log) return;
  char line[96];
  std::snprintf(line, sizeof line, "step %d: eval domain %d score %.4f", step,
                domain, score);
  *log << line << '\n';
}

}  // namespace detail

// Called after every completed protocol step with the step index and the
// model as it stands; lets callers snapshot per-step checkpoints.
template <typename T>
using StepHook = std::function<void(int step, DilModel<T>& model)>;

// Sequential domain-incremental run over pre-loaded domain data: fit the
// base domain, then absorb each further domain under the chosen strategy,
// evaluating every seen domain after each step. Banked strategies guarantee
// (and verify by digest) that training step t leaves everything outside
// bank t bit-identical. Past domains' training data is never touched again
// (kMulti, which pools it by definition, is the one exception).
template <typename T>
ProtocolResult<T> run_protocol(const ProtocolConfig& cfg,
                               const std::vector<DomainData>& data,
                               const StepHook<T>& on_step = {}) {
  if (cfg.domains.empty()) throw ConfigError("protocol: no domains configured");
  cfg.arch.validate();
  if (data.size() != cfg.domains.size()) {
    throw ConfigError("protocol: " + std::to_string(data.size()) +
                      " domain datasets for " +
                      std::to_string(cfg.domains.size()) + " domains");
  }
  for (size_t d = 0; d < cfg.domains.size(); ++d) {
    const auto& spec = cfg.domains[d];
    spec.validate();
    if (spec.task != cfg.domains.front().task) {
      throw ConfigError("protocol: domains mix single- and multi-label tasks");
    }
    const auto& dd = data[d];
    if (dd.train.n == 0 || dd.test.n == 0) {
      throw DataError("protocol: domain '" + spec.name + "' has no " +
                      (dd.train.n == 0 ? "training" : "test") + " samples");
    }
    for (const Dataset* ds : {&dd.train, &dd.test}) {
      if (ds->f != cfg.arch.f || ds->t != cfg.arch.t) {
        throw ConfigError("protocol: domain '" + spec.name + "' data is " +
                          std::to_string(ds->f) + "x" + std::to_string(ds->t) +
                          " but the model expects " +
                          std::to_string(cfg.arch.f) + "x" +
                          std::to_string(cfg.arch.t));
      }
      if (ds->task != spec.task) {
        throw ConfigError("protocol: domain '" + spec.name +
                          "' data task does not match its spec");
      }
    }
  }

  const auto vocab = protocol_vocabulary(cfg);
  const int n_domains = static_cast<int>(cfg.domains.size());
  std::vector<DomainSpec> dspecs(static_cast<size_t>(n_domains));
  for (int d = 0; d < n_domains; ++d) {
    const auto& sd = cfg.domains[static_cast<size_t>(d)];
    auto& spec = dspecs[static_cast<size_t>(d)];
    spec.domain_id = d;
    spec.name = sd.name;
    spec.task = sd.task;
    for (int id : sd.class_ids) {
      if (id >= static_cast<int>(vocab.size())) {
        throw ConfigError("protocol: domain '" + sd.name + "' class id " +
                          std::to_string(id) + " is outside the vocabulary");
      }
      spec.class_list.push_back(vocab[static_cast<size_t>(id)]);
    }
  }

  const bool banked = strategy_is_banked(cfg.strategy);
  if (cfg.agnostic && !banked) {
    throw ConfigError(std::string("protocol: domain-agnostic evaluation needs "
                                  "per-domain banks (strategy '") +
                      strategy_name(cfg.strategy) + "')");
  }

  const std::string metric_kind =
      cfg.domains.front().task == TaskKind::kSingleLabel ? "accuracy"
                                                         : "lwlrap";
  auto step_config = [&](int step, double lr) {
    TrainConfig tc;
    tc.epochs = cfg.epochs;
    tc.batch_size = cfg.batch_size;
    tc.lr = lr;
    tc.eta_min = cfg.eta_min;
    tc.adam = cfg.adam;
    tc.seed = derive_seed(cfg.seed, 3, static_cast<uint64_t>(step));
    tc.log = cfg.log;
    return tc;
  };

  std::vector<EvalCell> aware_cells;
  std::vector<EvalCell> agnostic_cells;
  long long selection_true = 0;
  long long selection_total = 0;
  ProtocolResult<T> result;

  if (banked) {
    auto model = build_model<T>(cfg.arch, vocab, dspecs[0],
                                derive_seed(cfg.seed, 7));
    // Test sets relabeled once into their own bank's column space.
    std::vector<Dataset> test_bank(static_cast<size_t>(n_domains));
    for (int t = 0; t < n_domains; ++t) {
      const double lr = t == 0 ? cfg.lr_base : cfg.lr_incremental;
      detail::log_step(cfg.log, t, dspecs[static_cast<size_t>(t)].name,
                       t == 0 ? Strategy::kFt : cfg.strategy, lr);
      if (t == 0) {
        // The base fit trains the full model regardless of strategy; the
        // strategies differ only in how later domains are absorbed.
        const Dataset train = relabel_for_bank(
            model, 0, data[0].train, data[0].class_names);
        train_domain(model, 0, train, Strategy::kFt, step_config(0, lr));
      } else {
        add_domain(model, dspecs[static_cast<size_t>(t)],
                   strategy_head_mode(cfg.strategy));
        const Dataset train = relabel_for_bank(
            model, t, data[static_cast<size_t>(t)].train,
            data[static_cast<size_t>(t)].class_names);
        const auto frozen = model_digests(model, t);
        train_domain(model, t, train, cfg.strategy, step_config(t, lr));
        if (model_digests(model, t) != frozen) {
          throw NumericError(
              "protocol: shared state moved while training bank " +
              std::to_string(t));
        }
      }
      test_bank[static_cast<size_t>(t)] = relabel_for_bank(
          model, t, data[static_cast<size_t>(t)].test,
          data[static_cast<size_t>(t)].class_names);
      for (int i = 0; i <= t; ++i) {
        const double s = evaluate_bank(model, i,
                                       test_bank[static_cast<size_t>(i)],
                                       cfg.eval_batch);
        detail::log_eval(cfg.log, t, i, s);
        aware_cells.push_back({t, i, s});
      }
      if (cfg.agnostic) {
        for (int i = 0; i <= t; ++i) {
          const auto a = evaluate_agnostic(
              model, data[static_cast<size_t>(i)].test, i,
              data[static_cast<size_t>(i)].class_names,
              cfg.normalize_entropy, cfg.eval_batch);
          agnostic_cells.push_back({t, i, a.score});
          if (t == n_domains - 1) {
            selection_true += a.chosen_true;
            selection_total += a.total;
          }
        }
      }
      if (on_step) on_step(t, model);
    }
    result.model = std::move(model);
  } else if (cfg.strategy == Strategy::kFe || cfg.strategy == Strategy::kFt) {
    auto model = build_model<T>(cfg.arch, vocab, dspecs[0],
                                derive_seed(cfg.seed, 7));
    std::vector<Dataset> test_base(static_cast<size_t>(n_domains));
    for (int d = 0; d < n_domains; ++d) {
      test_base[static_cast<size_t>(d)] = relabel_for_bank(
          model, 0, data[static_cast<size_t>(d)].test,
          data[static_cast<size_t>(d)].class_names);
    }
    for (int t = 0; t < n_domains; ++t) {
      const double lr = t == 0 ? cfg.lr_base : cfg.lr_incremental;
      const Strategy step_strategy = t == 0 ? Strategy::kFt : cfg.strategy;
      detail::log_step(cfg.log, t, dspecs[static_cast<size_t>(t)].name,
                       step_strategy, lr);
      const Dataset train = relabel_for_bank(
          model, 0, data[static_cast<size_t>(t)].train,
          data[static_cast<size_t>(t)].class_names);
      train_domain(model, 0, train, step_strategy, step_config(t, lr));
      for (int i = 0; i <= t; ++i) {
        const double s = evaluate_bank(model, 0,
                                       test_base[static_cast<size_t>(i)],
                                       cfg.eval_batch);
        detail::log_eval(cfg.log, t, i, s);
        aware_cells.push_back({t, i, s});
      }
      if (on_step) on_step(t, model);
    }
    result.model = std::move(model);
  } else if (cfg.strategy == Strategy::kSingle) {
    std::vector<double> diagonal(static_cast<size_t>(n_domains), 0.0);
    for (int t = 0; t < n_domains; ++t) {
      DomainSpec base_spec = dspecs[static_cast<size_t>(t)];
      base_spec.domain_id = 0;
      auto model = build_model<T>(
          cfg.arch, vocab, base_spec,
          derive_seed(cfg.seed, 8, static_cast<uint64_t>(t)));
      detail::log_step(cfg.log, t, base_spec.name, Strategy::kSingle,
                       cfg.lr_base);
      const Dataset train = relabel_for_bank(
          model, 0, data[static_cast<size_t>(t)].train,
          data[static_cast<size_t>(t)].class_names);
      train_domain(model, 0, train, Strategy::kSingle,
                   step_config(t, cfg.lr_base));
      const Dataset test = relabel_for_bank(
          model, 0, data[static_cast<size_t>(t)].test,
          data[static_cast<size_t>(t)].class_names);
      diagonal[static_cast<size_t>(t)] =
          evaluate_bank(model, 0, test, cfg.eval_batch);
      for (int i = 0; i <= t; ++i) {
        detail::log_eval(cfg.log, t, i, diagonal[static_cast<size_t>(i)]);
        aware_cells.push_back({t, i, diagonal[static_cast<size_t>(i)]});
      }
      if (on_step) on_step(t, model);
      if (t == n_domains - 1) result.model = std::move(model);
    }
  } else {  // Strategy::kMulti: refit on everything seen so far
    for (int t = 0; t < n_domains; ++t) {
      auto model = build_model<T>(cfg.arch, vocab, dspecs[0],
                                  derive_seed(cfg.seed, 7));
      std::vector<Dataset> pool;
      for (int i = 0; i <= t; ++i) {
        pool.push_back(relabel_for_bank(model, 0,
                                        data[static_cast<size_t>(i)].train,
                                        data[static_cast<size_t>(i)].class_names));
      }
      detail::log_step(cfg.log, t, dspecs[static_cast<size_t>(t)].name,
                       Strategy::kMulti, cfg.lr_base);
      train_domain(model, 0, concat_datasets(pool), Strategy::kMulti,
                   step_config(t, cfg.lr_base));
      for (int i = 0; i <= t; ++i) {
        const Dataset test = relabel_for_bank(
            model, 0, data[static_cast<size_t>(i)].test,
            data[static_cast<size_t>(i)].class_names);
        const double s = evaluate_bank(model, 0, test, cfg.eval_batch);
        detail::log_eval(cfg.log, t, i, s);
        aware_cells.push_back({t, i, s});
      }
      if (on_step) on_step(t, model);
      if (t == n_domains - 1) result.model = std::move(model);
    }
  }

  result.aware = build_report(aware_cells, metric_kind);
  if (cfg.agnostic) {
    result.agnostic = build_report(agnostic_cells, metric_kind);
    result.selection_accuracy =
        selection_total == 0
            ? 0.0
            : static_cast<double>(selection_true) /
                  static_cast<double>(selection_total);
  }
  return result;
}

// Convenience: generate the configured domains in memory and run.
template <typename T>
ProtocolResult<T> run_protocol(const ProtocolConfig& cfg,
                               const StepHook<T>& on_step = {}) {
  return run_protocol<T>(cfg, synthetic_domain_data(cfg), on_step);
}

}  // namespace dil
