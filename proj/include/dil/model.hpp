#pragma once

#include <map>
#include <string>
#include <vector>

#include "dil/common.hpp"
#include "dil/conv_ops.hpp"
#include "dil/layers.hpp"
#include "dil/rng.hpp"
#include "dil/tensor.hpp"

namespace dil {

// Trunk shape: n_blocks blocks of (conv3x3 pad1 -> BN -> ReLU) x
// convs_per_block followed by a 2x2 average pool, then global pooling
// (per-channel mean + max) and a linear head.
struct ArchConfig {
  int n_blocks = 3;
  std::vector<int> channels = {8, 16, 32};  // output channels per block
  int f = 16;  // input rows
  int t = 16;  // input columns
  int convs_per_block = 2;

  int bn_layer_count() const { return n_blocks * convs_per_block; }

  void validate() const {
    if (n_blocks < 1) throw ConfigError("arch: n_blocks must be >= 1");
    if (convs_per_block < 1) {
      throw ConfigError("arch: convs_per_block must be >= 1");
    }
    if (channels.size() != static_cast<size_t>(n_blocks)) {
      throw ConfigError("arch: " + std::to_string(channels.size()) +
                        " channel widths for " + std::to_string(n_blocks) +
                        " blocks");
    }
    for (int c : channels) {
      if (c < 1) throw ConfigError("arch: channel widths must be >= 1");
    }
    int h = f, w = t;
    for (int b = 0; b < n_blocks; ++b) {
      h /= 2;
      w /= 2;
      if (h < 1 || w < 1) {
        throw ConfigError("arch: spatial dims underflow at block " +
                          std::to_string(b) + " (input " + std::to_string(f) +
                          "x" + std::to_string(t) + ")");
      }
    }
  }
};

struct DomainSpec {
  int domain_id = 0;
  std::string name;
  std::vector<std::string> class_list;  // ordered, from the global vocabulary
  TaskKind task = TaskKind::kSingleLabel;
};

// How a bank turns trunk features into logits.
//   kBase:       base head G_1 alone (bank 0).
//   kResidual:   own head plus G_1's mapped columns where classes overlap.
//   kIndependent:own head alone.
//   kSharedBase: G_1's mapped columns alone (requires a full class map).
enum class HeadMode { kBase, kResidual, kIndependent, kSharedBase };

// The training regimes the protocol runner knows about.
enum class Strategy {
  kFe,       // frozen trunk, retrain the base head, single bank
  kFt,       // full fine-tuning, single bank
  kSingle,   // fresh model per domain (upper bound, not incremental)
  kMulti,    // retrain on all data seen so far (violates the DIL setup)
  kBnStats,  // per-domain BN statistics only, no gradient steps
  kClf,      // per-domain head only
  kBn,       // per-domain BN affine + statistics, shared base head
  kBnClf,    // per-domain BN affine + statistics + own head
  kAdil      // per-domain BN affine + statistics + residual head
};

const char* strategy_name(Strategy s);
Strategy strategy_from_name(const std::string& name);
// All names, in the order listed by unknown-strategy errors.
std::vector<std::string> strategy_names();
// True for strategies whose past banks and trunk stay bit-frozen.
bool strategy_is_banked(Strategy s);

template <typename T>
struct ConvLayer {
  Tensor<T> kernel;  // [out, in, 3, 3]
  Tensor<T> bias;    // [out]
};

template <typename T>
struct DomainBank {
  DomainSpec spec;
  HeadMode head_mode = HeadMode::kBase;
  std::vector<BnParams<T>> bn;  // one per BN layer
  LinearParams<T> head;         // unused for kBase / kSharedBase
  std::vector<int> class_map;   // class position -> base class position or -1
};

template <typename T>
struct DilModel {
  ArchConfig arch;
  std::vector<std::string> vocabulary;
  std::vector<ConvLayer<T>> convs;  // shared trunk weights
  LinearParams<T> base_head;        // G_1, spanning banks[0].spec.class_list
  std::vector<DomainBank<T>> banks;
};

// A named handle onto one parameter tensor of a model.
template <typename T>
struct NamedParam {
  std::string name;
  Tensor<T> tensor;
};

namespace detail {

inline int vocab_index(const std::vector<std::string>& vocabulary,
                       const std::string& name) {
  for (size_t i = 0; i < vocabulary.size(); ++i) {
    if (vocabulary[i] == name) return static_cast<int>(i);
  }
  return -1;
}

inline void check_domain_spec(const DomainSpec& spec,
                              const std::vector<std::string>& vocabulary) {
  if (spec.class_list.empty()) {
    throw ConfigError("domain '" + spec.name + "': empty class list");
  }
  for (size_t i = 0; i < spec.class_list.size(); ++i) {
    if (vocab_index(vocabulary, spec.class_list[i]) < 0) {
      throw ConfigError("domain '" + spec.name + "': class '" +
                        spec.class_list[i] + "' is not in the vocabulary");
    }
    for (size_t j = 0; j < i; ++j) {
      if (spec.class_list[j] == spec.class_list[i]) {
        throw ConfigError("domain '" + spec.name + "': duplicate class '" +
                          spec.class_list[i] + "'");
      }
    }
  }
}

}  // namespace detail

// Positions of `class_list` within the model's base-domain class list; -1
// where a class has no base counterpart.
template <typename T>
std::vector<int> make_class_map(const DilModel<T>& model,
                                const std::vector<std::string>& class_list) {
  const auto& base = model.banks.at(0).spec.class_list;
  std::vector<int> map;
  map.reserve(class_list.size());
  for (const auto& name : class_list) {
    int at = -1;
    for (size_t i = 0; i < base.size(); ++i) {
      if (base[i] == name) {
        at = static_cast<int>(i);
        break;
      }
    }
    map.push_back(at);
  }
  return map;
}

// Deterministic init: He-uniform conv kernels (bound sqrt(6/fan_in)), zero
// conv biases, BN gamma 1 / beta 0 / mean 0 / var 1, head weights uniform
// within 1/sqrt(fan_in), zero head bias. Every tensor draws from its own
// seed stream, so layer widths can change without reshuffling the rest.
template <typename T>
DilModel<T> build_model(const ArchConfig& arch,
                        const std::vector<std::string>& vocabulary,
                        const DomainSpec& base_domain, uint64_t seed) {
  arch.validate();
  if (vocabulary.empty()) throw ConfigError("build_model: empty vocabulary");
  detail::check_domain_spec(base_domain, vocabulary);
  if (base_domain.domain_id != 0) {
    throw ConfigError("build_model: base domain must have id 0, got " +
                      std::to_string(base_domain.domain_id));
  }

  DilModel<T> model;
  model.arch = arch;
  model.vocabulary = vocabulary;

  int in_ch = 1;
  for (int b = 0; b < arch.n_blocks; ++b) {
    const int out_ch = arch.channels[static_cast<size_t>(b)];
    for (int c = 0; c < arch.convs_per_block; ++c) {
      const int layer = b * arch.convs_per_block + c;
      ConvLayer<T> conv;
      conv.kernel = Tensor<T>::zeros({out_ch, in_ch, 3, 3});
      conv.bias = Tensor<T>::zeros({out_ch});
      Rng rng(derive_seed(seed, 1, static_cast<uint64_t>(layer)));
      const double bound = std::sqrt(6.0 / (static_cast<double>(in_ch) * 9));
      for (auto& v : conv.kernel.raw_data()) {
        v = static_cast<T>(rng.uniform(-bound, bound));
      }
      model.convs.push_back(std::move(conv));
      in_ch = out_ch;
    }
  }

  const int feat = arch.channels.back();
  const int n_base = static_cast<int>(base_domain.class_list.size());
  model.base_head.weight = Tensor<T>::zeros({n_base, feat});
  model.base_head.bias = Tensor<T>::zeros({n_base});
  {
    Rng rng(derive_seed(seed, 2));
    const double bound = 1.0 / std::sqrt(static_cast<double>(feat));
    for (auto& v : model.base_head.weight.raw_data()) {
      v = static_cast<T>(rng.uniform(-bound, bound));
    }
  }

  DomainBank<T> bank0;
  bank0.spec = base_domain;
  bank0.head_mode = HeadMode::kBase;
  in_ch = 1;
  for (int b = 0; b < arch.n_blocks; ++b) {
    const int out_ch = arch.channels[static_cast<size_t>(b)];
    for (int c = 0; c < arch.convs_per_block; ++c) {
      bank0.bn.push_back(BnParams<T>::init(out_ch));
    }
    in_ch = out_ch;
  }
  bank0.class_map.resize(base_domain.class_list.size());
  for (size_t i = 0; i < bank0.class_map.size(); ++i) {
    bank0.class_map[i] = static_cast<int>(i);
  }
  model.banks.push_back(std::move(bank0));
  return model;
}

// Appends a bank for the next domain: BN affine AND statistics are copied
// from the previous bank, and any own head starts at zero so a residual
// bank initially reproduces the base classifier on mapped classes.
template <typename T>
int add_domain(DilModel<T>& model, const DomainSpec& spec, HeadMode mode) {
  detail::check_domain_spec(spec, model.vocabulary);
  if (spec.domain_id != static_cast<int>(model.banks.size())) {
    throw ConfigError("add_domain: domain id " + std::to_string(spec.domain_id) +
                      " does not extend " +
                      std::to_string(model.banks.size()) + " existing banks");
  }
  if (mode == HeadMode::kBase) {
    throw ConfigError("add_domain: only bank 0 can use the base head mode");
  }

  DomainBank<T> bank;
  bank.spec = spec;
  bank.head_mode = mode;
  const auto& prev = model.banks.back();
  bank.bn.reserve(prev.bn.size());
  for (const auto& bn : prev.bn) bank.bn.push_back(bn.clone());
  bank.class_map = make_class_map(model, spec.class_list);
  if (mode == HeadMode::kSharedBase) {
    for (size_t i = 0; i < bank.class_map.size(); ++i) {
      if (bank.class_map[i] < 0) {
        throw ConfigError("add_domain: class '" + spec.class_list[i] +
                          "' has no base-classifier column to share");
      }
    }
  } else {
    const int feat = model.arch.channels.back();
    bank.head.weight = Tensor<T>::zeros(
        {static_cast<int>(spec.class_list.size()), feat});
    bank.head.bias =
        Tensor<T>::zeros({static_cast<int>(spec.class_list.size())});
  }
  model.banks.push_back(std::move(bank));
  return static_cast<int>(model.banks.size()) - 1;
}

// Trunk + chosen bank forward pass to logits over the bank's class list.
// `mode` picks batch vs running statistics; `update_stats` folds the batch
// statistics into the bank's running estimates (TRAIN mode only).
template <typename T>
Tensor<T> model_forward(DilModel<T>& model, int bank_id, const Tensor<T>& batch,
                        BnMode mode, bool update_stats = false) {
  if (bank_id < 0 || bank_id >= static_cast<int>(model.banks.size())) {
    throw ConfigError("forward: bank " + std::to_string(bank_id) +
                      " out of range (have " +
                      std::to_string(model.banks.size()) + ")");
  }
  auto& bank = model.banks[static_cast<size_t>(bank_id)];
  Tensor<T> x = batch;
  int layer = 0;
  for (int b = 0; b < model.arch.n_blocks; ++b) {
    for (int c = 0; c < model.arch.convs_per_block; ++c) {
      auto& conv = model.convs[static_cast<size_t>(layer)];
      x = conv2d(x, conv.kernel, 1, 1);
      x = conv_bias(x, conv.bias);
      x = batchnorm_forward(x, bank.bn[static_cast<size_t>(layer)], mode,
                            update_stats);
      x = relu(x);
      ++layer;
    }
    x = avg_pool2d(x, 2);
  }
  Tensor<T> features = global_pool(x);

  switch (bank.head_mode) {
    case HeadMode::kBase:
      return linear_forward(features, model.base_head);
    case HeadMode::kIndependent:
      return linear_forward(features, bank.head);
    case HeadMode::kSharedBase:
      return gather_columns(linear_forward(features, model.base_head),
                            bank.class_map);
    case HeadMode::kResidual:
      return add(linear_forward(features, bank.head),
                 gather_columns(linear_forward(features, model.base_head),
                                bank.class_map));
  }
  throw ConfigError("forward: unknown head mode");
}

// Every gradient-capable parameter (running statistics are buffers, listed
// separately by named_buffers).
template <typename T>
std::vector<NamedParam<T>> named_parameters(DilModel<T>& model) {
  std::vector<NamedParam<T>> out;
  for (size_t l = 0; l < model.convs.size(); ++l) {
    const std::string p = "conv" + std::to_string(l);
    out.push_back({p + ".kernel", model.convs[l].kernel});
    out.push_back({p + ".bias", model.convs[l].bias});
  }
  out.push_back({"base_head.weight", model.base_head.weight});
  out.push_back({"base_head.bias", model.base_head.bias});
  for (size_t b = 0; b < model.banks.size(); ++b) {
    auto& bank = model.banks[b];
    const std::string bp = "bank" + std::to_string(b);
    for (size_t l = 0; l < bank.bn.size(); ++l) {
      out.push_back({bp + ".bn" + std::to_string(l) + ".gamma",
                     bank.bn[l].gamma});
      out.push_back({bp + ".bn" + std::to_string(l) + ".beta",
                     bank.bn[l].beta});
    }
    if (bank.head.weight.defined()) {
      out.push_back({bp + ".head.weight", bank.head.weight});
      out.push_back({bp + ".head.bias", bank.head.bias});
    }
  }
  return out;
}

// The non-gradient state: BN running statistics per bank.
template <typename T>
std::vector<NamedParam<T>> named_buffers(DilModel<T>& model) {
  std::vector<NamedParam<T>> out;
  for (size_t b = 0; b < model.banks.size(); ++b) {
    auto& bank = model.banks[b];
    const std::string bp = "bank" + std::to_string(b);
    for (size_t l = 0; l < bank.bn.size(); ++l) {
      out.push_back({bp + ".bn" + std::to_string(l) + ".running_mean",
                     bank.bn[l].running_mean});
      out.push_back({bp + ".bn" + std::to_string(l) + ".running_var",
                     bank.bn[l].running_var});
    }
  }
  return out;
}

// The parameters a strategy is allowed to move when learning `step`.
template <typename T>
std::vector<NamedParam<T>> trainable_params(DilModel<T>& model,
                                            Strategy strategy, int step) {
  if (step < 0 || step >= static_cast<int>(model.banks.size())) {
    throw ConfigError("trainable_params: step " + std::to_string(step) +
                      " has no bank");
  }
  auto& bank = model.banks[static_cast<size_t>(step)];
  const std::string bp = "bank" + std::to_string(step);
  std::vector<NamedParam<T>> out;
  auto push_bn_affine = [&] {
    for (size_t l = 0; l < bank.bn.size(); ++l) {
      out.push_back({bp + ".bn" + std::to_string(l) + ".gamma",
                     bank.bn[l].gamma});
      out.push_back({bp + ".bn" + std::to_string(l) + ".beta",
                     bank.bn[l].beta});
    }
  };
  auto push_head = [&] {
    if (!bank.head.weight.defined()) {
      throw ConfigError("trainable_params: bank " + std::to_string(step) +
                        " has no own head");
    }
    out.push_back({bp + ".head.weight", bank.head.weight});
    out.push_back({bp + ".head.bias", bank.head.bias});
  };
  switch (strategy) {
    case Strategy::kAdil:
    case Strategy::kBnClf:
      push_bn_affine();
      push_head();
      break;
    case Strategy::kBn:
      push_bn_affine();
      break;
    case Strategy::kClf:
      if (step == 0) {
        out.push_back({"base_head.weight", model.base_head.weight});
        out.push_back({"base_head.bias", model.base_head.bias});
      } else {
        push_head();
      }
      break;
    case Strategy::kBnStats:
      break;  // statistics move via the update_stats flag, not gradients
    case Strategy::kFe:
      out.push_back({"base_head.weight", model.base_head.weight});
      out.push_back({"base_head.bias", model.base_head.bias});
      break;
    case Strategy::kFt:
    case Strategy::kSingle:
    case Strategy::kMulti:
      return named_parameters(model);
  }
  return out;
}

struct ParamAudit {
  long long shared_count = 0;      // trunk convs + base head
  long long per_domain_count = 0;  // one incremental bank: BN affine +
                                   // statistics + residual head
  double shared_fraction = 0.0;
};

inline double audit_fraction(long long shared, long long per_domain) {
  if (per_domain == 0) return 1.0;
  return static_cast<double>(shared) /
         static_cast<double>(shared + per_domain);
}

// Parameter economy of adding one domain. The per-domain cost is counted
// for a full bank (BN affine + running statistics + an own head the size of
// the base head), independent of which strategies were actually used.
template <typename T>
ParamAudit param_audit(const DilModel<T>& model) {
  ParamAudit audit;
  for (const auto& conv : model.convs) {
    audit.shared_count += static_cast<long long>(conv.kernel.numel());
    audit.shared_count += static_cast<long long>(conv.bias.numel());
  }
  audit.shared_count += static_cast<long long>(model.base_head.weight.numel());
  audit.shared_count += static_cast<long long>(model.base_head.bias.numel());
  for (const auto& bn : model.banks.at(0).bn) {
    audit.per_domain_count += 2 * static_cast<long long>(bn.gamma.numel());
    audit.per_domain_count +=
        2 * static_cast<long long>(bn.running_mean.numel());
  }
  audit.per_domain_count +=
      static_cast<long long>(model.base_head.weight.numel());
  audit.per_domain_count += static_cast<long long>(model.base_head.bias.numel());
  audit.shared_fraction =
      audit_fraction(audit.shared_count, audit.per_domain_count);
  return audit;
}

template <typename T>
DilModel<T> clone_model(const DilModel<T>& model) {
  DilModel<T> out;
  out.arch = model.arch;
  out.vocabulary = model.vocabulary;
  for (const auto& conv : model.convs) {
    out.convs.push_back({conv.kernel.clone(), conv.bias.clone()});
  }
  out.base_head = model.base_head.clone();
  for (const auto& bank : model.banks) {
    DomainBank<T> copy;
    copy.spec = bank.spec;
    copy.head_mode = bank.head_mode;
    for (const auto& bn : bank.bn) copy.bn.push_back(bn.clone());
    if (bank.head.weight.defined()) copy.head = bank.head.clone();
    copy.class_map = bank.class_map;
    out.banks.push_back(std::move(copy));
  }
  return out;
}

// name -> content digest for every parameter and buffer. `skip_bank` leaves
// one bank out, which is how freeze checks isolate the bank being trained.
template <typename T>
std::map<std::string, uint64_t> model_digests(DilModel<T>& model,
                                              int skip_bank = -1) {
  std::map<std::string, uint64_t> out;
  const std::string skip =
      skip_bank < 0 ? std::string() : "bank" + std::to_string(skip_bank) + ".";
  for (auto& p : named_parameters(model)) {
    if (!skip.empty() && p.name.rfind(skip, 0) == 0) continue;
    out[p.name] = p.tensor.digest();
  }
  for (auto& p : named_buffers(model)) {
    if (!skip.empty() && p.name.rfind(skip, 0) == 0) continue;
    out[p.name] = p.tensor.digest();
  }
  return out;
}

}  // namespace dil
