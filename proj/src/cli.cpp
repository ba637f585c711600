#include "dil/cli.hpp"

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dil/checkpoint.hpp"
#include "dil/common.hpp"
#include "dil/config.hpp"
#include "dil/data.hpp"
#include "dil/report.hpp"
#include "dil/trainer.hpp"
#include "json.hpp"

namespace dil {

namespace {

namespace fs = std::filesystem;

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open " + path);
  out << text;
  if (!out) throw DataError("short write to " + path);
}

void make_dirs(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) {
    throw DataError("cannot create directory " + dir.string() + ": " +
                    ec.message());
  }
}

std::string fixed3(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3f", v);
  return buf;
}

// ---- generate ----------------------------------------------------------

struct GenerateArgs {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
};

// Names every positive class of one sample, in vocabulary order.
std::vector<std::string> sample_labels(
    const Dataset& data, int i, const std::vector<std::string>& class_names) {
  std::vector<std::string> labels;
  if (data.task == TaskKind::kSingleLabel) {
    labels.push_back(
        class_names[static_cast<size_t>(data.labels[static_cast<size_t>(i)])]);
    return labels;
  }
  for (int k = 0; k < data.n_classes; ++k) {
    if (data.multi_hot[static_cast<size_t>(i) * data.n_classes +
                       static_cast<size_t>(k)] != 0) {
      labels.push_back(class_names[static_cast<size_t>(k)]);
    }
  }
  if (labels.empty()) {
    throw DataError("generate: sample " + std::to_string(i) +
                    " has no positive labels; manifests cannot express it");
  }
  return labels;
}

int cmd_generate(const GenerateArgs& a, std::ostream& out) {
  ExperimentConfig cfg =
      a.config.empty() ? ExperimentConfig{} : load_config(a.config);
  auto& proto = cfg.protocol;
  if (a.seed) proto.seed = *a.seed;

  // Everything is validated and generated before the first byte lands on
  // disk, so a bad config never leaves a half-written tree.
  proto.arch.validate();
  for (const auto& spec : proto.domains) spec.validate();
  const auto vocab = protocol_vocabulary(proto);
  const auto data = synthetic_domain_data(proto);

  const fs::path root(a.out);
  make_dirs(root);
  write_vocabulary((root / "vocabulary.txt").string(), vocab);
  for (size_t d = 0; d < data.size(); ++d) {
    const auto& domain = proto.domains[d];
    const fs::path dir = root / domain.name;
    for (const bool train : {true, false}) {
      const char* split_name = train ? "train" : "test";
      const auto& split = train ? data[d].train : data[d].test;
      make_dirs(dir / split_name);
      Manifest manifest;
      const size_t grid = static_cast<size_t>(split.f) * split.t;
      for (int i = 0; i < split.n; ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "sample_%05d.dilf", i);
        const std::string path = (dir / split_name / name).string();
        std::vector<float> one(
            split.features.begin() + static_cast<size_t>(i) * grid,
            split.features.begin() + static_cast<size_t>(i + 1) * grid);
        write_features(path, split.f, split.t, one);
        manifest.records.push_back(
            {path, domain.name, sample_labels(split, i, data[d].class_names),
             0});
      }
      write_manifest((dir / (std::string(split_name) + ".csv")).string(),
                     manifest);
    }
    out << domain.name << ": " << data[d].train.n << " train / "
        << data[d].test.n << " test samples\n";
  }
  out << "wrote " << data.size() << " domains to " << root.string() << "\n";
  return 0;
}

// ---- protocol ----------------------------------------------------------

struct ProtocolArgs {
  std::string config;
  std::string data;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::string strategy;
  std::optional<int> epochs;
  bool agnostic = false;
  std::string precision;
};

template <typename T>
int run_protocol_cmd(ExperimentConfig& cfg, const ProtocolArgs& a,
                     std::ostream& out) {
  auto& proto = cfg.protocol;
  const auto data = a.data.empty() ? synthetic_domain_data(proto)
                                   : load_domain_data(proto, a.data);
  const fs::path root(a.out);
  StepHook<T> hook;
  if (!a.out.empty()) {
    make_dirs(root);
    hook = [&root](int step, DilModel<T>& model) {
      char name[32];
      std::snprintf(name, sizeof(name), "step_%02d.dilc", step);
      save_checkpoint(model, (root / name).string());
    };
  }

  auto result = run_protocol<T>(proto, data, hook);
  out << report_summary(result.aware);
  if (result.agnostic.has_value()) {
    out << "domain-agnostic routing:\n" << report_summary(*result.agnostic);
    if (result.selection_accuracy.has_value()) {
      out << "bank selection accuracy: " << fixed3(*result.selection_accuracy)
          << "\n";
    }
  }

  if (!a.out.empty()) {
    std::vector<std::string> names;
    for (const auto& spec : proto.domains) names.push_back(spec.name);
    const std::string method = strategy_name(proto.strategy);
    write_text((root / "report.json").string(), report_to_json(result.aware));
    write_text((root / "report.csv").string(), report_to_csv(result.aware));
    write_text((root / "plot_steps.csv").string(),
               plot_steps_csv(result.aware));
    write_text((root / "plot_domains.csv").string(),
               plot_domains_csv(method, names, result.aware));
    if (result.agnostic.has_value()) {
      write_text((root / "report_agnostic.json").string(),
                 report_to_json(*result.agnostic));
      write_text((root / "report_agnostic.csv").string(),
                 report_to_csv(*result.agnostic));
      write_text((root / "plot_steps_agnostic.csv").string(),
                 plot_steps_csv(*result.agnostic));
      write_text((root / "plot_domains_agnostic.csv").string(),
                 plot_domains_csv(method + "_agnostic", names,
                                  *result.agnostic));
    }
    out << "artifacts in " << root.string() << "\n";
  }
  return 0;
}

int cmd_protocol(const ProtocolArgs& a, std::ostream& out) {
  ExperimentConfig cfg =
      a.config.empty() ? ExperimentConfig{} : load_config(a.config);
  if (a.seed) cfg.protocol.seed = *a.seed;
  if (!a.strategy.empty()) {
    cfg.protocol.strategy = strategy_from_name(a.strategy);
  }
  if (a.epochs) {
    if (*a.epochs < 1) throw ConfigError("epochs must be >= 1");
    cfg.protocol.epochs = *a.epochs;
  }
  if (a.agnostic) cfg.protocol.agnostic = true;
  if (!a.precision.empty()) cfg.precision = a.precision;

  if (cfg.precision == "f64") return run_protocol_cmd<double>(cfg, a, out);
  return run_protocol_cmd<float>(cfg, a, out);
}

// ---- eval --------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  std::optional<int> domain_id;
  bool agnostic = false;
  std::string precision = "f32";
};

// Splits a manifest by its domain column, keeping first-appearance order.
std::vector<std::pair<std::string, Manifest>> split_by_domain(
    const Manifest& manifest) {
  std::vector<std::pair<std::string, Manifest>> groups;
  for (const auto& record : manifest.records) {
    auto it = std::find_if(groups.begin(), groups.end(),
                           [&](const auto& g) { return g.first ==
                                                       record.domain; });
    if (it == groups.end()) {
      groups.push_back({record.domain, Manifest{}});
      it = groups.end() - 1;
    }
    it->second.records.push_back(record);
  }
  return groups;
}

template <typename T>
int run_eval(const EvalArgs& a, std::ostream& out) {
  auto model = load_checkpoint<T>(a.checkpoint);
  const TaskKind task = model.banks.front().spec.task;
  const auto manifest = load_manifest(a.data);
  const auto groups = split_by_domain(manifest);

  nlohmann::json doc;
  doc["checkpoint"] = a.checkpoint;
  doc["metric"] = task == TaskKind::kSingleLabel ? "accuracy" : "lwlrap";
  doc["banks"] = model.banks.size();

  auto evaluate = [&](const Manifest& part) {
    const Dataset data = load_manifest_dataset(part, model.vocabulary, task);
    nlohmann::json entry;
    entry["n"] = data.n;
    if (a.domain_id.has_value()) {
      const int bank = *a.domain_id;
      if (bank < 0 || bank >= static_cast<int>(model.banks.size())) {
        throw ConfigError("eval: bank " + std::to_string(bank) +
                          " out of range (checkpoint has " +
                          std::to_string(model.banks.size()) + " banks)");
      }
      const Dataset ready =
          relabel_for_bank(model, bank, data, model.vocabulary);
      entry["score"] = evaluate_bank(model, bank, ready);
    } else {
      // The manifest's domain column may name a bank; then routing hits
      // count toward selection accuracy.
      int true_bank = -1;
      const std::string& name = part.records.front().domain;
      for (size_t b = 0; b < model.banks.size(); ++b) {
        if (model.banks[b].spec.name == name) {
          true_bank = static_cast<int>(b);
          break;
        }
      }
      const auto eval = evaluate_agnostic(model, data, true_bank,
                                          model.vocabulary);
      entry["score"] = eval.score;
      nlohmann::json selected = nlohmann::json::object();
      for (size_t b = 0; b < eval.chosen.size(); ++b) {
        selected[model.banks[b].spec.name] = eval.chosen[b];
      }
      entry["selected_banks"] = selected;
      if (true_bank >= 0) {
        entry["true_bank"] = true_bank;
        entry["selection_accuracy"] =
            static_cast<double>(eval.chosen_true) /
            static_cast<double>(eval.total);
      }
    }
    return entry;
  };

  doc["mode"] = a.domain_id.has_value() ? "aware" : "agnostic";
  if (a.domain_id.has_value()) doc["bank"] = *a.domain_id;
  doc["domains"] = nlohmann::json::object();
  for (const auto& [name, part] : groups) {
    doc["domains"][name] = evaluate(part);
  }
  doc["overall"] = evaluate(manifest);
  out << doc.dump(2) << "\n";
  return 0;
}

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  if (a.precision == "f64") return run_eval<double>(a, out);
  return run_eval<float>(a, out);
}

// ---- audit -------------------------------------------------------------

int cmd_audit(const std::string& checkpoint, std::ostream& out) {
  auto model = load_checkpoint<float>(checkpoint);
  const auto audit = param_audit(model);
  out << "banks: " << model.banks.size() << "\n";
  out << "shared_parameters: " << audit.shared_count << "\n";
  out << "per_domain_parameters: " << audit.per_domain_count << "\n";
  out << "shared_fraction: " << fixed3(audit.shared_fraction) << "\n";
  return 0;
}

}  // namespace

int cli_main(const std::vector<std::string>& args, std::ostream& out,
             std::ostream& err) {
  CLI::App app{"domain-incremental learning workbench"};
  app.name("dil");
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* generate = app.add_subcommand(
      "generate", "Write synthetic domain datasets as feature files");
  generate->add_option("--config", gen.config, "experiment config file");
  generate->add_option("--out", gen.out, "output directory")->required();
  generate->add_option("--seed", gen.seed, "override the config seed");

  ProtocolArgs pro;
  auto* protocol = app.add_subcommand(
      "protocol", "Run the incremental protocol and write its artifacts");
  protocol->add_option("--config", pro.config, "experiment config file");
  protocol->add_option("--data", pro.data,
                       "generated data root (default: in-memory synthesis)");
  protocol->add_option("--out", pro.out,
                       "directory for checkpoints, reports, plot tables");
  protocol->add_option("--seed", pro.seed, "override the config seed");
  protocol->add_option("--strategy", pro.strategy,
                       "override the config strategy");
  protocol->add_option("--epochs", pro.epochs,
                       "override epochs per domain");
  protocol->add_flag("--agnostic", pro.agnostic,
                     "also evaluate with entropy-routed bank selection");
  protocol->add_option("--precision", pro.precision,
                       "compute precision: f32 or f64")
      ->check(CLI::IsMember({"f32", "f64"}));

  EvalArgs ev;
  auto* eval = app.add_subcommand(
      "eval", "Score a checkpoint against a dataset manifest");
  eval->add_option("checkpoint", ev.checkpoint, "checkpoint file")
      ->required();
  eval->add_option("--data", ev.data, "manifest file")->required();
  eval->add_option("--domain-id", ev.domain_id,
                   "evaluate with this bank (domain-aware)");
  eval->add_flag("--agnostic", ev.agnostic,
                 "evaluate with entropy-routed bank selection");
  eval->add_option("--precision", ev.precision,
                   "compute precision: f32 or f64")
      ->check(CLI::IsMember({"f32", "f64"}));

  std::string audit_path;
  auto* audit = app.add_subcommand(
      "audit", "Print a checkpoint's parameter-sharing summary");
  audit->add_option("checkpoint", audit_path, "checkpoint file")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: usage: " << e.what() << "\n";
    return 2;
  }

  try {
    if (generate->parsed()) return cmd_generate(gen, out);
    if (protocol->parsed()) return cmd_protocol(pro, out);
    if (eval->parsed()) {
      if (ev.domain_id.has_value() == ev.agnostic) {
        err << "error: usage: eval needs exactly one of --domain-id or "
               "--agnostic\n";
        return 2;
      }
      return cmd_eval(ev, out);
    }
    if (audit->parsed()) return cmd_audit(audit_path, out);
    err << "error: usage: no command given\n";
    return 2;
  } catch (const ConfigError& e) {
    err << "error: config: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    err << "error: data: " << e.what() << "\n";
    return 3;
  } catch (const NumericError& e) {
    err << "error: numeric: " << e.what() << "\n";
    return 4;
  } catch (const CheckpointError& e) {
    err << "error: checkpoint: " << e.what() << "\n";
    return 5;
  } catch (const std::exception& e) {
    err << "error: internal: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace dil
