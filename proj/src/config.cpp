#include "dil/config.hpp"

#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dil/common.hpp"
#include "dil/data.hpp"
#include "dil/rng.hpp"

namespace dil {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

[[noreturn]] void fail(int line, const std::string& what) {
  throw ConfigError("config: line " + std::to_string(line) + ": " + what);
}

long long parse_int(const std::string& v, int line, const std::string& key) {
  try {
    size_t used = 0;
    const long long x = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    fail(line, "key '" + key + "' expects an integer, got '" + v + "'");
  }
}

double parse_real(const std::string& v, int line, const std::string& key) {
  try {
    size_t used = 0;
    const double x = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    fail(line, "key '" + key + "' expects a number, got '" + v + "'");
  }
}

bool parse_bool(const std::string& v, int line, const std::string& key) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  fail(line, "key '" + key + "' expects true or false, got '" + v + "'");
}

std::vector<int> parse_int_list(const std::string& v, int line,
                                const std::string& key) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) fail(line, "key '" + key + "' has an empty list entry");
    out.push_back(static_cast<int>(parse_int(item, line, key)));
  }
  if (out.empty()) fail(line, "key '" + key + "' expects a comma list");
  return out;
}

// One [domain] section as read; emphasis turns into per-row factors only
// after the global grid size is final.
struct DomainEntry {
  SyntheticDomainSpec spec;
  double emphasis_strength = 0.0;
  bool named = false;
  int line = 0;  // line of the section header
};

}  // namespace

ExperimentConfig parse_config(const std::string& text) {
  ExperimentConfig cfg;
  auto& proto = cfg.protocol;
  std::vector<DomainEntry> domains;
  bool in_domain = false;

  std::stringstream stream(text);
  std::string raw;
  int line = 0;
  while (std::getline(stream, raw)) {
    ++line;
    const auto hash = raw.find('#');
    if (hash != std::string::npos) raw.erase(hash);
    const std::string entry = trim(raw);
    if (entry.empty()) continue;

    if (entry.front() == '[') {
      if (entry == "[domain]") {
        DomainEntry d;
        d.line = line;
        domains.push_back(d);
        in_domain = true;
        continue;
      }
      fail(line, "unknown section '" + entry + "' (only [domain] exists)");
    }

    const auto eq = entry.find('=');
    if (eq == std::string::npos) fail(line, "expected key = value");
    const std::string key = trim(entry.substr(0, eq));
    const std::string value = trim(entry.substr(eq + 1));
    if (key.empty()) fail(line, "expected key = value");
    if (value.empty()) fail(line, "key '" + key + "' has no value");

    if (in_domain) {
      auto& d = domains.back();
      if (key == "name") {
        d.spec.name = value;
        d.named = true;
      } else if (key == "task") {
        if (value == "single") {
          d.spec.task = TaskKind::kSingleLabel;
        } else if (value == "multi") {
          d.spec.task = TaskKind::kMultiLabel;
        } else {
          fail(line, "task must be single or multi, got '" + value + "'");
        }
      } else if (key == "classes") {
        d.spec.class_ids = parse_int_list(value, line, key);
      } else if (key == "train_per_class") {
        d.spec.train_per_class =
            static_cast<int>(parse_int(value, line, key));
      } else if (key == "test_per_class") {
        d.spec.test_per_class = static_cast<int>(parse_int(value, line, key));
      } else if (key == "prototype_seed") {
        d.spec.prototype_seed =
            static_cast<uint64_t>(parse_int(value, line, key));
      } else if (key == "scale") {
        d.spec.scale = parse_real(value, line, key);
      } else if (key == "offset") {
        d.spec.offset = parse_real(value, line, key);
      } else if (key == "noise") {
        d.spec.noise = parse_real(value, line, key);
      } else if (key == "drift") {
        d.spec.drift = parse_real(value, line, key);
      } else if (key == "time_shift") {
        d.spec.time_shift = static_cast<int>(parse_int(value, line, key));
      } else if (key == "emphasis_strength") {
        d.emphasis_strength = parse_real(value, line, key);
      } else {
        fail(line, "unknown domain key '" + key + "'");
      }
      continue;
    }

    if (key == "seed") {
      proto.seed = static_cast<uint64_t>(parse_int(value, line, key));
    } else if (key == "strategy") {
      try {
        proto.strategy = strategy_from_name(value);
      } catch (const ConfigError& e) {
        fail(line, e.what());
      }
    } else if (key == "epochs") {
      proto.epochs = static_cast<int>(parse_int(value, line, key));
      if (proto.epochs < 1) fail(line, "epochs must be >= 1");
    } else if (key == "batch_size") {
      proto.batch_size = static_cast<int>(parse_int(value, line, key));
      if (proto.batch_size < 1) fail(line, "batch_size must be >= 1");
    } else if (key == "lr_base") {
      proto.lr_base = parse_real(value, line, key);
    } else if (key == "lr_incremental") {
      proto.lr_incremental = parse_real(value, line, key);
    } else if (key == "eta_min") {
      proto.eta_min = parse_real(value, line, key);
    } else if (key == "agnostic") {
      proto.agnostic = parse_bool(value, line, key);
    } else if (key == "normalize_entropy") {
      proto.normalize_entropy = parse_bool(value, line, key);
    } else if (key == "eval_batch") {
      proto.eval_batch = static_cast<int>(parse_int(value, line, key));
      if (proto.eval_batch < 1) fail(line, "eval_batch must be >= 1");
    } else if (key == "channels") {
      proto.arch.channels = parse_int_list(value, line, key);
      proto.arch.n_blocks = static_cast<int>(proto.arch.channels.size());
    } else if (key == "convs_per_block") {
      proto.arch.convs_per_block =
          static_cast<int>(parse_int(value, line, key));
    } else if (key == "f") {
      proto.arch.f = static_cast<int>(parse_int(value, line, key));
    } else if (key == "t") {
      proto.arch.t = static_cast<int>(parse_int(value, line, key));
    } else if (key == "precision") {
      if (value != "f32" && value != "f64") {
        fail(line, "precision must be f32 or f64, got '" + value + "'");
      }
      cfg.precision = value;
    } else {
      fail(line, "unknown key '" + key + "'");
    }
  }

  if (!domains.empty()) {
    proto.domains.clear();
    std::set<std::string> names;
    for (size_t d = 0; d < domains.size(); ++d) {
      auto& entry = domains[d];
      if (!entry.named) {
        fail(entry.line, "[domain] section " + std::to_string(d + 1) +
                             " has no name");
      }
      if (!names.insert(entry.spec.name).second) {
        fail(entry.line, "duplicate domain name '" + entry.spec.name + "'");
      }
      entry.spec.f = proto.arch.f;
      entry.spec.t = proto.arch.t;
      if (entry.emphasis_strength != 0.0) {
        entry.spec.emphasis =
            band_emphasis(entry.spec.f, entry.emphasis_strength,
                          derive_seed(500, static_cast<uint64_t>(d)));
      }
      proto.domains.push_back(entry.spec);
    }
  }

  proto.arch.validate();
  for (const auto& spec : proto.domains) spec.validate();
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

}  // namespace dil
