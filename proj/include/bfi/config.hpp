#pragma once

// Experiment configuration files: flat `key = value` text grouped under
// `[data]`, `[model]`, `[train]`, `[output]` and `[sweep]` headers. `#` and
// `;` start comments. Every key is validated before any work starts and
// unknown keys are rejected.

#include <cstddef>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "bfi/data.hpp"
#include "bfi/model.hpp"
#include "bfi/train.hpp"

namespace bfi {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SweepGrid {
  std::vector<VariantKind> variants;
  std::vector<std::size_t> k;
  std::vector<std::size_t> c;
  std::vector<std::size_t> l;
};

struct ExperimentConfig {
  DataConfig data;
  ModelConfig model;
  TrainConfig train;
  std::string output_dir = "runs";
  bool timing = true;
  SweepGrid sweep;
  bool has_data_path = false;
};

namespace detail {

inline const std::map<std::string, std::vector<std::string>>& known_keys() {
  static const std::map<std::string, std::vector<std::string>> keys = {
      {"data",
       {"path", "delimiter", "label_column", "label_base", "train_fraction",
        "split_seed", "limit", "header"}},
      {"model", {"D", "C", "K", "L", "hidden", "M", "variant", "seed"}},
      {"train",
       {"optimizer", "lr", "momentum", "beta1", "beta2", "eps", "batch", "epochs",
        "seed"}},
      {"output", {"dir", "timing"}},
      {"sweep", {"variants", "K", "C", "L"}},
  };
  return keys;
}

[[noreturn]] inline void config_fail(const std::string& key, const std::string& what) {
  throw ConfigError(key + ": " + what);
}

inline std::uint64_t to_uint(const std::string& key, std::string_view v) {
  std::uint64_t out;
  if (!parse_number(trim(v), out)) config_fail(key, "expected a non-negative integer, got '" + std::string(v) + "'");
  return out;
}

inline std::int64_t to_int(const std::string& key, std::string_view v) {
  std::int64_t out;
  if (!parse_number(trim(v), out)) config_fail(key, "expected an integer, got '" + std::string(v) + "'");
  return out;
}

inline double to_double(const std::string& key, std::string_view v) {
  double out;
  if (!parse_number(trim(v), out)) config_fail(key, "expected a number, got '" + std::string(v) + "'");
  return out;
}

inline bool to_bool(const std::string& key, std::string_view v) {
  v = trim(v);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  config_fail(key, "expected true/false, got '" + std::string(v) + "'");
}

inline VariantKind to_variant(const std::string& key, std::string_view v) {
  auto spec = VariantSpec::parse(trim(v));
  if (!spec) config_fail(key, "unknown variant '" + std::string(v) + "' (Baseline, P, Q, T, S)");
  return spec->kind;
}

inline std::vector<std::string_view> split_list(std::string_view v) {
  std::vector<std::string_view> out;
  for (auto cell : split_line(v, ','))
    if (!cell.empty()) out.push_back(cell);
  return out;
}

/// Accepts "1,2,3" and ranges such as "1..3".
inline std::vector<std::size_t> to_uint_list(const std::string& key, std::string_view v) {
  std::vector<std::size_t> out;
  for (auto cell : split_list(v)) {
    const auto dots = cell.find("..");
    if (dots == std::string_view::npos) {
      out.push_back(to_uint(key, cell));
      continue;
    }
    const auto lo = to_uint(key, cell.substr(0, dots));
    const auto hi = to_uint(key, cell.substr(dots + 2));
    if (lo > hi) config_fail(key, "empty range '" + std::string(cell) + "'");
    for (auto i = lo; i <= hi; ++i) out.push_back(i);
  }
  if (out.empty()) config_fail(key, "empty list");
  return out;
}

inline void apply_key(ExperimentConfig& cfg, const std::string& section,
                      const std::string& name, const std::string& value) {
  const std::string key = section + "." + name;
  const auto sec = known_keys().find(section);
  if (sec == known_keys().end()) config_fail(key, "unknown section [" + section + "]");
  if (std::find(sec->second.begin(), sec->second.end(), name) == sec->second.end())
    config_fail(key, "unknown key");

  if (section == "data") {
    auto& d = cfg.data;
    if (name == "path") {
      d.path = std::string(trim(value));
      cfg.has_data_path = !d.path.empty();
    } else if (name == "delimiter") {
      const auto v = trim(value);
      if (v == "tab" || v == "\\t") d.load.delimiter = '\t';
      else if (v == "space") d.load.delimiter = ' ';
      else if (v.size() == 1) d.load.delimiter = v.front();
      else config_fail(key, "expected a single character, 'tab' or 'space'");
    } else if (name == "label_column") {
      const auto v = trim(value);
      if (v == "first") d.load.label_column = LabelColumn::first();
      else if (v == "last") d.load.label_column = LabelColumn::last();
      else d.load.label_column = LabelColumn::at(to_uint(key, v));
    } else if (name == "label_base") {
      d.load.label_base = to_int(key, value);
    } else if (name == "train_fraction") {
      d.train_fraction = to_double(key, value);
      if (!(d.train_fraction > 0.0 && d.train_fraction < 1.0))
        config_fail(key, "must be in (0, 1)");
    } else if (name == "split_seed") {
      d.split_seed = to_uint(key, value);
    } else if (name == "limit") {
      d.limit = to_uint(key, value);
    } else if (name == "header") {
      d.load.header = to_bool(key, value);
    }
  } else if (section == "model") {
    auto& m = cfg.model;
    if (name == "D") m.d = to_uint(key, value);
    else if (name == "C") m.c = to_uint(key, value);
    else if (name == "K") m.k = to_uint(key, value);
    else if (name == "L") m.l = to_uint(key, value);
    else if (name == "hidden") m.hidden = to_uint(key, value);
    else if (name == "M") m.m = to_uint(key, value);
    else if (name == "variant") m.variant.kind = to_variant(key, value);
    else if (name == "seed") m.seed = to_uint(key, value);
  } else if (section == "train") {
    auto& t = cfg.train;
    if (name == "optimizer") {
      const auto v = trim(value);
      if (v == "sgd" || v == "SGD") t.optimizer = OptimizerKind::SGD;
      else if (v == "adam" || v == "Adam") t.optimizer = OptimizerKind::Adam;
      else config_fail(key, "expected sgd or adam");
    } else if (name == "lr") t.learning_rate = to_double(key, value);
    else if (name == "momentum") t.momentum = to_double(key, value);
    else if (name == "beta1") t.beta1 = to_double(key, value);
    else if (name == "beta2") t.beta2 = to_double(key, value);
    else if (name == "eps") t.epsilon = to_double(key, value);
    else if (name == "batch") t.batch_size = to_uint(key, value);
    else if (name == "epochs") t.epochs = to_uint(key, value);
    else if (name == "seed") t.seed = to_uint(key, value);
  } else if (section == "output") {
    if (name == "dir") cfg.output_dir = std::string(trim(value));
    else if (name == "timing") cfg.timing = to_bool(key, value);
  } else if (section == "sweep") {
    auto& g = cfg.sweep;
    if (name == "variants") {
      g.variants.clear();
      for (auto v : split_list(value)) g.variants.push_back(to_variant(key, v));
      if (g.variants.empty()) config_fail(key, "empty list");
    } else if (name == "K") g.k = to_uint_list(key, value);
    else if (name == "C") g.c = to_uint_list(key, value);
    else if (name == "L") g.l = to_uint_list(key, value);
  }
}

}  // namespace detail

/// Applies a `section.key=value` override on top of a parsed config.
inline void apply_override(ExperimentConfig& cfg, std::string_view assignment) {
  const auto eq = assignment.find('=');
  const auto lhs = detail::trim(assignment.substr(0, eq));
  const auto dot = lhs.find('.');
  if (eq == std::string_view::npos || dot == std::string_view::npos)
    throw ConfigError("override '" + std::string(assignment) +
                      "': expected section.key=value");
  detail::apply_key(cfg, std::string(lhs.substr(0, dot)), std::string(lhs.substr(dot + 1)),
                    std::string(assignment.substr(eq + 1)));
}

inline ExperimentConfig parse_config(std::istream& in, const std::string& origin = "<config>") {
  ExperimentConfig cfg;
  std::string section;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string_view text = line;
    if (const auto c = text.find_first_of("#;"); c != std::string_view::npos)
      text = text.substr(0, c);
    text = detail::trim(text);
    if (text.empty()) continue;
    const std::string where = origin + ":" + std::to_string(lineno);
    if (text.front() == '[') {
      if (text.back() != ']') throw ConfigError(where + ": malformed section header");
      section = std::string(detail::trim(text.substr(1, text.size() - 2)));
      if (!detail::known_keys().contains(section))
        throw ConfigError(where + ": unknown section [" + section + "]");
      continue;
    }
    const auto eq = text.find('=');
    if (eq == std::string_view::npos) throw ConfigError(where + ": expected key = value");
    if (section.empty()) throw ConfigError(where + ": key outside of a section");
    try {
      detail::apply_key(cfg, section, std::string(detail::trim(text.substr(0, eq))),
                        std::string(text.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(where + ": " + e.what());
    }
  }
  return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path + ": cannot open config file");
  return parse_config(in, path);
}

/// Model-section checks that the library would otherwise raise mid-run.
inline void validate_model(const ExperimentConfig& cfg) {
  try {
    cfg.model.validate();
  } catch (const ContractViolation& e) {
    throw ConfigError(std::string("model: ") + e.what());
  }
}

inline void validate_for_training(const ExperimentConfig& cfg) {
  if (!cfg.has_data_path) throw ConfigError("data.path: required");
  if (cfg.output_dir.empty()) throw ConfigError("output.dir: required");
  validate_model(cfg);
  try {
    cfg.train.validate();
  } catch (const ContractViolation& e) {
    throw ConfigError(std::string("train: ") + e.what());
  }
}

/// Expands the sweep grid. Baseline ignores K, so it contributes one point
/// per (C, L) and is recorded with the first K of the grid. Missing grid
/// axes fall back to the base model section. Every point is validated.
inline std::vector<ModelConfig> expand_grid(const ExperimentConfig& cfg) {
  const auto& g = cfg.sweep;
  const std::vector<VariantKind> variants =
      g.variants.empty() ? std::vector<VariantKind>{cfg.model.variant.kind} : g.variants;
  const std::vector<std::size_t> ks = g.k.empty() ? std::vector<std::size_t>{cfg.model.k} : g.k;
  const std::vector<std::size_t> cs = g.c.empty() ? std::vector<std::size_t>{cfg.model.c} : g.c;
  const std::vector<std::size_t> ls = g.l.empty() ? std::vector<std::size_t>{cfg.model.l} : g.l;
  std::vector<ModelConfig> out;
  for (auto v : variants) {
    const bool baseline = v == VariantKind::Baseline;
    for (std::size_t ki = 0; ki < (baseline ? 1 : ks.size()); ++ki)
      for (auto c : cs)
        for (auto l : ls) {
          ModelConfig m = cfg.model;
          m.variant.kind = v;
          m.k = ks[ki];
          m.c = c;
          m.l = l;
          try {
            m.validate();
          } catch (const ContractViolation& e) {
            throw ConfigError("sweep point " + run_name(m) + ": " + e.what());
          }
          out.push_back(m);
        }
  }
  return out;
}

}  // namespace bfi
