#pragma once

#include <cmath>
#include <cstdio>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "cil/errors.hpp"
#include "cil/features.hpp"

namespace cil {

enum class DataKind { synthetic, idx, features };
enum class Connection { z, g, g_star, a };

struct ForgetEntry {
  int before_task = 0;            // apply just before this session starts (1-based)
  std::size_t oldest_count = 0;   // drop this many from the front, or
  std::vector<int> task_ids;      // drop these explicit task ids
};

struct ExperimentConfig {
  // [data]
  DataKind kind = DataKind::synthetic;
  std::size_t classes = 10;
  std::size_t tasks = 5;
  std::string train_images, train_labels, test_images, test_labels;  // idx
  std::string train_path, test_path, path;                           // features
  double train_fraction = 0.8;
  std::size_t dim = 20;
  std::size_t n_per_class = 300;
  double separation = 2.5;
  std::uint64_t data_seed = 7;

  // [features]
  BaseKind base = BaseKind::identity_passthrough;
  std::size_t hidden = 0;       // h for the frozen-affine base
  std::size_t groups = 0;       // n
  std::size_t group_width = 0;  // k
  Activation base_activation = Activation::none;
  Activation group_activation = Activation::none;
  Connection connection = Connection::a;
  std::uint64_t feature_seed = 42;
  bool refine_per_task = false;

  // [solver]
  double alpha = 0.01;
  double rho_ridge = std::ldexp(1.0, -30);
  double rho_admm = 1.0;
  std::size_t admm_max_iter = 100;
  double admm_tol = 1e-6;

  // [consolidation]
  double gamma = 1e4;
  std::map<int, double> gamma_overrides;
  std::vector<ForgetEntry> forget_schedule;
  bool update_new_columns_only = false;
  bool use_plasticity_term = true;
  bool use_anchor_term = true;

  // [run]
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  std::string output = "runs";
  bool compute_fwt = true;
  std::string checkpoint_path;

  double gamma_for_task(int task_id) const {
    auto it = gamma_overrides.find(task_id);
    return it == gamma_overrides.end() ? gamma : it->second;
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::istringstream in(s);
  std::string item;
  while (std::getline(in, item, sep)) {
    item = trim(item);
    if (!item.empty()) parts.push_back(item);
  }
  return parts;
}

}  // namespace detail

// Flat section.key=value map; sections come from [section] lines, '#' and ';'
// start comments.
using ConfigMap = std::map<std::string, std::string>;

inline ConfigMap parse_config_text(const std::string& text) {
  ConfigMap map;
  std::istringstream in(text);
  std::string line, section;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::size_t comment = line.find_first_of("#;");
    if (comment != std::string::npos) line = line.substr(0, comment);
    line = detail::trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError("config line " + std::to_string(line_no) + ": unterminated section");
      section = detail::trim(line.substr(1, line.size() - 2));
      continue;
    }
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key=value");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
    map[section.empty() ? key : section + "." + key] = value;
  }
  return map;
}

inline ConfigMap load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str());
}

namespace detail {

inline double parse_double(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const double v = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + ": cannot parse '" + value + "' as a number");
  }
}

inline std::uint64_t parse_uint(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const unsigned long long v = std::stoull(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + ": cannot parse '" + value + "' as an integer");
  }
}

inline bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes" || value == "on") return true;
  if (value == "false" || value == "0" || value == "no" || value == "off") return false;
  throw ConfigError("config key " + key + ": cannot parse '" + value + "' as a boolean");
}

inline Activation parse_activation(const std::string& key, const std::string& value) {
  if (value == "none") return Activation::none;
  if (value == "clip" || value == "clipped-linear") return Activation::clipped_linear;
  throw ConfigError("config key " + key + ": unknown activation '" + value + "'");
}

// "4:1" drops the oldest record before session 4; "4:1+2" drops tasks 1 and 2.
inline ForgetEntry parse_forget_entry(const std::string& text) {
  const std::size_t colon = text.find(':');
  if (colon == std::string::npos)
    throw ConfigError("forget entry '" + text + "': expected before_task:victims");
  ForgetEntry entry;
  entry.before_task = static_cast<int>(parse_uint("consolidation.forget", trim(text.substr(0, colon))));
  const std::string victims = trim(text.substr(colon + 1));
  if (victims.find('+') != std::string::npos) {
    for (const auto& part : split(victims, '+'))
      entry.task_ids.push_back(static_cast<int>(parse_uint("consolidation.forget", part)));
  } else {
    entry.oldest_count = parse_uint("consolidation.forget", victims);
  }
  return entry;
}

}  // namespace detail

inline ExperimentConfig config_from_map(const ConfigMap& map) {
  ExperimentConfig cfg;
  for (const auto& [key, value] : map) {
    if (key == "data.kind") {
      if (value == "synthetic") cfg.kind = DataKind::synthetic;
      else if (value == "idx") cfg.kind = DataKind::idx;
      else if (value == "features") cfg.kind = DataKind::features;
      else throw ConfigError("data.kind: unknown kind '" + value + "'");
    } else if (key == "data.classes") cfg.classes = detail::parse_uint(key, value);
    else if (key == "data.tasks") cfg.tasks = detail::parse_uint(key, value);
    else if (key == "data.train_images") cfg.train_images = value;
    else if (key == "data.train_labels") cfg.train_labels = value;
    else if (key == "data.test_images") cfg.test_images = value;
    else if (key == "data.test_labels") cfg.test_labels = value;
    else if (key == "data.train") cfg.train_path = value;
    else if (key == "data.test") cfg.test_path = value;
    else if (key == "data.path") cfg.path = value;
    else if (key == "data.train_fraction") cfg.train_fraction = detail::parse_double(key, value);
    else if (key == "data.dim") cfg.dim = detail::parse_uint(key, value);
    else if (key == "data.n_per_class") cfg.n_per_class = detail::parse_uint(key, value);
    else if (key == "data.separation") cfg.separation = detail::parse_double(key, value);
    else if (key == "data.seed") cfg.data_seed = detail::parse_uint(key, value);
    else if (key == "features.base") {
      if (value == "identity") cfg.base = BaseKind::identity_passthrough;
      else if (value == "affine") cfg.base = BaseKind::frozen_affine;
      else throw ConfigError("features.base: unknown base '" + value + "'");
    } else if (key == "features.hidden") cfg.hidden = detail::parse_uint(key, value);
    else if (key == "features.groups") cfg.groups = detail::parse_uint(key, value);
    else if (key == "features.group_width") cfg.group_width = detail::parse_uint(key, value);
    else if (key == "features.base_activation") cfg.base_activation = detail::parse_activation(key, value);
    else if (key == "features.group_activation") cfg.group_activation = detail::parse_activation(key, value);
    else if (key == "features.connection") {
      if (value == "z") cfg.connection = Connection::z;
      else if (value == "g") cfg.connection = Connection::g;
      else if (value == "g_star") cfg.connection = Connection::g_star;
      else if (value == "a") cfg.connection = Connection::a;
      else throw ConfigError("features.connection: unknown connection '" + value + "'");
    } else if (key == "features.seed") cfg.feature_seed = detail::parse_uint(key, value);
    else if (key == "features.refine_per_task") cfg.refine_per_task = detail::parse_bool(key, value);
    else if (key == "solver.alpha") cfg.alpha = detail::parse_double(key, value);
    else if (key == "solver.rho_ridge") cfg.rho_ridge = detail::parse_double(key, value);
    else if (key == "solver.rho_admm") cfg.rho_admm = detail::parse_double(key, value);
    else if (key == "solver.admm_max_iter") cfg.admm_max_iter = detail::parse_uint(key, value);
    else if (key == "solver.admm_tol") cfg.admm_tol = detail::parse_double(key, value);
    else if (key == "consolidation.gamma") cfg.gamma = detail::parse_double(key, value);
    else if (key == "consolidation.gamma_overrides") {
      for (const auto& part : detail::split(value, ',')) {
        const std::size_t colon = part.find(':');
        if (colon == std::string::npos)
          throw ConfigError("consolidation.gamma_overrides: expected task:gamma entries");
        cfg.gamma_overrides[static_cast<int>(detail::parse_uint(key, detail::trim(part.substr(0, colon))))] =
            detail::parse_double(key, detail::trim(part.substr(colon + 1)));
      }
    } else if (key == "consolidation.forget") {
      for (const auto& part : detail::split(value, ';'))
        cfg.forget_schedule.push_back(detail::parse_forget_entry(part));
    } else if (key == "consolidation.update_new_columns_only")
      cfg.update_new_columns_only = detail::parse_bool(key, value);
    else if (key == "consolidation.use_plasticity_term")
      cfg.use_plasticity_term = detail::parse_bool(key, value);
    else if (key == "consolidation.use_anchor_term")
      cfg.use_anchor_term = detail::parse_bool(key, value);
    else if (key == "run.seeds") {
      cfg.seeds.clear();
      for (const auto& part : detail::split(value, ','))
        cfg.seeds.push_back(detail::parse_uint(key, part));
      if (cfg.seeds.empty()) throw ConfigError("run.seeds: needs at least one seed");
    } else if (key == "run.output") cfg.output = value;
    else if (key == "run.compute_fwt") cfg.compute_fwt = detail::parse_bool(key, value);
    else if (key == "run.checkpoint") cfg.checkpoint_path = value;
    else throw ConfigError("unknown config key '" + key + "'");
  }
  if (cfg.seeds.empty()) throw ConfigError("run.seeds: needs at least one seed");
  if (!(cfg.alpha >= 0.0)) throw ConfigError("solver.alpha must be nonnegative");
  if (!(cfg.rho_ridge > 0.0)) throw ConfigError("solver.rho_ridge must be positive");
  if (!(cfg.rho_admm > 0.0)) throw ConfigError("solver.rho_admm must be positive");
  if (!(cfg.gamma > 0.0)) throw ConfigError("consolidation.gamma must be positive");
  for (const auto& [task, g] : cfg.gamma_overrides) {
    if (!(g > 0.0))
      throw ConfigError("consolidation.gamma_overrides: gamma for task " + std::to_string(task) +
                        " must be positive");
  }
  return cfg;
}

namespace detail {

inline std::string format_double(double v) {
  std::ostringstream out;
  out.precision(17);
  out << v;
  return out.str();
}

}  // namespace detail

// Canonical serialization used for the content digest; every field appears,
// sorted by key.
inline std::string canonical_config_text(const ExperimentConfig& cfg) {
  std::map<std::string, std::string> kv;
  kv["data.kind"] = cfg.kind == DataKind::synthetic ? "synthetic"
                    : cfg.kind == DataKind::idx     ? "idx"
                                                    : "features";
  kv["data.classes"] = std::to_string(cfg.classes);
  kv["data.tasks"] = std::to_string(cfg.tasks);
  kv["data.train_images"] = cfg.train_images;
  kv["data.train_labels"] = cfg.train_labels;
  kv["data.test_images"] = cfg.test_images;
  kv["data.test_labels"] = cfg.test_labels;
  kv["data.train"] = cfg.train_path;
  kv["data.test"] = cfg.test_path;
  kv["data.path"] = cfg.path;
  kv["data.train_fraction"] = detail::format_double(cfg.train_fraction);
  kv["data.dim"] = std::to_string(cfg.dim);
  kv["data.n_per_class"] = std::to_string(cfg.n_per_class);
  kv["data.separation"] = detail::format_double(cfg.separation);
  kv["data.seed"] = std::to_string(cfg.data_seed);
  kv["features.base"] = cfg.base == BaseKind::identity_passthrough ? "identity" : "affine";
  kv["features.hidden"] = std::to_string(cfg.hidden);
  kv["features.groups"] = std::to_string(cfg.groups);
  kv["features.group_width"] = std::to_string(cfg.group_width);
  kv["features.base_activation"] = cfg.base_activation == Activation::none ? "none" : "clip";
  kv["features.group_activation"] = cfg.group_activation == Activation::none ? "none" : "clip";
  kv["features.connection"] = cfg.connection == Connection::z        ? "z"
                              : cfg.connection == Connection::g      ? "g"
                              : cfg.connection == Connection::g_star ? "g_star"
                                                                     : "a";
  kv["features.seed"] = std::to_string(cfg.feature_seed);
  kv["features.refine_per_task"] = cfg.refine_per_task ? "true" : "false";
  kv["solver.alpha"] = detail::format_double(cfg.alpha);
  kv["solver.rho_ridge"] = detail::format_double(cfg.rho_ridge);
  kv["solver.rho_admm"] = detail::format_double(cfg.rho_admm);
  kv["solver.admm_max_iter"] = std::to_string(cfg.admm_max_iter);
  kv["solver.admm_tol"] = detail::format_double(cfg.admm_tol);
  kv["consolidation.gamma"] = detail::format_double(cfg.gamma);
  {
    std::string overrides;
    for (const auto& [task, g] : cfg.gamma_overrides) {
      if (!overrides.empty()) overrides += ",";
      overrides += std::to_string(task) + ":" + detail::format_double(g);
    }
    kv["consolidation.gamma_overrides"] = overrides;
    std::string forget;
    for (const auto& entry : cfg.forget_schedule) {
      if (!forget.empty()) forget += ";";
      forget += std::to_string(entry.before_task) + ":";
      if (!entry.task_ids.empty()) {
        for (std::size_t i = 0; i < entry.task_ids.size(); ++i)
          forget += (i ? "+" : "") + std::to_string(entry.task_ids[i]);
      } else {
        forget += std::to_string(entry.oldest_count);
      }
    }
    kv["consolidation.forget"] = forget;
  }
  kv["consolidation.update_new_columns_only"] = cfg.update_new_columns_only ? "true" : "false";
  kv["consolidation.use_plasticity_term"] = cfg.use_plasticity_term ? "true" : "false";
  kv["consolidation.use_anchor_term"] = cfg.use_anchor_term ? "true" : "false";
  {
    std::string seeds;
    for (std::size_t i = 0; i < cfg.seeds.size(); ++i)
      seeds += (i ? "," : "") + std::to_string(cfg.seeds[i]);
    kv["run.seeds"] = seeds;
  }
  kv["run.compute_fwt"] = cfg.compute_fwt ? "true" : "false";

  std::string text;
  for (const auto& [key, value] : kv) text += key + "=" + value + "\n";
  return text;
}

// FNV-1a over the canonical serialization.
inline std::string config_digest(const ExperimentConfig& cfg) {
  const std::string text = canonical_config_text(cfg);
  std::uint64_t hash = 1469598103934665603ull;
  for (unsigned char ch : text) {
    hash ^= ch;
    hash *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(hash));
  return std::string(buf);
}

}  // namespace cil
