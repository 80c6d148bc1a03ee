#pragma once

// Sectioned key = value configuration.
//
//   # comment
//   [model]
//   gate = channel
//   squeeze_ratio = 2
//
// Every key must be known; typos are errors with the line number.

#include <algorithm>
#include <array>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "gmlf/bench/synth.hpp"
#include "gmlf/detector/detector.hpp"
#include "gmlf/detector/train.hpp"

namespace gmlf {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ConfigEntry {
  std::string value;
  int line = 0;
};

/// section -> key -> entry; keys before any section header land in "".
using ConfigTable = std::map<std::string, std::map<std::string, ConfigEntry>>;

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, sep)) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

}  // namespace detail

inline ConfigTable parse_config(std::istream& in, const std::string& origin = "config") {
  ConfigTable table;
  std::string section;
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto hash = raw.find('#');
    const std::string line = detail::trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    const std::string where = origin + ":" + std::to_string(line_no);
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + ": unterminated section header");
      section = detail::trim(line.substr(1, line.size() - 2));
      if (section.empty()) throw ConfigError(where + ": empty section name");
      table[section];
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
    const std::string key = detail::trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError(where + ": missing key");
    auto& sec = table[section];
    if (sec.count(key)) throw ConfigError(where + ": duplicate key '" + key + "'");
    sec[key] = {detail::trim(line.substr(eq + 1)), line_no};
  }
  return table;
}

inline ConfigTable parse_config_string(const std::string& text) {
  std::istringstream in(text);
  return parse_config(in, "config");
}

inline ConfigTable load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  return parse_config(in, path);
}

struct ExperimentConfig {
  // [data]
  SynthSpec synth;
  int train_images = 500;
  int eval_images = 100;
  std::uint64_t data_seed = 2024;
  std::string train_annotations;  // empty: synthesize
  std::string eval_annotations;
  // [model]
  ModelConfig model;
  // [train]
  TrainConfig train;
  bool double_precision = false;
  // [eval]
  EvalConfig eval;
  // [compare]
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  std::vector<GateKind> models{GateKind::none, GateKind::spatial, GateKind::channel};
  int threads = 0;  // 0: one per hardware thread

  void validate() const {
    synth.validate();
    model.validate();
    train.sgd.validate();
    if (train_images < 1 || eval_images < 1) throw ConfigError("data: image counts must be >= 1");
    if (eval.proposals_per_image < 1) throw ConfigError("eval: proposals must be >= 1");
    if (seeds.empty() || models.empty()) throw ConfigError("compare: seeds and models must be non-empty");
    if (threads < 0) throw ConfigError("compare: threads must be >= 0");
  }
};

namespace detail {

class SectionReader {
 public:
  SectionReader(const ConfigTable& t, const std::string& section) : section_(section) {
    auto it = t.find(section);
    if (it != t.end()) entries_ = it->second;
  }

  bool has(const std::string& key) const { return entries_.count(key) > 0; }

  template <typename F>
  void read(const std::string& key, F&& apply) {
    auto it = entries_.find(key);
    if (it == entries_.end()) return;
    try {
      apply(it->second.value);
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      throw ConfigError("line " + std::to_string(it->second.line) + ": [" + section_ + "] " + key + " = '" +
                        it->second.value + "': " + e.what());
    }
    entries_.erase(it);
  }

  void finish() const {
    if (!entries_.empty()) {
      const auto& [key, entry] = *entries_.begin();
      throw ConfigError("line " + std::to_string(entry.line) + ": unknown key '" + key + "' in [" + section_ + "]");
    }
  }

 private:
  std::string section_;
  std::map<std::string, ConfigEntry> entries_;
};

inline int to_int(const std::string& s) {
  std::size_t used = 0;
  const int v = std::stoi(s, &used);
  if (used != s.size()) throw std::invalid_argument("not an integer");
  return v;
}

inline double to_double(const std::string& s) {
  std::size_t used = 0;
  const double v = std::stod(s, &used);
  if (used != s.size()) throw std::invalid_argument("not a number");
  return v;
}

inline std::uint64_t to_u64(const std::string& s) {
  std::size_t used = 0;
  if (!s.empty() && s[0] == '-') throw std::invalid_argument("must be non-negative");
  const auto v = std::stoull(s, &used);
  if (used != s.size()) throw std::invalid_argument("not an integer");
  return v;
}

inline bool to_bool(const std::string& s) {
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw std::invalid_argument("expected true or false");
}

template <std::size_t N>
std::array<int, N> to_int_array(const std::string& s) {
  const auto parts = split(s, ',');
  if (parts.size() != N) throw std::invalid_argument("expected " + std::to_string(N) + " comma-separated values");
  std::array<int, N> out{};
  for (std::size_t i = 0; i < N; ++i) out[i] = to_int(parts[i]);
  return out;
}

}  // namespace detail

/// Learning-rate schedule "iters:rate, iters:rate".
inline std::vector<std::pair<int, double>> parse_schedule(const std::string& s) {
  std::vector<std::pair<int, double>> out;
  for (const auto& stage : detail::split(s, ',')) {
    const auto colon = stage.find(':');
    if (colon == std::string::npos) throw std::invalid_argument("schedule stages are iterations:rate");
    out.emplace_back(detail::to_int(detail::trim(stage.substr(0, colon))),
                     detail::to_double(detail::trim(stage.substr(colon + 1))));
  }
  if (out.empty()) throw std::invalid_argument("empty schedule");
  return out;
}

/// Overlays the table onto the defaults.
inline ExperimentConfig experiment_from_table(const ConfigTable& table) {
  using namespace detail;
  for (const auto& [name, _] : table) {
    static const std::vector<std::string> known{"data", "model", "train", "eval", "compare"};
    if (std::find(known.begin(), known.end(), name) == known.end()) {
      throw ConfigError("unknown config section [" + name + "]");
    }
  }
  ExperimentConfig c;

  SectionReader data(table, "data");
  data.read("train_images", [&](auto& v) { c.train_images = to_int(v); });
  data.read("eval_images", [&](auto& v) { c.eval_images = to_int(v); });
  data.read("seed", [&](auto& v) { c.data_seed = to_u64(v); });
  data.read("width", [&](auto& v) { c.synth.width = to_int(v); });
  data.read("height", [&](auto& v) { c.synth.height = to_int(v); });
  data.read("min_objects", [&](auto& v) { c.synth.min_objects = to_int(v); });
  data.read("max_objects", [&](auto& v) { c.synth.max_objects = to_int(v); });
  data.read("min_height", [&](auto& v) { c.synth.min_height = to_double(v); });
  data.read("max_height", [&](auto& v) { c.synth.max_height = to_double(v); });
  data.read("aspect", [&](auto& v) { c.synth.aspect = to_double(v); });
  data.read("occluder_probability", [&](auto& v) { c.synth.occluder_probability = to_double(v); });
  data.read("clutter", [&](auto& v) { c.synth.clutter = to_int(v); });
  data.read("train_annotations", [&](auto& v) { c.train_annotations = v; });
  data.read("eval_annotations", [&](auto& v) { c.eval_annotations = v; });
  data.finish();

  SectionReader model(table, "model");
  model.read("gate", [&](auto& v) { c.model.gate_kind = parse_gate_kind(v); });
  model.read("squeeze_ratio", [&](auto& v) { c.model.squeeze_ratio = to_int(v); });
  model.read("blocks", [&](auto& v) {
    c.model.blocks_used.clear();
    for (const auto& b : split(v, ',')) c.model.blocks_used.push_back(to_int(b));
  });
  model.read("roi_size", [&](auto& v) { c.model.roi_size = to_int(v); });
  model.read("head_hidden", [&](auto& v) { c.model.head_hidden = to_int(v); });
  model.read("squeeze_std", [&](auto& v) { c.model.squeeze_std = to_double(v); });
  model.read("channels", [&](auto& v) { c.model.backbone.channels = to_int_array<kNumBlocks>(v); });
  model.read("convs", [&](auto& v) { c.model.backbone.convs = to_int_array<kNumBlocks>(v); });
  model.read("downsample", [&](auto& v) { c.model.backbone.downsample = to_int_array<kNumBlocks>(v); });
  model.read("dilation", [&](auto& v) { c.model.backbone.final_dilation = to_int(v); });
  model.finish();

  SectionReader train(table, "train");
  train.read("seed", [&](auto& v) { c.train.seed = to_u64(v); });
  train.read("precision", [&](auto& v) {
    if (v != "float" && v != "double") throw std::invalid_argument("expected float or double");
    c.double_precision = v == "double";
  });
  train.read("momentum", [&](auto& v) { c.train.sgd.momentum = to_double(v); });
  train.read("weight_decay", [&](auto& v) { c.train.sgd.weight_decay = to_double(v); });
  train.read("schedule", [&](auto& v) { c.train.sgd.lr_schedule = parse_schedule(v); });
  train.read("roi_batch", [&](auto& v) { c.train.sgd.roi_batch = to_int(v); });
  train.read("jitter", [&](auto& v) { c.train.proposals.jitter = to_double(v); });
  train.read("positive_fraction", [&](auto& v) { c.train.proposals.positive_fraction = to_double(v); });
  train.read("positive_iou", [&](auto& v) { c.train.positive_iou = to_double(v); });
  train.read("flip", [&](auto& v) { c.train.flip = to_bool(v); });
  train.read("resample", [&](auto& v) { c.train.resample = to_bool(v); });
  train.finish();

  SectionReader eval(table, "eval");
  eval.read("subsets", [&](auto& v) {
    c.eval.subsets.clear();
    for (const auto& s : split(v, ',')) c.eval.subsets.push_back(subset_by_name(s));
  });
  eval.read("iou", [&](auto& v) { c.eval.iou_threshold = to_double(v); });
  eval.read("nms", [&](auto& v) { c.eval.nms_threshold = to_double(v); });
  eval.read("proposals", [&](auto& v) { c.eval.proposals_per_image = to_int(v); });
  eval.read("seed", [&](auto& v) { c.eval.seed = to_u64(v); });
  eval.read("jitter", [&](auto& v) { c.eval.proposals.jitter = to_double(v); });
  eval.finish();

  SectionReader cmp(table, "compare");
  cmp.read("seeds", [&](auto& v) {
    c.seeds.clear();
    for (const auto& s : split(v, ',')) c.seeds.push_back(to_u64(s));
  });
  cmp.read("models", [&](auto& v) {
    c.models.clear();
    for (const auto& s : split(v, ',')) c.models.push_back(parse_gate_kind(s));
  });
  cmp.read("threads", [&](auto& v) { c.threads = to_int(v); });
  cmp.finish();

  c.validate();
  return c;
}

inline ExperimentConfig load_experiment(const std::string& path) { return experiment_from_table(load_config(path)); }

}  // namespace gmlf
