#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "s2s2/errors.hpp"
#include "s2s2/synthgen.hpp"
#include "s2s2/trainer.hpp"

// Experiment config schema (every key optional, unknown keys rejected):
//
// {
//   "dataset": {
//     "height": 64, "width": 64, "num_classes": 4, "shapes_per_class": 2,
//     "num_train": 200, "num_test_source": 50, "num_test_target": 50,
//     "stack_size": 16, "seed": 2024,
//     "source": <domain>, "target": <domain>
//   },
//   "train": {
//     "preset": "default" | "slaug" | "transunet",
//     "mode": "synth_enc", "alpha_enc": 0.4, "alpha_dec": 0.0,
//     "epochs": 30, "batch_size": 4, "learning_rate": 0.001, "seed": 1,
//     "net": {"base_channels": 16, "depth": 2}
//   },
//   "modes": ["baseline", "synth_only", "synth_enc"],
//   "seeds": [1, 2, 3],
//   "output_dir": "runs/default",
//   "dataset_dir": "<output_dir>/dataset"
// }
//
// <domain> = {"class_intensity": [...K values...], "intensity_jitter", "texture_noise_std",
//             "bias_field_strength", "blur_sigma", "gamma_range": [lo, hi]}
// Omitted domains default to the built-in source/target appearance for K classes.

namespace s2s2 {

using nlohmann::json;

struct ExperimentConfig {
  DatasetConfig dataset;
  TrainConfig train;
  std::vector<Mode> modes{Mode::baseline, Mode::synth_only, Mode::synth_enc};
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::string output_dir = "runs/default";
  std::string dataset_dir;  // empty: <output_dir>/dataset

  std::filesystem::path resolved_dataset_dir() const {
    return dataset_dir.empty() ? std::filesystem::path(output_dir) / "dataset" : std::filesystem::path(dataset_dir);
  }
};

struct AlphaPreset {
  std::string_view name;
  double alpha_enc, alpha_dec;
};

inline constexpr AlphaPreset kAlphaPresets[] = {
    {"default", 0.4, 0.0},
    {"slaug", 0.1, 0.0},
    {"transunet", 1.0, 1.0},
};

namespace detail {

inline bool is_uint(const json& v) { return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0); }

/// Walks one JSON object, tracking consumed keys so leftovers can be reported.
class FieldReader {
 public:
  FieldReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  const json& raw(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }

  template <class T>
  void get(const std::string& key, T& out) {
    if (!j_.contains(key)) return;
    seen_.insert(key);
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(field(key) + ": wrong type (got " + j_.at(key).dump() + ")");
    }
  }

  /// Unsigned integers, rejecting negatives and non-integers explicitly.
  template <class T>
  void get_uint(const std::string& key, T& out) {
    if (!j_.contains(key)) return;
    seen_.insert(key);
    const json& v = j_.at(key);
    if (!is_uint(v)) throw ConfigError(field(key) + ": expected a non-negative integer, got " + v.dump());
    out = static_cast<T>(v.get<std::uint64_t>());
  }

  void get_int(const std::string& key, int& out) {
    if (!j_.contains(key)) return;
    seen_.insert(key);
    const json& v = j_.at(key);
    if (!v.is_number_integer()) throw ConfigError(field(key) + ": expected an integer, got " + v.dump());
    out = v.get<int>();
  }

  void get_number(const std::string& key, double& out) {
    if (!j_.contains(key)) return;
    seen_.insert(key);
    const json& v = j_.at(key);
    if (!v.is_number()) throw ConfigError(field(key) + ": expected a number, got " + v.dump());
    out = v.get<double>();
  }

  std::string field(const std::string& key) const { return path_ + "." + key; }

  void finish() const {
    for (const auto& [key, _] : j_.items())
      if (!seen_.count(key)) throw ConfigError(field(key) + ": unknown key");
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline Mode mode_from_json(const json& v, const std::string& where) {
  if (!v.is_string()) throw ConfigError(where + ": expected a mode name, got " + v.dump());
  const auto m = parse_mode(v.get<std::string>());
  if (!m) throw ConfigError(where + ": unknown mode \"" + v.get<std::string>() + "\"");
  return *m;
}

inline void read_domain(const json& j, const std::string& path, DomainParams& d) {
  FieldReader r(j, path);
  r.get("class_intensity", d.class_intensity);
  r.get_number("intensity_jitter", d.intensity_jitter);
  r.get_number("texture_noise_std", d.texture_noise_std);
  r.get_number("bias_field_strength", d.bias_field_strength);
  r.get_number("blur_sigma", d.blur_sigma);
  if (r.has("gamma_range")) {
    const json& g = r.raw("gamma_range");
    if (!g.is_array() || g.size() != 2 || !g[0].is_number() || !g[1].is_number())
      throw ConfigError(r.field("gamma_range") + ": expected [lo, hi]");
    d.gamma_lo = g[0].get<double>();
    d.gamma_hi = g[1].get<double>();
  }
  r.finish();
}

}  // namespace detail

inline json domain_to_json(const DomainParams& d) {
  return {{"class_intensity", d.class_intensity},
          {"intensity_jitter", d.intensity_jitter},
          {"texture_noise_std", d.texture_noise_std},
          {"bias_field_strength", d.bias_field_strength},
          {"blur_sigma", d.blur_sigma},
          {"gamma_range", {d.gamma_lo, d.gamma_hi}}};
}

inline json dataset_to_json(const DatasetConfig& c) {
  return {{"height", c.mask.height},
          {"width", c.mask.width},
          {"num_classes", c.mask.num_classes},
          {"shapes_per_class", c.mask.shapes_per_class},
          {"num_train", c.num_train},
          {"num_test_source", c.num_test_source},
          {"num_test_target", c.num_test_target},
          {"stack_size", c.stack_size},
          {"seed", c.seed},
          {"source", domain_to_json(c.source)},
          {"target", domain_to_json(c.target)}};
}

inline json train_to_json(const TrainConfig& c) {
  return {{"mode", std::string(mode_name(c.mode))},
          {"alpha_enc", c.alpha_enc},
          {"alpha_dec", c.alpha_dec},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate},
          {"seed", c.seed},
          {"net", {{"base_channels", c.net.base_channels}, {"depth", c.net.depth}}}};
}

inline json experiment_to_json(const ExperimentConfig& c) {
  json modes = json::array();
  for (const Mode m : c.modes) modes.push_back(std::string(mode_name(m)));
  return {{"dataset", dataset_to_json(c.dataset)},
          {"train", train_to_json(c.train)},
          {"modes", modes},
          {"seeds", c.seeds},
          {"output_dir", c.output_dir},
          {"dataset_dir", c.resolved_dataset_dir().string()}};
}

inline DatasetConfig dataset_from_json(const json& j, const std::string& path = "dataset") {
  DatasetConfig c;
  detail::FieldReader r(j, path);
  r.get_uint("height", c.mask.height);
  r.get_uint("width", c.mask.width);
  r.get_int("num_classes", c.mask.num_classes);
  r.get_int("shapes_per_class", c.mask.shapes_per_class);
  r.get_uint("num_train", c.num_train);
  r.get_uint("num_test_source", c.num_test_source);
  r.get_uint("num_test_target", c.num_test_target);
  r.get_uint("stack_size", c.stack_size);
  r.get_uint("seed", c.seed);
  if (c.mask.num_classes < 2 || c.mask.num_classes > 255) throw ConfigError(r.field("num_classes") + ": must be in [2, 255]");
  c.source = default_source_domain(c.mask.num_classes);
  c.target = default_target_domain(c.mask.num_classes);
  if (r.has("source")) detail::read_domain(r.raw("source"), r.field("source"), c.source);
  if (r.has("target")) detail::read_domain(r.raw("target"), r.field("target"), c.target);
  r.finish();
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return c;
}

/// `num_classes` comes from the dataset; it is not a train key.
inline TrainConfig train_from_json(const json& j, int num_classes, const std::string& path = "train") {
  TrainConfig c;
  c.net.num_classes = num_classes;
  detail::FieldReader r(j, path);
  if (r.has("preset")) {
    std::string name;
    r.get("preset", name);
    bool found = false;
    for (const auto& p : kAlphaPresets) {
      if (p.name == name) {
        c.alpha_enc = p.alpha_enc;
        c.alpha_dec = p.alpha_dec;
        found = true;
      }
    }
    if (!found) throw ConfigError(r.field("preset") + ": unknown preset \"" + name + "\"");
  }
  if (r.has("mode")) c.mode = detail::mode_from_json(r.raw("mode"), r.field("mode"));
  r.get_number("alpha_enc", c.alpha_enc);
  r.get_number("alpha_dec", c.alpha_dec);
  r.get_int("epochs", c.epochs);
  r.get_uint("batch_size", c.batch_size);
  r.get_number("learning_rate", c.learning_rate);
  r.get_uint("seed", c.seed);
  if (r.has("net")) {
    detail::FieldReader n(r.raw("net"), r.field("net"));
    n.get_int("base_channels", c.net.base_channels);
    n.get_int("depth", c.net.depth);
    n.finish();
  }
  r.finish();
  c.validate();
  return c;
}

inline void validate_experiment(const ExperimentConfig& c) {
  try {
    c.train.net.validate_input(c.dataset.mask.height, c.dataset.mask.width);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("train.net: ") + e.what());
  }
  if (c.train.net.num_classes != c.dataset.mask.num_classes)
    throw ConfigError("train.net: num_classes differs from dataset.num_classes");
  if (c.modes.empty()) throw ConfigError("modes: must list at least one mode");
  if (c.seeds.empty()) throw ConfigError("seeds: must list at least one seed");
  for (const Mode m : c.modes) {
    TrainConfig t = c.train;
    t.mode = m;
    t.validate();
  }
  std::set<Mode> distinct_modes(c.modes.begin(), c.modes.end());
  std::set<std::uint64_t> distinct_seeds(c.seeds.begin(), c.seeds.end());
  if (distinct_modes.size() != c.modes.size()) throw ConfigError("modes: duplicate entry");
  if (distinct_seeds.size() != c.seeds.size()) throw ConfigError("seeds: duplicate entry");
  if (c.output_dir.empty()) throw ConfigError("output_dir: must not be empty");
}

inline ExperimentConfig experiment_from_json(const json& j) {
  ExperimentConfig c;
  detail::FieldReader r(j, "config");
  if (r.has("dataset")) c.dataset = dataset_from_json(r.raw("dataset"));
  c.train = train_from_json(r.has("train") ? r.raw("train") : json::object(), c.dataset.mask.num_classes);
  if (r.has("modes")) {
    const json& m = r.raw("modes");
    if (!m.is_array()) throw ConfigError("config.modes: expected an array");
    c.modes.clear();
    for (std::size_t i = 0; i < m.size(); ++i)
      c.modes.push_back(detail::mode_from_json(m[i], "config.modes[" + std::to_string(i) + "]"));
  }
  if (r.has("seeds")) {
    const json& s = r.raw("seeds");
    if (!s.is_array()) throw ConfigError("config.seeds: expected an array");
    c.seeds.clear();
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (!detail::is_uint(s[i]))
        throw ConfigError("config.seeds[" + std::to_string(i) + "]: expected a non-negative integer");
      c.seeds.push_back(s[i].get<std::uint64_t>());
    }
  }
  r.get("output_dir", c.output_dir);
  r.get("dataset_dir", c.dataset_dir);
  r.finish();
  validate_experiment(c);
  return c;
}

inline ExperimentConfig parse_experiment(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: not valid JSON: ") + e.what());
  }
  return experiment_from_json(j);
}

inline ExperimentConfig load_experiment(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return parse_experiment(text);
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

}  // namespace s2s2
