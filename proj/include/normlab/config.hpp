#pragma once

// RunConfig: everything a `train` invocation needs, as one JSON document.
//
//   {
//     "dataset":   {"type": "blobs", "classes": 3, "dim": 2, "points_per_class": 250},
//     "network":   {"dims": [2, 32, 3], "hidden": "wn", "output": "wn"},
//     "regularizer": {"type": "l2", "lambda": 1e-4},
//     "optimizer": {"kind": "sgd", "eta": 0.1},
//     "steps": 1000, "seed": 7
//   }
//
// Unknown keys and wrong types are rejected with the full key path.

#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "normlab/data.hpp"
#include "normlab/errors.hpp"
#include "normlab/experiments.hpp"
#include "normlab/model.hpp"
#include "normlab/optimize.hpp"
#include "normlab/regularize.hpp"
#include "normlab/reparam.hpp"
#include "normlab/telemetry.hpp"
#include "normlab/train.hpp"

namespace normlab {

struct NetworkConfig {
  std::vector<std::size_t> dims{2, 32, 3};
  ReparamKind hidden = ReparamKind::wn();
  ReparamKind output = ReparamKind::wn();
  BackwardVariant backward = BackwardVariant::Exact;
  bool bias = true;
  Activation activation = Activation::ReLU;
  std::size_t min_group_size = kDefaultMinGroupSize;
};

struct RegularizerConfig {
  RegularizerType type = RegularizerType::L2;
  double lambda = 1e-4;
  double epsilon = 0.0;
};

struct ScheduleConfig {
  std::string type = "constant";  // or "step"
  double factor = 0.1;
  std::size_t every = 1000;
};

struct RunConfig {
  DatasetSpec dataset = BlobsSpec{};
  NetworkConfig network;
  RegularizerConfig regularizer;
  OptimizerSpec optimizer;
  ScheduleConfig schedule;
  std::size_t steps = 1000;
  std::size_t batch_size = 32;
  std::uint64_t seed = 7;
  std::string out = "normlab-out";
  std::size_t record_every = 1;
  std::string telemetry_format = "csv";
  std::string run_id = "run";
};

namespace detail {

class StrictObject {
 public:
  StrictObject(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j.is_object()) throw ConfigError("config key '" + display() + "' must be an object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  std::string key_path(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

  const nlohmann::json* raw(const std::string& key) {
    seen_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void get(const std::string& key, double& out) {
    if (const auto* v = raw(key)) {
      if (!v->is_number()) fail(key, "a number");
      out = v->get<double>();
    }
  }

  void get(const std::string& key, std::size_t& out) {
    if (const auto* v = raw(key)) {
      const bool ok = v->is_number_unsigned() ||
                      (v->is_number_integer() && v->get<std::int64_t>() >= 0);
      if (!ok) fail(key, "a non-negative integer");
      out = v->get<std::size_t>();
    }
  }

  void get(const std::string& key, bool& out) {
    if (const auto* v = raw(key)) {
      if (!v->is_boolean()) fail(key, "a boolean");
      out = v->get<bool>();
    }
  }

  void get(const std::string& key, std::string& out) {
    if (const auto* v = raw(key)) {
      if (!v->is_string()) fail(key, "a string");
      out = v->get<std::string>();
    }
  }

  /// Parses a string value with `parse`, re-throwing with the key path.
  template <class T, class Parse>
  void get_parsed(const std::string& key, T& out, Parse parse) {
    std::string s;
    get(key, s);
    if (!has(key)) return;
    try {
      out = parse(s);
    } catch (const Error& e) {
      throw ConfigError("config key '" + key_path(key) + "': " + e.what());
    }
  }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) throw ConfigError("unknown config key '" + key_path(k) + "'");
    }
  }

  [[noreturn]] void fail(const std::string& key, const char* expected) const {
    throw ConfigError("config key '" + key_path(key) + "' must be " + expected);
  }

 private:
  std::string display() const { return path_.empty() ? "<root>" : path_; }

  const nlohmann::json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline DatasetSpec parse_dataset(const nlohmann::json& j) {
  StrictObject o(j, "dataset");
  std::string type = "blobs";
  o.get("type", type);
  if (type == "blobs") {
    BlobsSpec s;
    o.get("classes", s.classes);
    o.get("dim", s.dim);
    o.get("points_per_class", s.points_per_class);
    o.get("spread", s.spread);
    o.get("seed", s.seed);
    o.finish();
    return s;
  }
  if (type == "two_moons") {
    TwoMoonsSpec s;
    o.get("points", s.points);
    o.get("noise", s.noise);
    o.get("seed", s.seed);
    o.finish();
    return s;
  }
  if (type == "csv") {
    CsvFileSpec s;
    std::string path;
    o.get("path", path);
    if (path.empty()) throw ConfigError("config key 'dataset.path' is required for csv");
    s.path = path;
    o.get("label_column", s.label_column);
    o.get("seed", s.seed);
    o.finish();
    return s;
  }
  if (type == "idx") {
    IdxPairSpec s;
    std::string images, labels;
    o.get("images", images);
    o.get("labels", labels);
    if (images.empty() || labels.empty()) {
      throw ConfigError("config keys 'dataset.images' and 'dataset.labels' are required for idx");
    }
    s.images_path = images;
    s.labels_path = labels;
    o.get("subset", s.subset_size);
    o.get("seed", s.seed);
    o.finish();
    return s;
  }
  throw ConfigError("config key 'dataset.type': unknown dataset type '" + type + "'");
}

inline nlohmann::json dataset_json(const DatasetSpec& spec) {
  return std::visit(
      [](const auto& s) -> nlohmann::json {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, BlobsSpec>) {
          return {{"type", "blobs"},   {"classes", s.classes}, {"dim", s.dim},
                  {"points_per_class", s.points_per_class},    {"spread", s.spread},
                  {"seed", s.seed}};
        } else if constexpr (std::is_same_v<T, TwoMoonsSpec>) {
          return {{"type", "two_moons"}, {"points", s.points}, {"noise", s.noise}, {"seed", s.seed}};
        } else if constexpr (std::is_same_v<T, CsvFileSpec>) {
          return {{"type", "csv"}, {"path", s.path.string()}, {"label_column", s.label_column},
                  {"seed", s.seed}};
        } else {
          return {{"type", "idx"},
                  {"images", s.images_path.string()},
                  {"labels", s.labels_path.string()},
                  {"subset", s.subset_size},
                  {"seed", s.seed}};
        }
      },
      spec);
}

inline RegularizerType parse_regularizer_type(const std::string& s) {
  if (s == "none") return RegularizerType::None;
  if (s == "l2") return RegularizerType::L2;
  if (s == "eps" || s == "eps-shifted") return RegularizerType::EpsShiftedL2;
  throw ConfigError("unknown regularizer '" + s + "'");
}

inline std::string regularizer_type_name(RegularizerType t) {
  switch (t) {
    case RegularizerType::None: return "none";
    case RegularizerType::L2: return "l2";
    case RegularizerType::EpsShiftedL2: return "eps";
  }
  return "?";
}

inline Activation parse_activation(const std::string& s) {
  if (s == "relu") return Activation::ReLU;
  if (s == "identity" || s == "linear") return Activation::Identity;
  throw ConfigError("unknown activation '" + s + "'");
}

}  // namespace detail

inline RunConfig parse_run_config(const nlohmann::json& j) {
  RunConfig c;
  detail::StrictObject root(j, "");
  if (const auto* d = root.raw("dataset")) c.dataset = detail::parse_dataset(*d);
  if (const auto* n = root.raw("network")) {
    detail::StrictObject o(*n, "network");
    if (const auto* dims = o.raw("dims")) {
      if (!dims->is_array() || dims->size() < 2) o.fail("dims", "an array of at least 2 widths");
      c.network.dims.clear();
      for (const auto& d : *dims) {
        if (!d.is_number_integer() || d.get<std::int64_t>() <= 0) {
          o.fail("dims", "an array of positive integers");
        }
        c.network.dims.push_back(d.get<std::size_t>());
      }
    }
    o.get_parsed("hidden", c.network.hidden, parse_reparam_kind);
    o.get_parsed("output", c.network.output, parse_reparam_kind);
    o.get_parsed("backward", c.network.backward, parse_backward_variant);
    o.get("bias", c.network.bias);
    o.get_parsed("activation", c.network.activation, detail::parse_activation);
    o.get("min_group_size", c.network.min_group_size);
    o.finish();
  }
  if (const auto* r = root.raw("regularizer")) {
    detail::StrictObject o(*r, "regularizer");
    o.get_parsed("type", c.regularizer.type, detail::parse_regularizer_type);
    o.get("lambda", c.regularizer.lambda);
    o.get("epsilon", c.regularizer.epsilon);
    o.finish();
  }
  if (const auto* p = root.raw("optimizer")) {
    detail::StrictObject o(*p, "optimizer");
    o.get_parsed("kind", c.optimizer.kind, parse_optimizer_kind);
    if (c.optimizer.kind == OptimizerKind::Adam && !o.has("eta")) c.optimizer.eta = 1e-3;
    o.get("eta", c.optimizer.eta);
    o.get("mu", c.optimizer.mu);
    o.get("beta1", c.optimizer.beta1);
    o.get("beta2", c.optimizer.beta2);
    o.get("eps_adam", c.optimizer.eps_adam);
    o.finish();
  }
  if (const auto* s = root.raw("schedule")) {
    detail::StrictObject o(*s, "schedule");
    o.get("type", c.schedule.type);
    if (c.schedule.type != "constant" && c.schedule.type != "step") {
      throw ConfigError("config key 'schedule.type' must be \"constant\" or \"step\"");
    }
    o.get("factor", c.schedule.factor);
    o.get("every", c.schedule.every);
    o.finish();
  }
  root.get("steps", c.steps);
  root.get("batch_size", c.batch_size);
  root.get("seed", c.seed);
  root.get("out", c.out);
  root.get("record_every", c.record_every);
  root.get("telemetry_format", c.telemetry_format);
  root.get("run_id", c.run_id);
  root.finish();
  return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    throw ConfigError("config file '" + path.string() + "' does not exist");
  }
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config file '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return parse_run_config(j);
}

/// Canonical form; parse_run_config(to_json(c)) reproduces c.
inline nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json dims = nlohmann::json::array();
  for (auto d : c.network.dims) dims.push_back(d);
  return {
      {"dataset", detail::dataset_json(c.dataset)},
      {"network",
       {{"dims", dims},
        {"hidden", to_string(c.network.hidden)},
        {"output", to_string(c.network.output)},
        {"backward", to_string(c.network.backward)},
        {"bias", c.network.bias},
        {"activation", c.network.activation == Activation::ReLU ? "relu" : "identity"},
        {"min_group_size", c.network.min_group_size}}},
      {"regularizer",
       {{"type", detail::regularizer_type_name(c.regularizer.type)},
        {"lambda", c.regularizer.lambda},
        {"epsilon", c.regularizer.epsilon}}},
      {"optimizer",
       {{"kind", to_string(c.optimizer.kind)},
        {"eta", c.optimizer.eta},
        {"mu", c.optimizer.mu},
        {"beta1", c.optimizer.beta1},
        {"beta2", c.optimizer.beta2},
        {"eps_adam", c.optimizer.eps_adam}}},
      {"schedule",
       {{"type", c.schedule.type}, {"factor", c.schedule.factor}, {"every", c.schedule.every}}},
      {"steps", c.steps},
      {"batch_size", c.batch_size},
      {"seed", c.seed},
      {"out", c.out},
      {"record_every", c.record_every},
      {"telemetry_format", c.telemetry_format},
      {"run_id", c.run_id}};
}

/// Digest of the scientific content; the output directory is excluded so the
/// same run written to two places reports the same digest.
inline std::string run_config_digest(const RunConfig& c) {
  nlohmann::json j = to_json(c);
  j.erase("out");
  return config_digest(j);
}

inline TrainConfig to_train_config(const RunConfig& c) {
  TrainConfig t;
  t.layers = with_regularizer(
      mlp_layers(c.network.dims, c.network.hidden, c.network.output, c.network.bias,
                 c.network.backward),
      c.regularizer.type, c.regularizer.lambda, c.regularizer.epsilon);
  // An explicitly requested variant must exist for every layer.
  for (auto& l : t.layers) l.backward_variant = c.network.backward;
  t.activation = c.network.activation;
  t.optimizer = c.optimizer;
  t.schedule = c.schedule.type == "step" ? LrSchedule::step_decay(c.schedule.factor, c.schedule.every)
                                         : LrSchedule::constant();
  t.steps = c.steps;
  t.batch_size = c.batch_size;
  t.seed = c.seed;
  t.record_every = c.record_every;
  t.min_group_size = c.network.min_group_size;
  return t;
}

}  // namespace normlab
