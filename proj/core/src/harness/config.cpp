// Copyright 2026 The ssmtune Authors.
// SPDX-License-Identifier: Apache-2.0

#include "ssmtune/harness/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "ssmtune/theory/oracles.hpp"

namespace ssmtune {

using json = nlohmann::ordered_json;

const char* to_string(TaskKind t) {
  switch (t) {
    case TaskKind::target_matching: return "target_matching";
    case TaskKind::toy_classification: return "toy_classification";
    case TaskKind::oracle_suite: return "oracle_suite";
  }
  return "?";
}

TaskKind parse_task(const std::string& s) {
  if (s == "target_matching") return TaskKind::target_matching;
  if (s == "toy_classification") return TaskKind::toy_classification;
  if (s == "oracle_suite") return TaskKind::oracle_suite;
  throw std::invalid_argument("unknown task '" + s +
                              "' (expected target_matching, toy_classification or oracle_suite)");
}

std::vector<double> ExperimentConfig::grid_for(const NamedAdapter& adapter) const {
  if (!adapter.learning_rates.empty()) return adapter.learning_rates;
  if (!learning_rates.empty()) return learning_rates;
  return {train.learning_rate};
}

namespace {

/// Reads one JSON object, tracking consumed keys so leftovers can be reported.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_, "expected an object");
  }

  std::string key_path(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  bool has(const std::string& key) const { return j_.contains(key); }

  const json* find(const std::string& key) {
    if (!j_.contains(key)) return nullptr;
    seen_.insert(key);
    return &j_.at(key);
  }

  const json& require(const std::string& key) {
    const json* v = find(key);
    if (!v) throw ConfigError(key_path(key), "missing required key");
    return *v;
  }

  void read(const std::string& key, std::string& out) {
    if (const json* v = find(key)) {
      if (!v->is_string()) throw ConfigError(key_path(key), "expected a string");
      out = v->get<std::string>();
    }
  }

  void read(const std::string& key, bool& out) {
    if (const json* v = find(key)) {
      if (!v->is_boolean()) throw ConfigError(key_path(key), "expected a boolean");
      out = v->get<bool>();
    }
  }

  void read(const std::string& key, double& out) {
    if (const json* v = find(key)) out = as_double(*v, key_path(key));
  }

  void read(const std::string& key, std::size_t& out) {
    if (const json* v = find(key)) out = static_cast<std::size_t>(as_unsigned(*v, key_path(key)));
  }

  void read(const std::string& key, std::int64_t& out) {
    if (const json* v = find(key)) {
      if (!v->is_number_integer()) throw ConfigError(key_path(key), "expected an integer");
      out = v->get<std::int64_t>();
    }
  }

  void read(const std::string& key, std::vector<double>& out) {
    if (const json* v = find(key)) {
      if (!v->is_array()) throw ConfigError(key_path(key), "expected a list of numbers");
      out.clear();
      for (std::size_t i = 0; i < v->size(); ++i) {
        out.push_back(as_double(v->at(i), key_path(key) + "[" + std::to_string(i) + "]"));
      }
    }
  }

  void read(const std::string& key, std::vector<std::string>& out) {
    if (const json* v = find(key)) {
      if (!v->is_array()) throw ConfigError(key_path(key), "expected a list of strings");
      out.clear();
      for (std::size_t i = 0; i < v->size(); ++i) {
        if (!v->at(i).is_string()) {
          throw ConfigError(key_path(key) + "[" + std::to_string(i) + "]", "expected a string");
        }
        out.push_back(v->at(i).get<std::string>());
      }
    }
  }

  /// Parses an enumerated string with `parse`, rethrowing its message under the key path.
  template <typename T, typename Parse>
  void read_enum(const std::string& key, T& out, Parse parse) {
    std::string s;
    if (!has(key)) return;
    read(key, s);
    try {
      out = parse(s);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(key_path(key), e.what());
    }
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.contains(key)) throw ConfigError(key_path(key), "unknown key");
    }
  }

  static double as_double(const json& v, const std::string& path) {
    if (!v.is_number()) throw ConfigError(path, "expected a number");
    const double d = v.get<double>();
    if (!std::isfinite(d)) throw ConfigError(path, "expected a finite number");
    return d;
  }

  static std::uint64_t as_unsigned(const json& v, const std::string& path) {
    if (!v.is_number_unsigned()) throw ConfigError(path, "expected a nonnegative integer");
    return v.get<std::uint64_t>();
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

ModelArch parse_model(const json& j, const std::string& path) {
  ObjectReader r(j, path);
  ModelArch m;
  r.read("layers", m.layers);
  r.read("channels", m.channels);
  r.read("states", m.states);
  r.read("dt_rank", m.dt_rank);
  r.read("classes", m.classes);
  r.read_enum("kind", m.kind, parse_layer_kind);
  r.read_enum("discretization", m.method, parse_discretization);
  if (r.has("activation") && r.has("activations")) {
    throw ConfigError(r.key_path("activation"), "give either activation or activations, not both");
  }
  if (r.has("activation")) {
    Activation a = Activation::relu;
    r.read_enum("activation", a, parse_activation);
    m.activations.assign(m.layers, a);
  }
  std::vector<std::string> acts;
  r.read("activations", acts);
  for (std::size_t i = 0; i < acts.size(); ++i) {
    try {
      m.activations.push_back(parse_activation(acts[i]));
    } catch (const std::invalid_argument& e) {
      throw ConfigError(r.key_path("activations") + "[" + std::to_string(i) + "]", e.what());
    }
  }
  r.finish();
  try {
    m.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(path, e.what());
  }
  return m;
}

TargetSpec parse_target(const json& j, const std::string& path) {
  ObjectReader r(j, path);
  TargetSpec t;
  r.read("layers", t.layers);
  r.read("states", t.states);
  r.read("residual", t.residual);
  r.read_enum("activation", t.activation, parse_activation);
  r.finish();
  if (t.layers == 0) throw ConfigError(r.key_path("layers"), "must be >= 1");
  if (t.states == 0) throw ConfigError(r.key_path("states"), "must be >= 1");
  return t;
}

DataSpec parse_data(const json& j, const std::string& path) {
  ObjectReader r(j, path);
  DataSpec d;
  r.read("train_sequences", d.train_sequences);
  r.read("val_sequences", d.val_sequences);
  r.read("length", d.length);
  r.read("input_low", d.input_low);
  r.read("input_high", d.input_high);
  r.finish();
  if (d.train_sequences == 0) throw ConfigError(r.key_path("train_sequences"), "must be >= 1");
  if (d.length == 0) throw ConfigError(r.key_path("length"), "must be >= 1");
  if (d.input_low > d.input_high) throw ConfigError(r.key_path("input_high"), "must be >= input_low");
  return d;
}

PrefixReparam parse_reparam(const std::string& s) {
  if (s == "direct") return PrefixReparam::direct;
  if (s == "mlp") return PrefixReparam::mlp;
  throw std::invalid_argument("unknown reparam '" + s + "' (expected direct or mlp)");
}

NamedAdapter parse_adapter(const json& j, const std::string& path) {
  ObjectReader r(j, path);
  NamedAdapter a;
  r.read("name", a.name);
  std::string type;
  r.require("type");
  r.read("type", type);
  r.read("learning_rates", a.learning_rates);
  if (a.name.empty()) a.name = type;
  if (type == "frozen") {
    a.spec.reset();
  } else if (type == "full") {
    a.spec = FullSpec{};
  } else if (type == "bitfit") {
    a.spec = BitFitSpec{};
  } else if (type == "initial_state") {
    a.spec = InitialStateSpec{};
  } else if (type == "lora") {
    LoRASpec s;
    r.read("targets", s.targets);
    r.read("rank", s.rank);
    r.read("alpha", s.alpha);
    r.read("dropout", s.dropout);
    a.spec = s;
  } else if (type == "prompt") {
    PromptTuningSpec s;
    r.read("length", s.length);
    a.spec = s;
  } else if (type == "prefix") {
    PrefixTuningSpec s;
    r.read("length", s.length);
    r.read_enum("reparam", s.reparam, parse_reparam);
    r.read("mlp_width", s.mlp_width);
    a.spec = s;
  } else if (type == "sdlora" || type == "sdt") {
    SDLoRASpec s;
    s.sparse_projection = type == "sdt";
    r.read("keep_channel_fraction", s.keep_channel_fraction);
    r.read("keep_state_fraction", s.keep_state_fraction);
    r.read("update_channel_fraction", s.update_channel_fraction);
    r.read("update_state_fraction", s.update_state_fraction);
    r.read("proj_lora_rank", s.proj_lora_rank);
    r.read("proj_lora_alpha", s.proj_lora_alpha);
    r.read("warmup_batches", s.warmup_batches);
    r.read("warmup_learning_rate", s.warmup_learning_rate);
    r.read("tune_residual_bias", s.tune_residual_bias);
    r.read("sparse_projection", s.sparse_projection);
    a.spec = s;
  } else {
    throw ConfigError(r.key_path("type"),
                      "unknown adapter type '" + type +
                          "' (expected frozen, full, lora, bitfit, prompt, prefix, initial_state, "
                          "sdlora or sdt)");
  }
  r.finish();
  if (a.name.find_first_of(",\"\r\n/\\") != std::string::npos) {
    throw ConfigError(r.key_path("name"), "must not contain commas, quotes, slashes or line breaks");
  }
  if (a.spec) {
    try {
      validate_spec(*a.spec);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(path, e.what());
    }
  }
  return a;
}

TrainConfig parse_train(const json& j, const std::string& path) {
  ObjectReader r(j, path);
  TrainConfig t;
  r.read_enum("optimizer", t.optimizer, parse_optimizer);
  r.read("learning_rate", t.learning_rate);
  r.read("weight_decay", t.weight_decay);
  r.read_enum("schedule", t.schedule, parse_schedule);
  r.read("iterations", t.iterations);
  r.read("batch_size", t.batch_size);
  r.read_enum("loss", t.loss, parse_loss);
  r.read("eval_every", t.eval_every);
  r.read("patience", t.patience);
  r.read("grad_clip", t.grad_clip);
  r.finish();
  try {
    t.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(path, e.what());
  }
  return t;
}

OracleSuiteSpec parse_oracle(const json& j, const std::string& path) {
  ObjectReader r(j, path);
  OracleSuiteSpec o;
  r.read("names", o.names);
  r.read("trials", o.trials);
  r.finish();
  const auto valid = oracle_names();
  for (std::size_t i = 0; i < o.names.size(); ++i) {
    if (std::find(valid.begin(), valid.end(), o.names[i]) == valid.end()) {
      throw ConfigError(r.key_path("names") + "[" + std::to_string(i) + "]",
                        "unknown oracle '" + o.names[i] + "'");
    }
  }
  if (o.trials == 0) throw ConfigError(r.key_path("trials"), "must be >= 1");
  return o;
}

void check_consistency(const ExperimentConfig& c) {
  if (c.seeds.empty()) throw ConfigError("seeds", "must list at least one seed");
  if (c.workers == 0) throw ConfigError("workers", "must be >= 1");
  if (c.output_dir.empty()) throw ConfigError("output_dir", "must not be empty");
  for (std::size_t i = 0; i < c.learning_rates.size(); ++i) {
    if (!(c.learning_rates[i] >= 0.0)) {
      throw ConfigError("learning_rates[" + std::to_string(i) + "]", "must be >= 0");
    }
  }
  if (c.task == TaskKind::oracle_suite) return;
  if (c.adapters.empty()) throw ConfigError("adapters", "must list at least one adapter");
  std::set<std::string> names;
  for (std::size_t i = 0; i < c.adapters.size(); ++i) {
    const std::string path = "adapters[" + std::to_string(i) + "]";
    if (!names.insert(c.adapters[i].name).second) {
      throw ConfigError(path + ".name", "duplicate adapter name '" + c.adapters[i].name + "'");
    }
    for (std::size_t k = 0; k < c.adapters[i].learning_rates.size(); ++k) {
      if (!(c.adapters[i].learning_rates[k] >= 0.0)) {
        throw ConfigError(path + ".learning_rates[" + std::to_string(k) + "]", "must be >= 0");
      }
    }
  }
  if (c.task == TaskKind::target_matching) {
    if (c.model.classes != 0) throw ConfigError("model.classes", "target_matching needs classes = 0");
    if (c.train.loss != LossKind::mse) throw ConfigError("train.loss", "target_matching needs mse");
    if (c.model.kind != LayerKind::s4) throw ConfigError("model.kind", "target_matching needs s4 layers");
  } else {
    if (c.model.classes < 2) throw ConfigError("model.classes", "toy_classification needs classes >= 2");
    if (c.train.loss != LossKind::cross_entropy) {
      throw ConfigError("train.loss", "toy_classification needs cross_entropy");
    }
  }
}

json adapter_json(const NamedAdapter& a) {
  json j;
  j["name"] = a.name;
  j["type"] = a.spec ? adapter_kind(*a.spec) : "frozen";
  if (a.spec) {
    std::visit(
        [&](const auto& s) {
          using S = std::decay_t<decltype(s)>;
          if constexpr (std::is_same_v<S, LoRASpec>) {
            j["targets"] = s.targets;
            j["rank"] = s.rank;
            j["alpha"] = s.alpha;
            j["dropout"] = s.dropout;
          } else if constexpr (std::is_same_v<S, PromptTuningSpec>) {
            j["length"] = s.length;
          } else if constexpr (std::is_same_v<S, PrefixTuningSpec>) {
            j["length"] = s.length;
            j["reparam"] = s.reparam == PrefixReparam::direct ? "direct" : "mlp";
            j["mlp_width"] = s.mlp_width;
          } else if constexpr (std::is_same_v<S, SDLoRASpec>) {
            j["keep_channel_fraction"] = s.keep_channel_fraction;
            j["keep_state_fraction"] = s.keep_state_fraction;
            j["update_channel_fraction"] = s.update_channel_fraction;
            j["update_state_fraction"] = s.update_state_fraction;
            j["proj_lora_rank"] = s.proj_lora_rank;
            j["proj_lora_alpha"] = s.proj_lora_alpha;
            j["warmup_batches"] = s.warmup_batches;
            j["warmup_learning_rate"] = s.warmup_learning_rate;
            j["tune_residual_bias"] = s.tune_residual_bias;
          }
        },
        *a.spec);
  }
  if (!a.learning_rates.empty()) j["learning_rates"] = a.learning_rates;
  return j;
}

}  // namespace

ExperimentConfig parse_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError("", std::string("invalid JSON: ") + e.what());
  }
  ObjectReader r(j, "");
  ExperimentConfig c;
  r.read_enum("task", c.task, parse_task);
  if (const json* v = r.find("model")) c.model = parse_model(*v, "model");
  if (const json* v = r.find("target")) c.target = parse_target(*v, "target");
  if (const json* v = r.find("data")) c.data = parse_data(*v, "data");
  if (const json* v = r.find("adapters")) {
    if (!v->is_array()) throw ConfigError("adapters", "expected a list of adapters");
    for (std::size_t i = 0; i < v->size(); ++i) {
      c.adapters.push_back(parse_adapter(v->at(i), "adapters[" + std::to_string(i) + "]"));
    }
  }
  if (const json* v = r.find("train")) c.train = parse_train(*v, "train");
  r.read("learning_rates", c.learning_rates);
  if (const json* v = r.find("seeds")) {
    if (!v->is_array()) throw ConfigError("seeds", "expected a list of seeds");
    c.seeds.clear();
    for (std::size_t i = 0; i < v->size(); ++i) {
      c.seeds.push_back(ObjectReader::as_unsigned(v->at(i), "seeds[" + std::to_string(i) + "]"));
    }
  }
  r.read("output_dir", c.output_dir);
  r.read("workers", c.workers);
  r.read("record_timing", c.record_timing);
  r.read("write_checkpoints", c.write_checkpoints);
  r.read("plot_log_y", c.plot_log_y);
  if (const json* v = r.find("oracle")) c.oracle = parse_oracle(*v, "oracle");
  r.finish();
  check_consistency(c);
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open config file " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config(text.str());
}

std::string serialize_config(const ExperimentConfig& c) {
  json j;
  j["task"] = to_string(c.task);
  json m;
  m["layers"] = c.model.layers;
  m["channels"] = c.model.channels;
  m["states"] = c.model.states;
  m["dt_rank"] = c.model.dt_rank;
  m["classes"] = c.model.classes;
  m["kind"] = to_string(c.model.kind);
  m["discretization"] = to_string(c.model.method);
  if (!c.model.activations.empty()) {
    json acts = json::array();
    for (Activation a : c.model.activations) acts.push_back(to_string(a));
    m["activations"] = acts;
  }
  j["model"] = m;
  j["target"] = {{"layers", c.target.layers},
                 {"states", c.target.states},
                 {"residual", c.target.residual},
                 {"activation", to_string(c.target.activation)}};
  j["data"] = {{"train_sequences", c.data.train_sequences},
               {"val_sequences", c.data.val_sequences},
               {"length", c.data.length},
               {"input_low", c.data.input_low},
               {"input_high", c.data.input_high}};
  json adapters = json::array();
  for (const auto& a : c.adapters) adapters.push_back(adapter_json(a));
  j["adapters"] = adapters;
  j["train"] = {{"optimizer", to_string(c.train.optimizer)},
                {"learning_rate", c.train.learning_rate},
                {"weight_decay", c.train.weight_decay},
                {"schedule", to_string(c.train.schedule)},
                {"iterations", c.train.iterations},
                {"batch_size", c.train.batch_size},
                {"loss", to_string(c.train.loss)},
                {"eval_every", c.train.eval_every},
                {"patience", c.train.patience},
                {"grad_clip", c.train.grad_clip}};
  j["learning_rates"] = c.learning_rates;
  j["seeds"] = c.seeds;
  j["output_dir"] = c.output_dir;
  j["workers"] = c.workers;
  j["record_timing"] = c.record_timing;
  j["write_checkpoints"] = c.write_checkpoints;
  j["plot_log_y"] = c.plot_log_y;
  j["oracle"] = {{"names", c.oracle.names}, {"trials", c.oracle.trials}};
  return j.dump(2) + "\n";
}

}  // namespace ssmtune
