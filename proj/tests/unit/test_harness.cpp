// Copyright 2026 The ssmtune Authors.
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <regex>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "ssmtune/harness/checkpoint.hpp"
#include "ssmtune/harness/config.hpp"
#include "ssmtune/harness/data.hpp"
#include "ssmtune/harness/experiment.hpp"
#include "ssmtune/harness/metrics.hpp"
#include "ssmtune/harness/plot.hpp"

using namespace ssmtune;
namespace fs = std::filesystem;

namespace {

/// A fresh, empty scratch directory per call.
fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("ssmtune_unit_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::size_t count_of(const std::string& text, const std::string& needle) {
  std::size_t n = 0;
  for (std::size_t pos = text.find(needle); pos != std::string::npos; pos = text.find(needle, pos + 1)) ++n;
  return n;
}

const char* kFullConfig = R"({
  "task": "target_matching",
  "model": {"layers": 2, "channels": 4, "states": 3, "activations": ["relu", "linear"],
            "discretization": "bilinear"},
  "target": {"layers": 1, "states": 2, "residual": false, "activation": "linear"},
  "data": {"train_sequences": 2, "val_sequences": 1, "length": 12, "input_low": -2, "input_high": 5},
  "adapters": [
    {"name": "frozen", "type": "frozen"},
    {"name": "full", "type": "full", "learning_rates": [0.01]},
    {"name": "lora_w", "type": "lora", "targets": ["W", "layers.0.b"], "rank": 2, "alpha": 4, "dropout": 0.1},
    {"name": "bias", "type": "bitfit"},
    {"name": "p", "type": "prompt", "length": 3},
    {"name": "pre", "type": "prefix", "length": 2, "reparam": "mlp", "mlp_width": 5},
    {"name": "h0", "type": "initial_state"},
    {"name": "sd", "type": "sdlora", "keep_channel_fraction": 0.5, "update_state_fraction": 0.25,
     "proj_lora_rank": 3, "warmup_batches": 4, "tune_residual_bias": false},
    {"name": "sdt", "type": "sdt", "keep_state_fraction": 0.75}
  ],
  "train": {"optimizer": "adam", "learning_rate": 0.003, "weight_decay": 0.1, "schedule": "constant",
            "iterations": 7, "batch_size": 2, "loss": "mse", "eval_every": 2, "patience": 3, "grad_clip": 1.5},
  "learning_rates": [0.05, 0.001],
  "seeds": [3, 18446744073709551615],
  "output_dir": "somewhere",
  "workers": 2,
  "record_timing": true,
  "write_checkpoints": false,
  "plot_log_y": false,
  "oracle": {"names": ["essential"], "trials": 4}
})";

std::string with_replaced(std::string text, const std::string& from, const std::string& to) {
  const auto pos = text.find(from);
  REQUIRE(pos != std::string::npos);
  text.replace(pos, from.size(), to);
  return text;
}

std::string config_error_key(const std::string& text) {
  try {
    parse_config(text);
  } catch (const ConfigError& e) {
    return e.key();
  }
  return "<no error>";
}

/// Small regression sweep used by the experiment tests.
ExperimentConfig tiny_sweep(const fs::path& out) {
  ExperimentConfig c;
  c.model.layers = 2;
  c.model.channels = 4;
  c.model.states = 4;
  c.target.layers = 1;
  c.target.states = 2;
  c.data.length = 16;
  c.train.iterations = 40;
  c.train.eval_every = 5;
  c.learning_rates = {1e-2, 5e-2};
  c.seeds = {0, 1};
  c.output_dir = out.string();
  c.adapters.push_back({"frozen", std::nullopt, {}});
  c.adapters.push_back({"full", FullSpec{}, {}});
  LoRASpec lora;
  lora.rank = 2;
  lora.alpha = 2;
  c.adapters.push_back({"lora_proj", lora, {}});
  SDLoRASpec sd;
  sd.keep_channel_fraction = 0.75;
  sd.update_channel_fraction = 0.5;
  sd.proj_lora_rank = 1;
  sd.proj_lora_alpha = 1;
  sd.warmup_batches = 3;
  c.adapters.push_back({"sdlora", sd, {}});
  return c;
}

}  // namespace

TEST_SUITE("config") {
  TEST_CASE("every field parses and survives a serialization round trip") {
    const ExperimentConfig c = parse_config(kFullConfig);
    CHECK(c.model.method == Discretization::bilinear);
    CHECK(c.model.activations == std::vector<Activation>{Activation::relu, Activation::linear});
    CHECK_FALSE(c.target.residual);
    CHECK(c.data.input_low == -2);
    REQUIRE(c.adapters.size() == 9);
    CHECK_FALSE(c.adapters[0].spec.has_value());
    CHECK(std::get<LoRASpec>(*c.adapters[2].spec).targets == std::vector<std::string>{"W", "layers.0.b"});
    CHECK(std::get<PrefixTuningSpec>(*c.adapters[5].spec).reparam == PrefixReparam::mlp);
    CHECK_FALSE(std::get<SDLoRASpec>(*c.adapters[7].spec).sparse_projection);
    CHECK(std::get<SDLoRASpec>(*c.adapters[8].spec).sparse_projection);
    CHECK(c.seeds[1] == 18446744073709551615ULL);
    CHECK(c.train.optimizer == OptimizerKind::adam);
    CHECK(c.train.grad_clip == 1.5);
    CHECK(c.grid_for(c.adapters[1]) == std::vector<double>{0.01});
    CHECK(c.grid_for(c.adapters[2]) == std::vector<double>{0.05, 0.001});

    const std::string text = serialize_config(c);
    const ExperimentConfig again = parse_config(text);
    CHECK(again == c);
    CHECK(serialize_config(again) == text);
  }

  TEST_CASE("defaults round-trip and awkward doubles stay exact") {
    ExperimentConfig c;
    c.adapters.push_back({"full", FullSpec{}, {}});
    c.learning_rates = {0.1, 1.0 / 3.0, 5e-324, 1.7976931348623157e308};
    CHECK(parse_config(serialize_config(c)) == c);
  }

  TEST_CASE("a single activation string applies to every layer") {
    const ExperimentConfig c = parse_config(
        R"({"model": {"layers": 3, "activation": "linear"}, "adapters": [{"type": "full"}]})");
    CHECK(c.model.activations == std::vector<Activation>(3, Activation::linear));
    CHECK(c.adapters[0].name == "full");
  }

  TEST_CASE("unknown keys are rejected with their full path") {
    CHECK(config_error_key(with_replaced(kFullConfig, "\"workers\"", "\"wrokers\"")) == "wrokers");
    CHECK(config_error_key(with_replaced(kFullConfig, "\"patience\"", "\"patients\"")) == "train.patients");
    CHECK(config_error_key(with_replaced(kFullConfig, "\"rank\": 2", "\"rnak\": 2")) == "adapters[2].rnak");
    // A field valid for another adapter type is still unknown here.
    CHECK(config_error_key(with_replaced(kFullConfig, "\"type\": \"bitfit\"", "\"type\": \"bitfit\", \"rank\": 2")) ==
          "adapters[3].rank");
  }

  TEST_CASE("wrong types and invalid values name the key") {
    CHECK(config_error_key(with_replaced(kFullConfig, "\"iterations\": 7", "\"iterations\": \"7\"")) ==
          "train.iterations");
    CHECK(config_error_key(with_replaced(kFullConfig, "\"iterations\": 7", "\"iterations\": -7")) ==
          "train.iterations");
    CHECK(config_error_key(with_replaced(kFullConfig, "\"iterations\": 7", "\"iterations\": 0")) == "train");
    CHECK(config_error_key(with_replaced(kFullConfig, "\"type\": \"prompt\"", "\"type\": \"prompts\"")) ==
          "adapters[4].type");
    CHECK(config_error_key(with_replaced(kFullConfig, "\"rank\": 2", "\"rank\": 0")) == "adapters[2]");
    CHECK(config_error_key(with_replaced(kFullConfig, "\"seeds\": [3,", "\"seeds\": [-3,")) == "seeds[0]");
    CHECK(config_error_key(with_replaced(kFullConfig, "\"name\": \"bias\"", "\"name\": \"full\"")) ==
          "adapters[3].name");
    CHECK(config_error_key(with_replaced(kFullConfig, "\"name\": \"bias\"", "\"name\": \"a,b\"")) ==
          "adapters[3].name");
    CHECK(config_error_key(with_replaced(kFullConfig, "[\"essential\"]", "[\"nope\"]")) == "oracle.names[0]");
    CHECK(config_error_key(with_replaced(kFullConfig, "\"loss\": \"mse\"", "\"loss\": \"cross_entropy\"")) ==
          "train.loss");
    CHECK(config_error_key(R"({"adapters": [{"name": "x"}]})") == "adapters[0].type");
    CHECK(config_error_key(R"({"adapters": []})") == "adapters");
    CHECK(config_error_key("[1, 2]") == "");
  }

  TEST_CASE("syntax errors are ConfigErrors") {
    CHECK_THROWS_AS(parse_config("{\"task\": "), ConfigError);
    CHECK_THROWS_WITH_AS(parse_config(R"({"task": "regression", "adapters": [{"type": "full"}]})"),
                         doctest::Contains("task"), ConfigError);
  }

  TEST_CASE("load_config reports missing files") {
    CHECK_THROWS_WITH(load_config("/nonexistent/ssmtune.json"), doctest::Contains("/nonexistent/ssmtune.json"));
  }
}

TEST_SUITE("data") {
  TEST_CASE("default target matching shape and integer inputs") {
    const TaskData d = gen_target_matching(0);
    REQUIRE(d.train.size() == 1);
    const Tensor& X = d.train.inputs[0];
    CHECK(X.shape() == Shape{64, 200});
    std::set<double> values(X.data().begin(), X.data().end());
    CHECK(*values.begin() == 0.0);
    CHECK(*values.rbegin() == 9.0);
    CHECK(values.size() == 10);
    for (double v : values) CHECK(v == std::floor(v));
    CHECK(d.frozen.arch.layers == 4);
    CHECK(d.target.arch.layers == 1);
    CHECK(d.val.inputs[0] == X);
  }

  TEST_CASE("the target model reproduces the labels exactly") {
    const TaskData d = gen_target_matching(5);
    CHECK(evaluate(AdaptedModel(d.target), d.train, Metric::mse) == 0.0);
    CHECK(evaluate(AdaptedModel(d.frozen), d.train, Metric::mse) > 0.0);
  }

  TEST_CASE("different seeds draw different inputs and models") {
    const TaskData a = gen_target_matching(1);
    const TaskData b = gen_target_matching(2);
    // 64 first tokens collide with probability 10^-64.
    CHECK(a.train.inputs[0].col(0) != b.train.inputs[0].col(0));
    CHECK(a.frozen.params != b.frozen.params);
    CHECK(gen_target_matching(1).train.inputs[0] == a.train.inputs[0]);
  }

  TEST_CASE("targets without residual have u = 0; validation sets are separate draws") {
    ExperimentConfig c;
    c.model.channels = 3;
    c.target.layers = 2;
    c.target.residual = false;
    c.data.train_sequences = 2;
    c.data.val_sequences = 3;
    c.data.length = 5;
    const TaskData d = gen_target_matching(c, 4);
    CHECK(d.target.param("layers.1.u").max_abs() == 0.0);
    CHECK(d.train.size() == 2);
    CHECK(d.val.size() == 3);
    CHECK(d.val.inputs[0] != d.train.inputs[0]);
    CHECK(evaluate(AdaptedModel(d.target), d.val, Metric::mse) == 0.0);
  }

  TEST_CASE("toy classification labels are balanced and deterministic") {
    ExperimentConfig c;
    c.task = TaskKind::toy_classification;
    c.model.channels = 4;
    c.model.classes = 2;
    c.train.loss = LossKind::cross_entropy;
    c.data.train_sequences = 20;
    c.data.val_sequences = 10;
    c.data.length = 8;
    const TaskData d = generate_task(c, 7);
    CHECK(d.train.size() == 20);
    CHECK(d.val.size() == 10);
    const auto ones = std::count(d.train.labels.begin(), d.train.labels.end(), 1) +
                      std::count(d.val.labels.begin(), d.val.labels.end(), 1);
    CHECK(ones == 15);
    CHECK(generate_task(c, 7).train.labels == d.train.labels);
    c.task = TaskKind::oracle_suite;
    CHECK_THROWS(generate_task(c, 7));
  }
}

TEST_SUITE("metrics") {
  TEST_CASE("a single row round-trips through the parser") {
    MetricsTable t;
    t.rows.push_back({"sdlora", 2, "sdlora", 26.6484, 0.00258461, 0.0});
    const std::string text = format_metrics(t);
    CHECK(text == "run_id,seed,adapter,trainable_pct,best_metric,seconds\nsdlora,2,sdlora,26.6484,0.00258461,0\n");
    CHECK(parse_metrics(text).rows == t.rows);
  }

  TEST_CASE("floats carry six significant digits and lines end in LF") {
    MetricsTable t;
    t.rows.push_back({"a", 0, "a", 100.0 / 3.0, 1.0 / 7.0, 12345678.9});
    const std::string text = format_metrics(t);
    CHECK(text.find("33.3333,0.142857,1.23457e+07\n") != std::string::npos);
    CHECK(text.find('\r') == std::string::npos);
    const MetricsRow back = parse_metrics(text).rows[0];
    CHECK(format_float(back.trainable_pct) == format_float(t.rows[0].trainable_pct));
  }

  TEST_CASE("invalid tables are rejected") {
    MetricsTable t;
    CHECK_THROWS(format_metrics(t));
    t.rows.push_back({"a", 0, "a", 1, 1, 0});
    t.rows.push_back({"a", 0, "a", 2, 2, 0});
    CHECK_THROWS_WITH(format_metrics(t), doctest::Contains("duplicate"));
    t.rows.back().seed = 1;
    CHECK_NOTHROW(format_metrics(t));
    t.rows.back().adapter = "x,y";
    CHECK_THROWS(format_metrics(t));
  }

  TEST_CASE("malformed files name the line") {
    CHECK_THROWS_WITH(parse_metrics("run_id,seed\n"), doctest::Contains("line 1"));
    CHECK_THROWS_WITH(parse_metrics(std::string(kMetricsHeader) + "\na,0,a,1,1\n"), doctest::Contains("line 2"));
    CHECK_THROWS_WITH(parse_metrics(std::string(kMetricsHeader) + "\na,0,a,1,1,0\nb,x,b,1,1,0\n"),
                      doctest::Contains("line 3"));
  }

  TEST_CASE("a 30-row sweep file loads into the plot without loss") {
    MetricsTable t;
    const char* names[] = {"full", "lora_proj", "sdlora"};
    for (int a = 0; a < 3; ++a) {
      for (std::uint64_t s = 0; s < 10; ++s) {
        t.rows.push_back({names[a], s, names[a], 10.0 * (a + 1) + 0.1 * static_cast<double>(s),
                          std::pow(10.0, -1.0 - a) * (1.0 + 0.01 * static_cast<double>(s)), 0.0});
      }
    }
    const fs::path dir = scratch("metrics30");
    emit_metrics(t, dir / "m.csv");
    const MetricsTable back = read_metrics(dir / "m.csv");
    REQUIRE(back.rows.size() == 30);
    for (std::size_t i = 0; i < 30; ++i) {
      CHECK(back.rows[i].run_id == t.rows[i].run_id);
      CHECK(format_float(back.rows[i].best_metric) == format_float(t.rows[i].best_metric));
    }
    const std::string svg = render_svg(back);
    CHECK(count_of(svg, "<circle") == 30);
    CHECK(count_of(svg, "<polyline") == 3);
  }
}

TEST_SUITE("plot") {
  TEST_CASE("one point gives one marker, a legend and axis labels") {
    MetricsTable t;
    t.rows.push_back({"sdlora", 0, "sdlora", 28.0, 1e-4, 0.0});
    const std::string svg = render_svg(t);
    CHECK(count_of(svg, "<circle") == 1);
    CHECK(svg.find("<svg") != std::string::npos);
    CHECK(svg.find(">sdlora</text>") != std::string::npos);
    CHECK(svg.find("Trainable parameters") != std::string::npos);
    CHECK(svg.find("log scale") != std::string::npos);
    CHECK(svg.find("http://www.w3.org/2000/svg") != std::string::npos);
    CHECK(svg.find("href") == std::string::npos);
  }

  TEST_CASE("x positions are monotone in trainable percent") {
    MetricsTable t;
    const double pct[] = {5.0, 90.0, 26.6, 0.0, 50.0};
    for (std::size_t i = 0; i < 5; ++i) t.rows.push_back({"r" + std::to_string(i), 0, "r" + std::to_string(i), pct[i], 0.5, 0.0});
    const std::string svg = render_svg(t);
    std::regex cx("<circle cx=\"([0-9.]+)\"");
    std::vector<double> xs;
    for (auto it = std::sregex_iterator(svg.begin(), svg.end(), cx); it != std::sregex_iterator(); ++it) {
      xs.push_back(std::stod((*it)[1]));
    }
    REQUIRE(xs.size() == 5);
    for (std::size_t i = 0; i < 5; ++i) {
      for (std::size_t j = 0; j < 5; ++j) {
        if (pct[i] < pct[j]) CHECK(xs[i] < xs[j]);
      }
    }
  }

  TEST_CASE("log scale rejects nonpositive values naming the row") {
    MetricsTable t;
    t.rows.push_back({"a", 0, "a", 1.0, 0.1, 0.0});
    t.rows.push_back({"b", 4, "b", 2.0, 0.0, 0.0});
    CHECK_THROWS_WITH(render_svg(t), doctest::Contains("row 2 (b, seed 4)"));
    PlotOptions linear;
    linear.log_y = false;
    CHECK(count_of(render_svg(t, linear), "<circle") == 2);
    CHECK_THROWS(render_svg(MetricsTable{}));
  }

  TEST_CASE("text is escaped") {
    MetricsTable t;
    t.rows.push_back({"a<b>&", 0, "a<b>&", 1.0, 0.1, 0.0});
    CHECK(render_svg(t).find("a&lt;b&gt;&amp;") != std::string::npos);
  }

  TEST_CASE("plot_svg reports unwritable paths") {
    MetricsTable t;
    t.rows.push_back({"a", 0, "a", 1.0, 0.1, 0.0});
    CHECK_THROWS_WITH(plot_svg(t, "/nonexistent/dir/p.svg"), doctest::Contains("/nonexistent/dir/p.svg"));
  }
}

TEST_SUITE("checkpoint") {
  TEST_CASE("save, load, save gives identical bytes and values") {
    const TaskData d = gen_target_matching(3);
    const fs::path dir = scratch("ckpt");
    ParamMap params = d.frozen.params;
    params["special"] = Tensor(Shape{4}, std::vector<double>{-0.0, 1e-310, std::numeric_limits<double>::infinity(),
                                                              std::numeric_limits<double>::quiet_NaN()});
    checkpoint_save(params, dir / "a.ckpt");
    ParamMap loaded = checkpoint_read(dir / "a.ckpt");
    checkpoint_save(loaded, dir / "b.ckpt");
    CHECK(slurp(dir / "a.ckpt") == slurp(dir / "b.ckpt"));
    REQUIRE(loaded.size() == params.size());
    for (const auto& [name, t] : params) {
      REQUIRE(loaded.contains(name));
      CHECK(loaded[name].shape() == t.shape());
      CHECK(std::memcmp(loaded[name].data().data(), t.data().data(), 8 * t.size()) == 0);
    }
    ParamMap into = params;
    for (auto& [n, t] : into) t = Tensor::zeros_like(t);
    checkpoint_load(into, dir / "a.ckpt");
    CHECK(checkpoint_bytes(into) == checkpoint_bytes(params));
  }

  TEST_CASE("the frozen target-matching model is 8 bytes per value plus the header") {
    const TaskData d = gen_target_matching(0);
    const std::string bytes = checkpoint_bytes(d.frozen.params);
    std::size_t values = 0, header = 8 + 8;
    for (const auto& [name, t] : d.frozen.params) {
      values += t.size();
      header += 4 + name.size() + 4 + 8 * t.rank() + 8;
    }
    // 5824 model parameters per layer plus the zero initial states (64 x 8 per layer).
    CHECK(d.frozen.total_params() == 23296);
    CHECK(values == 23296 + 4 * 512);
    CHECK(bytes.size() == 8 * values + header);
    CHECK(header < 2048);
  }

  TEST_CASE("loading into a mismatched model names the first mismatch") {
    const fs::path dir = scratch("ckpt_mismatch");
    ParamMap params{{"layers.0.W", Tensor(Shape{2, 2}, 1.0)}, {"layers.0.b", Tensor(Shape{2, 1}, 2.0)}};
    checkpoint_save(params, dir / "m.ckpt");

    ParamMap renamed{{"layers.0.W", Tensor(Shape{2, 2})}, {"layers.0.bias", Tensor(Shape{2, 1})}};
    CHECK_THROWS_WITH_AS(checkpoint_load(renamed, dir / "m.ckpt"), doctest::Contains("'layers.0.b'"),
                         CheckpointError);
    ParamMap reshaped{{"layers.0.W", Tensor(Shape{2, 3})}, {"layers.0.b", Tensor(Shape{2, 1})}};
    CHECK_THROWS_WITH_AS(checkpoint_load(reshaped, dir / "m.ckpt"), doctest::Contains("layers.0.W"),
                         CheckpointError);
    ParamMap fewer{{"layers.0.W", Tensor(Shape{2, 2})}};
    CHECK_THROWS_WITH_AS(checkpoint_load(fewer, dir / "m.ckpt"), doctest::Contains("layers.0.b"), CheckpointError);
    CHECK(fewer.at("layers.0.W").max_abs() == 0.0);
  }

  TEST_CASE("corrupt files are rejected") {
    const std::string good = checkpoint_bytes({{"x", Tensor(Shape{3}, 1.0)}});
    CHECK_NOTHROW(checkpoint_parse(good));
    CHECK_THROWS_WITH_AS(checkpoint_parse(good.substr(0, good.size() - 1)), doctest::Contains("payload"),
                         CheckpointError);
    CHECK_THROWS_WITH_AS(checkpoint_parse(good.substr(0, 12)), doctest::Contains("truncated"), CheckpointError);
    std::string bad_magic = good;
    bad_magic[0] = 'X';
    CHECK_THROWS_WITH_AS(checkpoint_parse(bad_magic), doctest::Contains("magic"), CheckpointError);
    // Offset field of the only entry sits right before the payload.
    std::string bad_offset = good;
    bad_offset[good.size() - 24 - 8] = 1;
    CHECK_THROWS_WITH_AS(checkpoint_parse(bad_offset), doctest::Contains("offset"), CheckpointError);
    CHECK_THROWS_WITH_AS(checkpoint_read("/nonexistent/x.ckpt"), doctest::Contains("/nonexistent/x.ckpt"),
                         CheckpointError);
  }
}

TEST_SUITE("experiment") {
  TEST_CASE("a sweep writes one row per adapter and seed with consistent accounting") {
    const fs::path dir = scratch("sweep");
    const ExperimentConfig c = tiny_sweep(dir / "out");
    const ExperimentResult r = run_experiment(c, RunOptions{true, true, {}});
    REQUIRE(r.table.rows.size() == 8);
    CHECK(r.runs.size() == 2 * (1 + 3 * 2));
    CHECK(fs::exists(dir / "out" / "metrics.csv"));
    CHECK(fs::exists(dir / "out" / "lr_sweep.csv"));
    CHECK(fs::exists(dir / "out" / "plot.svg"));
    CHECK(parse_config(slurp(dir / "out" / "config.json")) == c);
    CHECK(read_metrics(dir / "out" / "metrics.csv").rows.size() == 8);

    // Rows are grouped by adapter; trainable % follows an independent count.
    // Per layer: W 16, beta 4, u 4, a b c 3 x 4 x 4, log_dt 4.
    const double total = 2.0 * (16 + 4 + 4 + 48 + 4);
    std::map<std::string, double> expected{{"frozen", 0.0}, {"full", 100.0}, {"lora_proj", 100.0 * 2 * 2 * 8 / total}};
    for (std::size_t i = 0; i < r.table.rows.size(); ++i) {
      const MetricsRow& row = r.table.rows[i];
      CHECK(row.seed == c.seeds[i % 2]);
      CHECK(row.seconds == 0.0);
      if (expected.contains(row.adapter)) CHECK(format_float(row.trainable_pct) == format_float(expected[row.adapter]));
    }

    // Full fine-tuning improves on the frozen model for every seed.
    for (std::size_t s = 0; s < 2; ++s) CHECK(r.table.rows[2 + s].best_metric < r.table.rows[s].best_metric);

    // Each row's checkpoint evaluates to the row's metric.
    for (const MetricsRow& row : r.table.rows) {
      const fs::path ck = dir / "out" / "checkpoints" / (row.run_id + "_seed" + std::to_string(row.seed) + ".ckpt");
      REQUIRE(fs::exists(ck));
      const TaskData d = generate_task(c, row.seed);
      StackedModel m = d.frozen;
      checkpoint_load(m.params, ck);
      CHECK(evaluate(AdaptedModel(m), d.val, Metric::mse) == doctest::Approx(row.best_metric).epsilon(1e-9));
    }
  }

  TEST_CASE("results do not depend on the worker count and repeat byte for byte") {
    const fs::path dir = scratch("determinism");
    ExperimentConfig c = tiny_sweep(dir / "a");
    c.train.iterations = 15;
    run_experiment(c);
    c.output_dir = (dir / "b").string();
    c.workers = 3;
    run_experiment(c);
    CHECK(slurp(dir / "a" / "metrics.csv") == slurp(dir / "b" / "metrics.csv"));
    CHECK(slurp(dir / "a" / "lr_sweep.csv") == slurp(dir / "b" / "lr_sweep.csv"));
    for (const auto& entry : fs::directory_iterator(dir / "a" / "checkpoints")) {
      CHECK(slurp(entry.path()) == slurp(dir / "b" / "checkpoints" / entry.path().filename()));
    }
  }

  TEST_CASE("the best learning rate per adapter is kept") {
    ExperimentConfig c = tiny_sweep(scratch("best_lr"));
    c.train.iterations = 10;
    c.seeds = {0};
    const ExperimentResult r = run_experiment(c, RunOptions{false, false, {}});
    for (const MetricsRow& row : r.table.rows) {
      double best = std::numeric_limits<double>::infinity();
      for (const RunDetail& d : r.runs) {
        if (d.adapter == row.adapter) best = std::min(best, d.best_metric);
      }
      CHECK(row.best_metric == best);
    }
  }

  TEST_CASE("progress reports every run in order") {
    ExperimentConfig c = tiny_sweep(scratch("progress"));
    c.train.iterations = 2;
    c.seeds = {0};
    std::vector<std::string> seen;
    run_experiment(c, RunOptions{false, false, [&](const RunDetail& d) { seen.push_back(d.adapter); }});
    CHECK(seen == std::vector<std::string>{"frozen", "full", "full", "lora_proj", "lora_proj", "sdlora", "sdlora"});
  }

  TEST_CASE("toy classification trains with cross-entropy") {
    ExperimentConfig c;
    c.task = TaskKind::toy_classification;
    c.model.layers = 1;
    c.model.channels = 4;
    c.model.states = 2;
    c.model.classes = 2;
    c.target.states = 2;
    c.data.train_sequences = 16;
    c.data.length = 8;
    c.train.loss = LossKind::cross_entropy;
    c.train.iterations = 30;
    c.train.batch_size = 16;
    c.train.learning_rate = 5e-2;
    c.adapters.push_back({"frozen", std::nullopt, {}});
    c.adapters.push_back({"full", FullSpec{}, {}});
    const ExperimentResult r = run_experiment(c, RunOptions{false, false, {}});
    REQUIRE(r.table.rows.size() == 2);
    CHECK(r.table.rows[1].best_metric >= r.table.rows[0].best_metric);
    CHECK(r.table.rows[1].best_metric <= 1.0);
  }

  TEST_CASE("the oracle suite writes one row per oracle and seed") {
    const fs::path dir = scratch("oracles");
    ExperimentConfig c;
    c.task = TaskKind::oracle_suite;
    c.oracle.names = {"scan_conv", "essential"};
    c.oracle.trials = 3;
    c.seeds = {1, 2};
    c.output_dir = dir.string();
    const ExperimentResult r = run_experiment(c);
    CHECK(r.table.rows.size() == 4);
    CHECK(r.oracle_reports.size() == 12);
    CHECK(r.oracle_failures() == 0);
    CHECK(fs::exists(dir / "oracle_report.txt"));
  }

  TEST_CASE("I/O failures name the path") {
    const fs::path dir = scratch("io");
    std::ofstream(dir / "file") << "x";
    ExperimentConfig c = tiny_sweep(dir / "file" / "out");
    c.train.iterations = 1;
    const std::string bad = (dir / "file" / "out").string();
    CHECK_THROWS_WITH(run_experiment(c), doctest::Contains(bad.c_str()));
  }

  TEST_CASE("checkpoint parameters fold adapters into the model") {
    const TaskData d = gen_target_matching(0);
    RngStream rng(0, 1);
    AdaptedModel prompt = build_adapter(d.frozen, PromptTuningSpec{2}, rng);
    const ParamMap p = checkpoint_params(prompt);
    CHECK(p.contains("adapter.prompt"));
    CHECK(p.size() == d.frozen.params.size() + 1);
    LoRASpec lora;
    AdaptedModel l = build_adapter(d.frozen, lora, rng);
    CHECK(checkpoint_params(l).size() == d.frozen.params.size());
  }
}
