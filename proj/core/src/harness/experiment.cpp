// Copyright 2026 The ssmtune Authors.
// SPDX-License-Identifier: Apache-2.0

#include "ssmtune/harness/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <exception>
#include <fstream>
#include <mutex>
#include <thread>

#include "ssmtune/harness/checkpoint.hpp"
#include "ssmtune/harness/plot.hpp"
#include "ssmtune/peft/sdlora.hpp"

namespace ssmtune {

std::size_t ExperimentResult::oracle_failures() const {
  return static_cast<std::size_t>(
      std::count_if(oracle_reports.begin(), oracle_reports.end(), [](const OracleReport& r) { return !r.pass(); }));
}

AdaptedModel build_named_adapter(const StackedModel& frozen, const NamedAdapter& adapter,
                                 std::size_t index, const Dataset& train, LossKind loss,
                                 std::uint64_t seed) {
  RngStream rng(seed, 1000 + index);
  if (!adapter.spec) return AdaptedModel(frozen);
  if (const auto* sd = std::get_if<SDLoRASpec>(&*adapter.spec)) {
    const DimensionMask mask = sdlora_select(frozen, train, *sd, loss, seed);
    return sdlora_apply(frozen, mask, *sd, rng);
  }
  return build_adapter(frozen, *adapter.spec, rng);
}

ParamMap checkpoint_params(const AdaptedModel& model) {
  ParamMap out = model.merged().params;
  for (const auto& [name, t] : model.trainable()) {
    if (model.base().params.contains(name) || name.starts_with("lora.")) continue;
    out.emplace("adapter." + name, t);
  }
  return out;
}

namespace {

struct Task {
  std::size_t seed_index;
  std::size_t adapter_index;
  std::size_t lr_index;
  double lr;
};

struct TaskOutput {
  RunDetail detail;
  ParamMap checkpoint;
};

void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create directory " + dir.string() + ": " + ec.message());
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << text;
  out.flush();
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

TaskOutput run_task(const ExperimentConfig& cfg, const Task& task, const TaskData& data, bool keep_params) {
  const NamedAdapter& named = cfg.adapters[task.adapter_index];
  const std::uint64_t seed = cfg.seeds[task.seed_index];
  TaskOutput out;
  RunDetail& d = out.detail;
  d.adapter = named.name;
  d.seed = seed;
  d.learning_rate = task.lr;

  const auto start = std::chrono::steady_clock::now();
  AdaptedModel model =
      build_named_adapter(data.frozen, named, task.adapter_index, data.train, cfg.train.loss, seed);
  d.trainable_count = model.trainable_count();
  d.trainable_pct = param_fraction(data.frozen, model);
  if (!named.spec) {
    d.best_metric = evaluate(model, data.val, default_metric(cfg.train.loss));
  } else {
    TrainConfig tc = cfg.train;
    tc.learning_rate = task.lr;
    tc.seed = seed;
    try {
      const RunResult r = train(model, data.train, data.val, tc);
      d.best_metric = r.best_metric;
      d.best_iteration = r.best_iteration;
    } catch (const TrainingError& e) {
      d.failure = e.what();
    }
  }
  d.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (keep_params && d.failure.empty()) out.checkpoint = checkpoint_params(model);
  return out;
}

ExperimentResult run_oracle_suite(const ExperimentConfig& cfg, const RunOptions& options) {
  ExperimentResult res;
  const std::vector<std::string> names = cfg.oracle.names.empty() ? oracle_names() : cfg.oracle.names;
  for (std::uint64_t seed : cfg.seeds) {
    for (const std::string& name : names) {
      const auto start = std::chrono::steady_clock::now();
      const std::vector<OracleReport> reports = run_oracle(name, seed, cfg.oracle.trials);
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      double worst = 0.0;
      for (const OracleReport& r : reports) worst = std::max(worst, r.discrepancy);
      res.oracle_reports.insert(res.oracle_reports.end(), reports.begin(), reports.end());
      res.table.rows.push_back({name, seed, name, 0.0, worst, cfg.record_timing ? secs : 0.0});
    }
  }
  if (options.write_artifacts) {
    const std::filesystem::path dir(cfg.output_dir);
    ensure_dir(dir);
    emit_metrics(res.table, dir / "metrics.csv");
    write_text(dir / "config.json", serialize_config(cfg));
    std::string log;
    for (const OracleReport& r : res.oracle_reports) log += format_report(r) + "\n";
    write_text(dir / "oracle_report.txt", log);
    res.artifacts = {dir / "metrics.csv", dir / "config.json", dir / "oracle_report.txt"};
  }
  return res;
}

std::string lr_sweep_csv(const std::vector<RunDetail>& runs, bool timing) {
  std::string s = "adapter,seed,learning_rate,trainable_count,trainable_pct,best_metric,best_iteration,seconds,status\n";
  for (const RunDetail& r : runs) {
    s += r.adapter + "," + std::to_string(r.seed) + "," + format_float(r.learning_rate) + "," +
         std::to_string(r.trainable_count) + "," + format_float(r.trainable_pct) + "," +
         (r.failure.empty() ? format_float(r.best_metric) : std::string("nan")) + "," +
         std::to_string(r.best_iteration) + "," + format_float(timing ? r.seconds : 0.0) + "," +
         (r.failure.empty() ? "ok" : "diverged") + "\n";
  }
  return s;
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& cfg, const RunOptions& options) {
  if (cfg.task == TaskKind::oracle_suite) return run_oracle_suite(cfg, options);

  const std::filesystem::path dir(cfg.output_dir);
  if (options.write_artifacts) {
    ensure_dir(dir);
    if (cfg.write_checkpoints) ensure_dir(dir / "checkpoints");
  }

  std::vector<TaskData> data;
  for (std::uint64_t seed : cfg.seeds) data.push_back(generate_task(cfg, seed));

  std::vector<Task> tasks;
  for (std::size_t s = 0; s < cfg.seeds.size(); ++s) {
    for (std::size_t a = 0; a < cfg.adapters.size(); ++a) {
      const auto grid = cfg.adapters[a].spec ? cfg.grid_for(cfg.adapters[a]) : std::vector<double>{0.0};
      for (std::size_t k = 0; k < grid.size(); ++k) tasks.push_back({s, a, k, grid[k]});
    }
  }

  // Workers pull task indices; each task owns its model copy and RNG streams,
  // so outputs depend only on the task, never on scheduling.
  const bool keep = options.write_artifacts && cfg.write_checkpoints;
  std::vector<TaskOutput> outputs(tasks.size());
  std::vector<std::exception_ptr> errors(tasks.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < tasks.size(); i = next++) {
      try {
        outputs[i] = run_task(cfg, tasks[i], data[tasks[i].seed_index], keep);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t n_workers = std::min(cfg.workers, tasks.size());
  if (n_workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  // Single collector, in task order.
  ExperimentResult res;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    if (errors[i]) std::rethrow_exception(errors[i]);
    res.runs.push_back(outputs[i].detail);
    if (options.progress) options.progress(outputs[i].detail);
  }
  const Metric metric = default_metric(cfg.train.loss);
  std::size_t i = 0;
  std::vector<std::pair<MetricsRow, std::size_t>> chosen;
  for (std::size_t s = 0; s < cfg.seeds.size(); ++s) {
    for (std::size_t a = 0; a < cfg.adapters.size(); ++a) {
      std::size_t best = tasks.size();
      for (; i < tasks.size() && tasks[i].seed_index == s && tasks[i].adapter_index == a; ++i) {
        const RunDetail& d = outputs[i].detail;
        if (!d.failure.empty()) continue;
        if (best == tasks.size() || metric_improves(metric, d.best_metric, outputs[best].detail.best_metric)) best = i;
      }
      if (best == tasks.size()) {
        throw TrainingError("every learning rate diverged for adapter '" + cfg.adapters[a].name + "' at seed " +
                                std::to_string(cfg.seeds[s]),
                            0);
      }
      const RunDetail& d = outputs[best].detail;
      chosen.push_back({{d.adapter, d.seed, d.adapter, d.trainable_pct, d.best_metric,
                         cfg.record_timing ? d.seconds : 0.0},
                        best});
    }
  }
  // Rows grouped by adapter in config order, seeds in list order.
  for (std::size_t a = 0; a < cfg.adapters.size(); ++a) {
    for (std::size_t s = 0; s < cfg.seeds.size(); ++s) res.table.rows.push_back(chosen[s * cfg.adapters.size() + a].first);
  }

  if (options.write_artifacts) {
    emit_metrics(res.table, dir / "metrics.csv");
    write_text(dir / "lr_sweep.csv", lr_sweep_csv(res.runs, cfg.record_timing));
    write_text(dir / "config.json", serialize_config(cfg));
    res.artifacts = {dir / "metrics.csv", dir / "lr_sweep.csv", dir / "config.json"};
    if (keep) {
      for (const auto& [row, task] : chosen) {
        const auto path = dir / "checkpoints" / (row.run_id + "_seed" + std::to_string(row.seed) + ".ckpt");
        checkpoint_save(outputs[task].checkpoint, path);
        res.artifacts.push_back(path);
      }
    }
    if (options.write_plot) {
      PlotOptions po;
      po.log_y = cfg.plot_log_y;
      if (metric == Metric::accuracy) {
        po.title = "Accuracy against trainable parameters";
        po.y_label = "Best validation accuracy";
      }
      plot_svg(res.table, dir / "plot.svg", po);
      res.artifacts.push_back(dir / "plot.svg");
    }
  }
  return res;
}

}  // namespace ssmtune
