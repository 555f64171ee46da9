// Copyright 2026 The ssmtune Authors.
// SPDX-License-Identifier: Apache-2.0

// Acceptance suite: one PASS/FAIL line per criterion, exit 1 if any fails.
// Usage: ssmtune_acceptance <ssmtune binary> <acceptance config> <work dir>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <sys/wait.h>

#include "ssmtune/harness/config.hpp"
#include "ssmtune/harness/data.hpp"
#include "ssmtune/harness/metrics.hpp"
#include "ssmtune/num/gradcheck.hpp"
#include "ssmtune/peft/sdlora.hpp"
#include "ssmtune/theory/oracles.hpp"

using namespace ssmtune;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  const char* title;
  double time_limit_s;  // 0 means no limit
  std::function<Outcome()> run;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string sci(double v) { return fmt("%.2e", v); }

double worst_of(const std::vector<OracleReport>& reports, std::size_t* failures) {
  double w = 0.0;
  for (const auto& r : reports) {
    w = std::max(w, r.discrepancy);
    if (!r.pass()) ++*failures;
  }
  return w;
}

std::vector<double> randn(RngStream& rng, std::size_t n) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal(0.0, 1.0);
  return v;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// ---- 1 ----

Outcome scan_conv() {
  std::size_t failures = 0;
  const auto reports = run_oracle("scan_conv", 2026, 200);
  const double worst = worst_of(reports, &failures);
  return {failures == 0 && reports.size() == 200,
          "200 channels, H in 1..16, N in 1..256, worst relative diff " + sci(worst) + " (limit 1e-9)"};
}

// ---- 2 ----

GradCheckResult model_grad_check(const ModelArch& arch, StackedModel m, RngStream& rng, std::size_t N) {
  ParamMap params;
  for (const auto& [name, t] : m.params) {
    if (!is_initial_state(name)) params[name] = t;
  }
  const Tensor x = rng_draw(rng, Normal{}, {arch.channels, N});
  const Tensor target = rng_draw(rng, Normal{}, {arch.channels, N});
  auto build = [&](Graph& g) {
    ParamFn fn = [&](const std::string& name) {
      return g.has_parameter(name) ? g.parameter_expr(name) : g.constant(m.param(name));
    };
    return mse(model_forward(g, arch, fn, g.constant(x)).tokens, g.constant(target));
  };
  return grad_check_detailed(build, params, 1e-5);
}

Outcome gradients() {
  RngStream rng(2026, 2);
  ModelArch s4;
  s4.layers = 2;
  s4.channels = 8;
  s4.states = 8;
  s4.activations.assign(2, Activation::relu);
  StackedModel m4 = init_model(s4, rng);
  // Slow, well-excited states: with the default a_h = -(h+1) the fast states'
  // gradients fall to ~1e-8, where central differences are pure roundoff.
  for (std::size_t i = 0; i < s4.layers; ++i) {
    m4.param(layer_param(i, "log_dt")) = rng_draw(rng, Uniform{std::log(0.05), std::log(0.5)}, {8, 1});
    m4.param(layer_param(i, "a")) = rng_draw(rng, Uniform{-1.5, -0.2}, {8, 8});
    m4.param(layer_param(i, "b")) = rng_draw(rng, Normal{0.0, 1.0}, {8, 8});
    m4.param(layer_param(i, "c")) = rng_draw(rng, Normal{0.0, 0.5}, {8, 8});
  }
  const GradCheckResult r4 = model_grad_check(s4, m4, rng, 32);

  ModelArch s6;
  s6.layers = 1;
  s6.channels = 8;
  s6.states = 4;
  s6.dt_rank = 2;
  s6.kind = LayerKind::s6;
  s6.activations.assign(1, Activation::linear);
  const GradCheckResult r6 = model_grad_check(s6, init_model(s6, rng), rng, 32);
  auto where = [](const GradCheckResult& r) {
    return sci(r.max_rel_error) + " at " + r.worst_param + "[" + std::to_string(r.worst_index) + "]";
  };
  return {r4.max_rel_error <= 1e-4 && r6.max_rel_error <= 1e-4,
          "deep S4 (L=2 D=8 H=8 N=32) " + where(r4) + ", S6 (D=8 H=4 r=2) " + where(r6) +
              " (limit 1e-4, eps 1e-5)"};
}

// ---- 3 ----

Outcome prefix_state() {
  std::size_t fwd_fail = 0, reach_fail = 0;
  const double fwd = worst_of(run_oracle("prefix_state", 2026, 1000), &fwd_fail);
  const auto reach = run_oracle("reachability", 2026, 1000);
  worst_of(reach, &reach_fail);
  return {fwd_fail == 0 && reach_fail == 0,
          "1000 prefixes, worst suffix diff " + sci(fwd) + " (limit 1e-9); reachability verdict == (M >= H) on " +
              std::to_string(1000 - reach_fail) + "/1000"};
}

// ---- 4 ----

Outcome win_hat() {
  std::size_t failures = 0;
  const double worst = worst_of(run_oracle("win_hat", 2026, 100), &failures);
  return {failures == 0, "100 instances with D >= 2H + r, worst induced-sequence diff " + sci(worst) + " (limit 1e-9)"};
}

// ---- 5 ----

// Exhaustive search written from the objective alone.
std::size_t brute_force_min(const ChannelParams& f, const ChannelParams& t, ParamSpace space) {
  const std::size_t H = f.states(), Hs = t.states();
  const DiscreteChannel fd = f.discrete(space);
  std::vector<std::size_t> p(H);
  std::iota(p.begin(), p.end(), 0);
  std::size_t best = SIZE_MAX;
  do {
    std::size_t cost = 0;
    for (std::size_t i = 0; i < H; ++i) {
      const std::size_t j = p[i];
      if (i < Hs) {
        cost += std::abs(f.a[j] - t.a[i]) > 1e-12;
        cost += std::abs(f.b[j] * f.c[j] - t.b[i] * t.c[i]) > 1e-12;
      } else {
        cost += fd.b_bar[j] * fd.c[j] != 0.0;
      }
    }
    best = std::min(best, cost);
  } while (std::next_permutation(p.begin(), p.end()));
  return best;
}

Outcome essential() {
  RngStream rng(2026, 5);
  std::size_t instances = 0, count_mismatch = 0;
  double worst = 0.0;
  for (std::size_t H = 1; H <= 5; ++H) {
    for (std::size_t Hs = 1; Hs <= H; ++Hs) {
      for (int trial = 0; trial < 50; ++trial, ++instances) {
        const auto space = static_cast<ParamSpace>(trial % 3);
        const ChannelParams f = random_essential_frozen(rng, H, space);
        const ChannelParams t = random_essential_target(rng, f, Hs, space);
        const EssentialUpdate u = essential_param_count(f, t, space);
        count_mismatch += u.count != brute_force_min(f, t, space);
        const auto x = randn(rng, 32);
        const auto yu = s4_scan(u.updated.discrete(space), x, std::vector<double>(H, 0.0)).y;
        const auto yt = s4_scan(t.discrete(space), x, std::vector<double>(Hs, 0.0)).y;
        for (std::size_t n = 0; n < x.size(); ++n) worst = std::max(worst, std::abs(yu[n] - yt[n]));
      }
    }
  }
  return {count_mismatch == 0 && worst <= 1e-9,
          std::to_string(instances) + " instances over 15 (H, H*) pairs, " + std::to_string(count_mismatch) +
              " count mismatches vs exhaustive search, worst output diff " + sci(worst) + " (limit 1e-9)"};
}

// ---- 6 ----

Outcome sdt_embedding() {
  const SdtShape shapes[] = {{2, 2, 4, 1, 2}, {4, 8, 4, 2, 2}, {4, 64, 8, 1, 4}};
  double worst = 0.0;
  std::size_t eq_fail = 0, budget_fail = 0, instances = 0;
  std::string first_violation;
  for (const SdtShape& s : shapes) {
    for (std::size_t t = 0; t < 3; ++t, ++instances) {
      RngStream rng(2026, 60 + instances);
      const auto reports = sdt_embedding_trial(rng, 2026, t, s, 5);
      worst = std::max(worst, reports[0].discrepancy);
      eq_fail += !reports[0].pass();
      if (!reports[1].pass()) {
        ++budget_fail;
        if (first_violation.empty()) first_violation = reports[1].instance;
      }
    }
  }
  std::string detail = std::to_string(instances) + " instances on 3 shapes, worst output diff " + sci(worst) +
                       " (limit 1e-8, " + std::to_string(eq_fail) + " failing); budget exceeded on " +
                       std::to_string(budget_fail) + "/" + std::to_string(instances);
  if (!first_violation.empty()) detail += " [" + first_violation + "]";
  return {eq_fail == 0 && budget_fail == 0, detail};
}

// ---- 7, 8, 9 ----

struct BenchRun {
  int exit_code = -1;
  double seconds = 0.0;
  fs::path dir;
};

BenchRun run_bench(const std::string& cli, const std::string& config, const fs::path& dir) {
  fs::remove_all(dir);
  fs::create_directories(dir);
  const std::string cmd = "'" + cli + "' bench '" + config + "' -o '" + dir.string() + "' -q > '" +
                          (dir / "bench.log").string() + "' 2>&1";
  const auto start = std::chrono::steady_clock::now();
  const int status = std::system(cmd.c_str());
  BenchRun r;
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.dir = dir;
  return r;
}

const MetricsRow* find_row(const MetricsTable& t, const std::string& adapter, std::uint64_t seed) {
  for (const auto& r : t.rows) {
    if (r.adapter == adapter && r.seed == seed) return &r;
  }
  return nullptr;
}

std::string first_of_kind(const ExperimentConfig& cfg, const std::string& kind,
                          const std::function<bool(const AdapterSpec&)>& extra = {}) {
  for (const auto& a : cfg.adapters) {
    if (a.spec && adapter_kind(*a.spec) == kind && (!extra || extra(*a.spec))) return a.name;
  }
  return "";
}

Outcome synthetic_experiment(const ExperimentConfig& cfg, const BenchRun& bench) {
  if (bench.exit_code != 0) return {false, "bench exited " + std::to_string(bench.exit_code)};
  if (!fs::exists(bench.dir / "plot.svg")) return {false, "bench wrote no plot.svg"};
  const MetricsTable t = read_metrics(bench.dir / "metrics.csv");
  const std::string full = first_of_kind(cfg, "full");
  const std::string sd = first_of_kind(cfg, "sdlora");
  const std::string lora = first_of_kind(cfg, "lora", [](const AdapterSpec& s) {
    return std::get<LoRASpec>(s).targets == std::vector<std::string>{"W"};
  });
  std::string frozen;
  for (const auto& a : cfg.adapters) {
    if (!a.spec) frozen = a.name;
  }
  if (full.empty() || sd.empty() || lora.empty() || frozen.empty()) {
    return {false, "config lacks a frozen, full, sdlora or projection-only LoRA adapter"};
  }
  std::size_t a_ok = 0, b_ok = 0;
  std::string per_seed;
  for (std::uint64_t seed : cfg.seeds) {
    const MetricsRow *f = find_row(t, frozen, seed), *u = find_row(t, full, seed), *s = find_row(t, sd, seed),
                     *l = find_row(t, lora, seed);
    if (!f || !u || !s || !l) return {false, "metrics.csv misses a row for seed " + std::to_string(seed)};
    const bool a = u->best_metric * 100.0 <= f->best_metric;
    const bool matched = std::abs(l->trainable_pct - s->trainable_pct) <= 0.1 * s->trainable_pct;
    const bool b = s->trainable_pct <= 30.0 && s->best_metric <= 1.5 * u->best_metric && matched &&
                   s->best_metric < l->best_metric;
    a_ok += a;
    b_ok += b;
    per_seed += " seed " + std::to_string(seed) + ": frozen " + sci(f->best_metric) + " full " +
                sci(u->best_metric) + " sdlora " + sci(s->best_metric) + " (" + fmt("%.2f", s->trainable_pct) +
                "%) lora_proj " + sci(l->best_metric) + " (" + fmt("%.2f", l->trainable_pct) + "%);";
  }
  const std::size_t n = cfg.seeds.size();
  return {a_ok == n && b_ok * 3 >= n * 2,
          "(a) full >= 100x below frozen on " + std::to_string(a_ok) + "/" + std::to_string(n) +
              " seeds, (b) sdlora conditions on " + std::to_string(b_ok) + "/" + std::to_string(n) + ";" + per_seed +
              " bench " + fmt("%.0f", bench.seconds) + " s"};
}

// Trainable count of one configured adapter, from shapes and the mask alone.
std::size_t enumerate_trainables(const ExperimentConfig& cfg, const NamedAdapter& a, std::uint64_t seed) {
  const ModelArch& arch = cfg.model;
  const std::size_t L = arch.layers, D = arch.channels, H = arch.states;
  const std::size_t per_layer = 3 * D * H + 3 * D + D * D;
  if (!a.spec) return 0;
  if (std::holds_alternative<FullSpec>(*a.spec)) return L * per_layer;
  if (const auto* lo = std::get_if<LoRASpec>(&*a.spec)) {
    std::size_t n = 0;
    for (const auto& field : lo->targets) {
      const std::size_t cols = field == "W" ? D : H;
      n += L * lo->rank * (D + cols);
    }
    return n;
  }
  if (const auto* sd = std::get_if<SDLoRASpec>(&*a.spec)) {
    const TaskData data = generate_task(cfg, seed);
    const DimensionMask mask = sdlora_select(data.frozen, data.train, *sd, cfg.train.loss, seed);
    std::size_t n = 0;
    for (const LayerMask& lm : mask.layers) {
      std::size_t pairs = 0;
      for (const auto& [d, hs] : lm.trainable_states) pairs += hs.size();
      n += 3 * pairs + lm.trainable_channels.size();
      n += sd->sparse_projection ? lm.trainable_channels.size() * D : sd->proj_lora_rank * 2 * D;
      if (sd->tune_residual_bias) n += 2 * D;
    }
    return n;
  }
  return SIZE_MAX;
}

double lora_merge_worst() {
  RngStream rng(2026, 8);
  ModelArch arch;
  arch.layers = 2;
  arch.channels = 16;
  arch.states = 4;
  const StackedModel model = init_model(arch, rng);
  AdaptedModel a = build_adapter(model, LoRASpec{{"W"}, 4, 8.0, 0.0}, rng);
  double worst = 0.0;
  for (int draw = 0; draw < 50; ++draw) {
    for (auto& [name, t] : a.trainable()) t = rng_draw(rng, Normal{0.0, 0.3}, t.shape());
    const Tensor x = rng_draw(rng, Normal{0.0, 1.0}, {16, 24});
    Graph g;
    const Tensor adapted = a.forward(g, x).tokens.value();
    worst = std::max(worst, max_abs_diff(adapted, model_tokens(a.merged(), x)));
  }
  return worst;
}

Outcome accounting(const ExperimentConfig& cfg, const BenchRun& bench) {
  RngStream rng(2026, 80);
  ModelArch one;
  one.layers = 1;
  one.channels = 64;
  one.states = 8;
  const AdaptedModel r8 = build_adapter(init_model(one, rng), LoRASpec{{"layers.0.W"}, 8, 8.0, 0.0}, rng);
  const bool count_ok = r8.trainable_count() == 1024;

  std::size_t rows = 0, mismatches = 0;
  std::string first_bad;
  if (bench.exit_code == 0) {
    const std::size_t total = cfg.model.layers * (3 * cfg.model.channels * cfg.model.states +
                                                  3 * cfg.model.channels + cfg.model.channels * cfg.model.channels);
    // Compare the CSV text itself so formatting is checked to the last digit.
    std::istringstream csv(read_file(bench.dir / "metrics.csv"));
    std::string line;
    std::getline(csv, line);
    while (std::getline(csv, line)) {
      std::vector<std::string> f;
      std::stringstream ls(line);
      for (std::string cell; std::getline(ls, cell, ',');) f.push_back(cell);
      const auto it = std::find_if(cfg.adapters.begin(), cfg.adapters.end(),
                                   [&](const NamedAdapter& a) { return a.name == f[2]; });
      const std::size_t n = enumerate_trainables(cfg, *it, std::stoull(f[1]));
      const std::string expected = fmt("%.6g", 100.0 * static_cast<double>(n) / static_cast<double>(total));
      ++rows;
      if (f[3] != expected) {
        ++mismatches;
        if (first_bad.empty()) first_bad = " [" + f[0] + " seed " + f[1] + ": " + f[3] + " vs " + expected + "]";
      }
    }
  }
  const double merge_worst = lora_merge_worst();
  return {count_ok && rows > 0 && mismatches == 0 && merge_worst <= 1e-12,
          "rank-8 LoRA on 64x64 adds " + std::to_string(r8.trainable_count()) + " (want 1024); " +
              std::to_string(rows - mismatches) + "/" + std::to_string(rows) +
              " sweep rows match the enumerated trainable %" + first_bad + "; merge vs adapter forward " +
              sci(merge_worst) + " (limit 1e-12)"};
}

Outcome determinism(const BenchRun& first, const BenchRun& second) {
  if (first.exit_code != 0 || second.exit_code != 0) return {false, "a bench run failed"};
  const std::string a = read_file(first.dir / "metrics.csv"), b = read_file(second.dir / "metrics.csv");
  return {!a.empty() && a == b, "metrics.csv " + std::to_string(a.size()) + " bytes, " +
                                    (a == b ? "byte-identical" : "differs") + " across two bench runs (second " +
                                    fmt("%.0f", second.seconds) + " s)"};
}

}  // namespace

int main(int argc, char** argv) {
  if (argc != 4) {
    std::fprintf(stderr, "usage: %s <ssmtune binary> <acceptance config> <work dir>\n", argv[0]);
    return 2;
  }
  const std::string cli = argv[1], config_path = argv[2];
  const fs::path work = argv[3];
  ExperimentConfig cfg;
  try {
    cfg = load_config(config_path);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "%s\n", e.what());
    return 2;
  }

  BenchRun first, second;
  const std::vector<Criterion> criteria = {
      {1, "scan/convolution equivalence", 10, scan_conv},
      {2, "gradient correctness", 60, gradients},
      {3, "prefix tuning and initial states", 30, prefix_state},
      {4, "input-projection update for S6", 30, win_hat},
      {5, "essential parameter count", 120, essential},
      {6, "deep S4 embedding", 120, sdt_embedding},
      {7, "synthetic target-matching sweep", 900,
       [&] {
         first = run_bench(cli, config_path, work / "run1");
         return synthetic_experiment(cfg, first);
       }},
      {8, "adapter accounting", 10, [&] { return accounting(cfg, first); }},
      {9, "determinism", 0,
       [&] {
         second = run_bench(cli, config_path, work / "run2");
         return determinism(first, second);
       }},
  };

  int failed = 0;
  for (const Criterion& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (c.time_limit_s > 0 && secs > c.time_limit_s) {
      o.pass = false;
      o.detail += "; exceeded " + fmt("%.0f", c.time_limit_s) + " s";
    }
    failed += !o.pass;
    std::printf("%s %d %s: %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", c.id, c.title, o.detail.c_str(), secs);
    std::fflush(stdout);
  }
  std::printf("acceptance: %d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
