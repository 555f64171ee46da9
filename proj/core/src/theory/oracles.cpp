// Copyright 2026 The ssmtune Authors.
// SPDX-License-Identifier: Apache-2.0

#include "ssmtune/theory/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>
#include <stdexcept>

#include "ssmtune/num/linalg.hpp"
#include "ssmtune/num/rng.hpp"

namespace ssmtune {

// ---- Prefixes and initial states ----

std::vector<double> prefix_to_initial_state(const DiscreteChannel& ch, const std::vector<double>& prefix) {
  if (prefix.empty()) throw std::invalid_argument("prefix length M must be >= 1");
  std::vector<double> h(ch.state_dim(), 0.0);
  for (double p : prefix)
    for (std::size_t k = 0; k < h.size(); ++k) h[k] = ch.a_bar[k] * h[k] + ch.b_bar[k] * p;
  return h;
}

Tensor reachability_matrix(const DiscreteChannel& ch, std::size_t M) {
  if (M < 1) throw std::invalid_argument("prefix length M must be >= 1");
  const std::size_t H = ch.state_dim();
  Tensor K(Shape{H, M});
  for (std::size_t h = 0; h < H; ++h) {
    double power = 1.0;
    for (std::size_t m = M; m-- > 0;) {
      K.at(h, m) = power * ch.b_bar[h];
      power *= ch.a_bar[h];
    }
  }
  return K;
}

Reachability reachability_rank(const DiscreteChannel& ch, std::size_t M) {
  const std::size_t rank = numerical_rank(reachability_matrix(ch, M), 1e-10);
  return {rank, rank == ch.state_dim()};
}

std::vector<double> initial_state_to_prefix(const DiscreteChannel& ch, const std::vector<double>& h0,
                                            std::size_t M) {
  const std::size_t H = ch.state_dim();
  if (h0.size() != H) throw std::invalid_argument("initial state has the wrong length");
  if (M < H) {
    throw std::invalid_argument("prefix length M = " + std::to_string(M) + " is below the state size H = " +
                                std::to_string(H));
  }
  for (std::size_t i = 0; i < H; ++i) {
    if (ch.b_bar[i] == 0.0) throw std::invalid_argument("b_bar[" + std::to_string(i) + "] is zero");
    for (std::size_t j = i + 1; j < H; ++j) {
      if (ch.a_bar[i] == ch.a_bar[j]) {
        throw std::invalid_argument("a_bar entries " + std::to_string(i) + " and " + std::to_string(j) +
                                    " coincide; distinct entries are required");
      }
    }
  }
  const Tensor P = min_norm_solve(reachability_matrix(ch, M), Tensor::vector(h0));
  return {P.data().begin(), P.data().end()};
}

// ---- Input-projection update for S6 ----

S6Params with_stacked_w_s6(const S6Params& p, const Tensor& w) {
  const std::size_t H = p.state_dim(), D = p.channels(), r = p.dt_rank();
  if (w.rank() != 2 || w.rows() != 2 * H + r || w.cols() != D) {
    throw ShapeError("stacked W_S6 must be " + shape_str({2 * H + r, D}) + ", got " + shape_str(w.shape()));
  }
  S6Params out = p;
  for (std::size_t j = 0; j < D; ++j) {
    for (std::size_t k = 0; k < H; ++k) {
      out.w_b.at(k, j) = w.at(k, j);
      out.w_c.at(k, j) = w.at(H + k, j);
    }
    for (std::size_t k = 0; k < r; ++k) out.w_dt_down.at(k, j) = w.at(2 * H + k, j);
  }
  return out;
}

Tensor construct_win_hat(const Tensor& w_s6_bar, const Tensor& w_s6, const Tensor& w_in) {
  const std::size_t K = w_s6.rows(), D = w_s6.cols();
  if (w_s6_bar.shape() != w_s6.shape()) throw ShapeError("W_S6_bar and W_S6 shapes differ");
  if (w_in.shape() != Shape{D, D}) throw ShapeError("W_in must be " + shape_str({D, D}));
  if (K > D) {
    throw std::invalid_argument("2H + r = " + std::to_string(K) + " exceeds D = " + std::to_string(D));
  }
  const Svd s = svd(w_s6);
  if (!(s.S[K - 1] > 1e-10 * s.S[0])) throw std::invalid_argument("W_S6 is not full row rank");
  // target = Sigma^-1 U^T W_S6_bar W_in, the row-space coordinates of W_in_hat.
  Tensor target = matmul(s.U.transposed(), matmul(w_s6_bar, w_in));
  for (std::size_t k = 0; k < K; ++k)
    for (std::size_t j = 0; j < D; ++j) target.at(k, j) /= s.S[k];
  Tensor coords = matmul(s.V.transposed(), w_in);
  for (std::size_t k = 0; k < K; ++k)
    for (std::size_t j = 0; j < D; ++j) coords.at(k, j) = target.at(k, j);
  return matmul(s.V, coords);
}

// ---- Essential parameter count ----

const char* to_string(ParamSpace s) {
  switch (s) {
    case ParamSpace::discretized: return "discretized";
    case ParamSpace::bilinear: return "bilinear";
    case ParamSpace::zoh: return "zoh";
  }
  return "?";
}

ParamSpace parse_param_space(const std::string& s) {
  if (s == "discretized") return ParamSpace::discretized;
  if (s == "bilinear") return ParamSpace::bilinear;
  if (s == "zoh") return ParamSpace::zoh;
  throw std::invalid_argument("unknown parameter space '" + s + "' (expected discretized, bilinear or zoh)");
}

DiscreteChannel ChannelParams::discrete(ParamSpace space) const {
  if (space == ParamSpace::discretized) return {a, b, c};
  const Discretization m = space == ParamSpace::zoh ? Discretization::zoh : Discretization::bilinear;
  DiscreteChannel out;
  for (std::size_t h = 0; h < a.size(); ++h) {
    const DiscretePair p = discretize(a[h], b[h], dt, m);
    out.a_bar.push_back(p.a_bar);
    out.b_bar.push_back(p.b_bar);
  }
  out.c = c;
  return out;
}

namespace {

void check_channel(const ChannelParams& ch, const char* what) {
  if (ch.b.size() != ch.a.size() || ch.c.size() != ch.a.size()) {
    throw std::invalid_argument(std::string(what) + " channel: a, b, c lengths differ");
  }
}

double redundant_contribution(const ChannelParams& f, ParamSpace space, std::size_t j) {
  switch (space) {
    case ParamSpace::discretized: return f.a[j] * f.b[j] * f.c[j];
    case ParamSpace::bilinear: return f.dt * (1.0 + f.dt * f.a[j] / 2.0) * f.b[j] * f.c[j];
    case ParamSpace::zoh: return f.dt * std::expm1(f.dt * f.a[j]) * f.b[j] * f.c[j];
  }
  return 0.0;
}

bool differs(double x, double y) { return std::abs(x - y) > kAlignTolerance; }

}  // namespace

std::size_t essential_cost(const ChannelParams& frozen, const ChannelParams& target, ParamSpace space,
                           const std::vector<std::size_t>& perm) {
  const std::size_t Hs = target.states();
  std::size_t cost = 0;
  for (std::size_t i = 0; i < perm.size(); ++i) {
    const std::size_t j = perm[i];
    if (i < Hs) {
      cost += differs(frozen.a[j], target.a[i]);
      cost += differs(frozen.b[j] * frozen.c[j], target.b[i] * target.c[i]);
    } else {
      cost += redundant_contribution(frozen, space, j) != 0.0;
    }
  }
  return cost;
}

EssentialUpdate essential_param_count(const ChannelParams& frozen, const ChannelParams& target,
                                      ParamSpace space) {
  check_channel(frozen, "frozen");
  check_channel(target, "target");
  const std::size_t H = frozen.states(), Hs = target.states();
  if (H == 0 || H > 8) throw std::invalid_argument("essential_param_count needs 1 <= H <= 8, got " + std::to_string(H));
  if (Hs > H) throw std::invalid_argument("target state size exceeds the frozen state size");
  for (std::size_t j = 0; j < H; ++j) {
    if (frozen.a[j] == 0.0 || frozen.b[j] == 0.0 || frozen.c[j] == 0.0) {
      throw std::invalid_argument("frozen parameters must be nonzero; state " + std::to_string(j) + " has a zero entry");
    }
  }
  if (space != ParamSpace::discretized && frozen.dt != target.dt) {
    throw std::invalid_argument("continuous parameter spaces need a shared step size");
  }

  std::vector<std::size_t> perm(H);
  std::iota(perm.begin(), perm.end(), 0);
  std::vector<std::size_t> best = perm;
  std::size_t best_cost = SIZE_MAX;
  do {
    const std::size_t cost = essential_cost(frozen, target, space, perm);
    if (cost < best_cost) {
      best_cost = cost;
      best = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));

  EssentialUpdate out;
  out.permutation = best;
  out.updated = frozen;
  for (std::size_t i = 0; i < H; ++i) {
    const std::size_t j = best[i];
    if (i < Hs) {
      if (differs(frozen.a[j], target.a[i])) out.edits.push_back({"a", j, target.a[i]});
      if (differs(frozen.b[j] * frozen.c[j], target.b[i] * target.c[i]))
        out.edits.push_back({"c", j, target.b[i] * target.c[i] / frozen.b[j]});
    } else if (redundant_contribution(frozen, space, j) != 0.0) {
      out.edits.push_back({"c", j, 0.0});
    }
  }
  for (const ParamEdit& e : out.edits) (e.field == "a" ? out.updated.a : out.updated.c)[e.index] = e.value;
  out.count = out.edits.size();
  return out;
}

// ---- Deep S4 embedding ----

namespace {

bool all_zero(const Tensor& t) {
  return std::all_of(t.data().begin(), t.data().end(), [](double v) { return v == 0.0; });
}

std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

// Contiguous split of n items into k parts whose sizes differ by at most one.
std::vector<std::pair<std::size_t, std::size_t>> split(std::size_t n, std::size_t k) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  std::size_t begin = 0;
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t size = n / k + (i < n % k ? 1 : 0);
    out.emplace_back(begin, begin + size);
    begin += size;
  }
  return out;
}

// Continuous parameters under step dt that discretize to (a_bar, b_bar).
std::pair<double, double> undiscretize(double a_bar, double b_bar, double dt, Discretization m) {
  if (m == Discretization::zoh) {
    if (!(a_bar > 0.0)) throw std::invalid_argument("zoh cannot produce a_bar <= 0");
    if (a_bar == 1.0) return {0.0, b_bar / dt};
    const double a = std::log(a_bar) / dt;
    return {a, b_bar * a / (a_bar - 1.0)};
  }
  if (a_bar == -1.0) throw std::invalid_argument("bilinear cannot produce a_bar = -1");
  const double x = (a_bar - 1.0) / (a_bar + 1.0);
  return {2.0 * x / dt, b_bar * (1.0 - x) / dt};
}

void emulate_channel(DeepS4LayerParams& layer, std::size_t d, const DiscreteChannel& target,
                     Discretization method) {
  const std::size_t H = layer.state_dim();
  bool silent = true;
  for (std::size_t j = 0; j < target.state_dim(); ++j) silent = silent && target.b_bar[j] * target.c[j] == 0.0;
  if (silent) {
    for (std::size_t h = 0; h < H; ++h) layer.c.at(d, h) = 0.0;
    return;
  }
  const double dt = std::exp(layer.log_dt[d]);
  ChannelParams f, t;
  f.dt = t.dt = dt;
  for (std::size_t h = 0; h < H; ++h) {
    f.a.push_back(layer.a.at(d, h));
    f.b.push_back(layer.b.at(d, h));
    f.c.push_back(layer.c.at(d, h));
  }
  for (std::size_t j = 0; j < target.state_dim(); ++j) {
    const auto [a, b] = undiscretize(target.a_bar[j], target.b_bar[j], dt, method);
    t.a.push_back(a);
    t.b.push_back(b);
    t.c.push_back(target.c[j]);
  }
  const ParamSpace space = method == Discretization::zoh ? ParamSpace::zoh : ParamSpace::bilinear;
  const EssentialUpdate u = essential_param_count(f, t, space);
  for (std::size_t h = 0; h < H; ++h) {
    layer.a.at(d, h) = u.updated.a[h];
    layer.c.at(d, h) = u.updated.c[h];
  }
}

// Output equals input: a_bar = 0 and b_bar c = 1 on state 0, other states silenced.
void pass_through_channel(DeepS4LayerParams& layer, std::size_t d, Discretization method) {
  const double dt = std::exp(layer.log_dt[d]);
  if (method == Discretization::zoh) {
    // e^{-1000} underflows to 0; b_bar = (e^{dt a} - 1) / a * b = 1.
    layer.a.at(d, 0) = -1000.0 / dt;
    layer.b.at(d, 0) = 1000.0 / dt;
  } else {
    layer.a.at(d, 0) = -2.0 / dt;
    layer.b.at(d, 0) = 2.0 / dt;
  }
  layer.c.at(d, 0) = 1.0;
  for (std::size_t h = 1; h < layer.state_dim(); ++h) layer.c.at(d, h) = 0.0;
}

LayerInventory inventory(const DeepS4LayerParams& before, const DeepS4LayerParams& after) {
  LayerInventory inv;
  const std::size_t D = before.channels(), H = before.state_dim();
  for (std::size_t d = 0; d < D; ++d) {
    std::size_t tuned = 0;
    bool silent = true;
    for (std::size_t h = 0; h < H; ++h) {
      const bool changed = after.a.at(d, h) != before.a.at(d, h) || after.b.at(d, h) != before.b.at(d, h) ||
                           (after.c.at(d, h) != before.c.at(d, h) && after.c.at(d, h) != 0.0);
      tuned += changed;
      silent = silent && after.c.at(d, h) == 0.0;
    }
    if (tuned > 0) ++inv.tuned_channels;
    if (silent) inv.zeroed_channels.push_back(d);
    inv.max_tuned_states = std::max(inv.max_tuned_states, tuned);
  }
  inv.projection_update_rank = numerical_rank(after.W - before.W);
  inv.residual_touched = after.u != before.u;
  inv.bias_touched = after.beta != before.beta;
  return inv;
}

}  // namespace

SdtEmbedding construct_sdt_embedding(const StackedModel& frozen, const StackedModel& target) {
  const ModelArch& fa = frozen.arch;
  const ModelArch& ta = target.arch;
  fa.validate();
  ta.validate();
  if (fa.kind != LayerKind::s4 || ta.kind != LayerKind::s4) throw std::invalid_argument("embedding needs deep S4 models");
  if (fa.classes != 0 || ta.classes != 0) throw std::invalid_argument("embedding needs models without a head");
  if (fa.channels != ta.channels) throw std::invalid_argument("frozen and target channel counts differ");
  if (ta.layers > fa.layers) throw std::invalid_argument("target has more layers than the frozen model");
  if (ta.states > fa.states) throw std::invalid_argument("target has more states than the frozen model");
  if (fa.method != ta.method) throw std::invalid_argument("frozen and target discretizations differ");
  for (std::size_t i = 0; i < fa.layers; ++i) {
    if (fa.activation(i) != Activation::linear) throw std::invalid_argument("frozen activations must be linear");
    if (!all_zero(frozen.param(layer_param(i, "h0")))) throw std::invalid_argument("frozen initial states must be zero");
  }
  for (std::size_t k = 0; k < ta.layers; ++k) {
    if (ta.activation(k) != Activation::linear) throw std::invalid_argument("target activations must be linear");
    if (!all_zero(target.param(layer_param(k, "u")))) throw std::invalid_argument("target must not have residual connections");
    if (!all_zero(target.param(layer_param(k, "h0")))) throw std::invalid_argument("target initial states must be zero");
  }

  const std::size_t L = fa.layers, Ls = ta.layers, D = fa.channels;
  SdtEmbedding out;
  out.model = frozen;
  out.channel_budget = ceil_div(D * Ls, L);
  out.state_budget = ta.states;
  out.rank_budget = ceil_div(L, Ls);

  const auto groups = split(L, Ls);
  for (std::size_t k = 0; k < Ls; ++k) {
    const DeepS4LayerParams tl = target.s4_layer(k);
    const auto [first, last] = groups[k];
    const auto chunks = split(D, last - first);
    for (std::size_t i = first; i < last; ++i) {
      const DeepS4LayerParams before = frozen.s4_layer(i);
      DeepS4LayerParams layer = before;
      const auto [c0, c1] = chunks[i - first];
      const bool final_layer = i + 1 == last;
      std::vector<std::size_t> emulating, passing;
      for (std::size_t d = 0; d < D; ++d) {
        if (d >= c0 && d < c1) {
          emulate_channel(layer, d, discretize_channel(tl.channel(d), ta.method), fa.method);
          emulating.push_back(d);
        } else if (final_layer) {
          pass_through_channel(layer, d, fa.method);
          passing.push_back(d);
        } else {
          for (std::size_t h = 0; h < layer.state_dim(); ++h) layer.c.at(d, h) = 0.0;
        }
      }
      if (final_layer) {
        layer.W = tl.W;
        layer.beta = tl.beta;
        layer.u = Tensor(Shape{D, 1});
      } else {
        // Active channels write their own row; the rest ride the residual.
        for (std::size_t d = c0; d < c1; ++d)
          for (std::size_t r = 0; r < D; ++r) layer.W.at(r, d) = r == d ? 1.0 : 0.0;
        layer.beta = Tensor(Shape{D, 1});
        layer.u = Tensor(Shape{D, 1}, 1.0);
        for (std::size_t d = c0; d < c1; ++d) layer.u[d] = 0.0;
      }
      out.model.set_s4_layer(i, layer);

      LayerInventory inv = inventory(before, layer);
      inv.target_layer = k;
      inv.group_final = final_layer;
      inv.emulating_channels = std::move(emulating);
      inv.pass_through_channels = std::move(passing);
      const std::string where = "layer " + std::to_string(i);
      if (inv.tuned_channels > out.channel_budget) {
        out.violations.push_back(where + " tunes " + std::to_string(inv.tuned_channels) + " channels, budget " +
                                 std::to_string(out.channel_budget));
      }
      if (inv.max_tuned_states > out.state_budget) {
        out.violations.push_back(where + " tunes " + std::to_string(inv.max_tuned_states) +
                                 " states in one channel, budget " + std::to_string(out.state_budget));
      }
      if (i + 1 < L && inv.projection_update_rank > out.rank_budget) {
        out.violations.push_back(where + " projection update has rank " +
                                 std::to_string(inv.projection_update_rank) + ", budget " +
                                 std::to_string(out.rank_budget));
      }
      out.layers.push_back(std::move(inv));
    }
  }
  return out;
}

// ---- Reports ----

std::string format_report(const OracleReport& r) {
  char buf[160];
  std::snprintf(buf, sizeof buf, " discrepancy=%.3e threshold=%.3e ", r.discrepancy, r.threshold);
  return r.oracle + " [" + r.instance + "]" + buf + (r.pass() ? "PASS" : "FAIL");
}

std::vector<std::string> oracle_names() {
  return {"scan_conv", "prefix_state", "reachability", "prefix_inverse", "win_hat", "essential", "sdt_embedding"};
}

namespace {

std::string dims(std::initializer_list<std::pair<const char*, std::size_t>> kv, std::uint64_t seed, std::size_t trial) {
  std::string s;
  for (const auto& [k, v] : kv) s += std::string(k) + "=" + std::to_string(v) + " ";
  return s + "seed=" + std::to_string(seed) + " trial=" + std::to_string(trial);
}

double signed_magnitude(RngStream& rng, double lo, double hi) {
  const double m = rng.uniform(lo, hi);
  return rng.next_double() < 0.5 ? -m : m;
}

DiscreteChannel random_channel(RngStream& rng, std::size_t H) {
  DiscreteChannel ch;
  for (std::size_t h = 0; h < H; ++h) {
    ch.a_bar.push_back(rng.uniform(-0.95, 0.95));
    ch.b_bar.push_back(rng.normal(0.0, 1.0));
    ch.c.push_back(rng.normal(0.0, 1.0));
  }
  return ch;
}

// Distinct, well-separated a_bar and b_bar bounded away from zero.
DiscreteChannel separated_channel(RngStream& rng, std::size_t H) {
  DiscreteChannel ch;
  const double width = 1.8 / static_cast<double>(H);
  std::vector<double> centers;
  for (std::size_t h = 0; h < H; ++h) centers.push_back(-0.9 + width * (static_cast<double>(h) + rng.uniform(0.25, 0.75)));
  for (std::size_t h = H; h-- > 1;) std::swap(centers[h], centers[static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(h) + 1))]);
  for (std::size_t h = 0; h < H; ++h) {
    ch.a_bar.push_back(centers[h]);
    ch.b_bar.push_back(signed_magnitude(rng, 0.5, 1.5));
    ch.c.push_back(rng.normal(0.0, 1.0));
  }
  return ch;
}

std::vector<double> random_vec(RngStream& rng, std::size_t n) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal(0.0, 1.0);
  return v;
}

double max_abs(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

OracleReport scan_conv_trial(RngStream& rng, std::uint64_t seed, std::size_t t) {
  const auto H = static_cast<std::size_t>(rng.integer(1, 17));
  const auto N = static_cast<std::size_t>(rng.integer(1, 257));
  const DiscreteChannel ch = random_channel(rng, H);
  const auto x = random_vec(rng, N);
  const auto y_scan = s4_scan(ch, x, std::vector<double>(H, 0.0)).y;
  const auto y_conv = s4_conv_forward(s4_kernel(ch, N), x);
  double diff = 0.0;
  for (std::size_t n = 0; n < N; ++n) diff = std::max(diff, std::abs(y_scan[n] - y_conv[n]));
  return {"scan_conv", dims({{"H", H}, {"N", N}}, seed, t), diff / std::max(1.0, max_abs(y_scan)), 1e-9};
}

OracleReport prefix_state_trial(RngStream& rng, std::uint64_t seed, std::size_t t) {
  const auto H = static_cast<std::size_t>(rng.integer(1, 17));
  const auto M = static_cast<std::size_t>(rng.integer(1, 17));
  const auto N = static_cast<std::size_t>(rng.integer(1, 65));
  const DiscreteChannel ch = random_channel(rng, H);
  const auto P = random_vec(rng, M);
  const auto x = random_vec(rng, N);
  std::vector<double> joined = P;
  joined.insert(joined.end(), x.begin(), x.end());
  const auto full = s4_scan(ch, joined, std::vector<double>(H, 0.0)).y;
  const auto suffix = s4_scan(ch, x, prefix_to_initial_state(ch, P)).y;
  double diff = 0.0;
  for (std::size_t n = 0; n < N; ++n) diff = std::max(diff, std::abs(full[M + n] - suffix[n]));
  return {"prefix_state", dims({{"H", H}, {"M", M}, {"N", N}}, seed, t), diff, 1e-9};
}

OracleReport reachability_trial(RngStream& rng, std::uint64_t seed, std::size_t t) {
  const auto H = static_cast<std::size_t>(rng.integer(1, 7));
  const auto M = static_cast<std::size_t>(rng.integer(1, 9));
  const Reachability r = reachability_rank(separated_channel(rng, H), M);
  return {"reachability", dims({{"H", H}, {"M", M}, {"rank", r.rank}}, seed, t),
          r.reachable_all == (M >= H) ? 0.0 : 1.0, 0.0};
}

OracleReport prefix_inverse_trial(RngStream& rng, std::uint64_t seed, std::size_t t) {
  const auto H = static_cast<std::size_t>(rng.integer(1, 7));
  const auto M = H + static_cast<std::size_t>(rng.integer(0, 4));
  const DiscreteChannel ch = separated_channel(rng, H);
  const auto h0 = random_vec(rng, H);
  const auto back = prefix_to_initial_state(ch, initial_state_to_prefix(ch, h0, M));
  double diff = 0.0;
  for (std::size_t h = 0; h < H; ++h) diff = std::max(diff, std::abs(back[h] - h0[h]));
  return {"prefix_inverse", dims({{"H", H}, {"M", M}}, seed, t), diff, 1e-8};
}

S6Params random_s6(RngStream& rng, std::size_t D, std::size_t H, std::size_t r) {
  ModelArch arch;
  arch.layers = 1;
  arch.channels = D;
  arch.states = H;
  arch.dt_rank = r;
  arch.kind = LayerKind::s6;
  return init_model(arch, rng).s6_layer(0);
}

OracleReport win_hat_trial(RngStream& rng, std::uint64_t seed, std::size_t t) {
  const auto H = static_cast<std::size_t>(rng.integer(1, 4));
  const auto r = static_cast<std::size_t>(rng.integer(1, 3));
  const std::size_t D = 2 * H + r + static_cast<std::size_t>(rng.integer(0, 5));
  const S6Params p = random_s6(rng, D, H, r);
  const Tensor w_bar = stacked_w_s6(p) + rng_draw(rng, Normal{0.0, 0.5}, {2 * H + r, D});
  S6Params via_hat = p;
  via_hat.w_in = construct_win_hat(w_bar, stacked_w_s6(p), p.w_in);
  const S6Params via_bar = with_stacked_w_s6(p, w_bar);
  double diff = 0.0;
  for (int s = 0; s < 4; ++s) {
    const Tensor x = rng_draw(rng, Normal{0.0, 1.0}, {D, 16});
    const S6Induced a = s6_induced(via_bar, x), b = s6_induced(via_hat, x);
    diff = std::max({diff, max_abs_diff(a.delta, b.delta), max_abs_diff(a.B, b.B), max_abs_diff(a.C, b.C)});
  }
  return {"win_hat", dims({{"D", D}, {"H", H}, {"r", r}}, seed, t), diff, 1e-9};
}

}  // namespace

ChannelParams random_essential_frozen(RngStream& rng, std::size_t H, ParamSpace space) {
  ChannelParams f;
  f.dt = space == ParamSpace::discretized ? 1.0 : rng.uniform(0.05, 0.5);
  for (std::size_t h = 0; h < H; ++h) {
    f.a.push_back(space == ParamSpace::discretized ? signed_magnitude(rng, 0.05, 0.95) : -rng.uniform(0.1, 3.0));
    f.b.push_back(signed_magnitude(rng, 0.2, 1.5));
    f.c.push_back(signed_magnitude(rng, 0.2, 1.5));
  }
  return f;
}

// Target sharing some entries with the frozen channel, so that optimal
/// permutations and partial alignments actually occur.
ChannelParams random_essential_target(RngStream& rng, const ChannelParams& frozen, std::size_t Hs, ParamSpace space) {
  const std::size_t H = frozen.states();
  std::vector<std::size_t> order(H);
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t h = H; h-- > 1;) std::swap(order[h], order[static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(h) + 1))]);
  const ChannelParams fresh = random_essential_frozen(rng, Hs, space);
  ChannelParams t;
  t.dt = frozen.dt;
  for (std::size_t i = 0; i < Hs; ++i) {
    const std::size_t j = order[i];
    t.a.push_back(rng.next_double() < 0.6 ? frozen.a[j] : fresh.a[i]);
    if (rng.next_double() < 0.6) {
      t.b.push_back(frozen.b[j]);
      t.c.push_back(frozen.c[j]);
    } else {
      t.b.push_back(fresh.b[i]);
      t.c.push_back(fresh.c[i]);
    }
  }
  return t;
}

namespace {

OracleReport essential_trial(RngStream& rng, std::uint64_t seed, std::size_t t) {
  const auto H = static_cast<std::size_t>(rng.integer(1, 6));
  const auto Hs = static_cast<std::size_t>(rng.integer(1, static_cast<std::int64_t>(H) + 1));
  const auto space = static_cast<ParamSpace>(rng.integer(0, 3));
  const ChannelParams f = random_essential_frozen(rng, H, space);
  const ChannelParams target = random_essential_target(rng, f, Hs, space);
  const EssentialUpdate u = essential_param_count(f, target, space);
  const auto x = random_vec(rng, 32);
  const auto y_upd = s4_scan(u.updated.discrete(space), x, std::vector<double>(H, 0.0)).y;
  const auto y_tgt = s4_scan(target.discrete(space), x, std::vector<double>(Hs, 0.0)).y;
  double diff = 0.0;
  for (std::size_t n = 0; n < x.size(); ++n) diff = std::max(diff, std::abs(y_upd[n] - y_tgt[n]));
  return {"essential", dims({{"H", H}, {"H*", Hs}, {"count", u.count}}, seed, t) + " space=" + to_string(space),
          diff, 1e-9};
}

}  // namespace

namespace {

constexpr SdtShape kSdtShapes[] = {{2, 2, 4, 1, 2}, {4, 8, 4, 2, 2}, {4, 64, 8, 1, 4}};

std::pair<StackedModel, StackedModel> sdt_models(RngStream& rng, const SdtShape& s) {
  ModelArch fa;
  fa.layers = s.L;
  fa.channels = s.D;
  fa.states = s.H;
  fa.activations.assign(s.L, Activation::linear);
  ModelArch ta = fa;
  ta.layers = s.Ls;
  ta.states = s.Hs;
  ta.activations.assign(s.Ls, Activation::linear);
  StackedModel frozen = init_model(fa, rng);
  StackedModel target = init_model(ta, rng);
  for (std::size_t k = 0; k < s.Ls; ++k) {
    target.param(layer_param(k, "u")) = Tensor(Shape{s.D, 1});
    target.param(layer_param(k, "beta")) = rng_draw(rng, Normal{0.0, 0.5}, {s.D, 1});
  }
  return {std::move(frozen), std::move(target)};
}

}  // namespace

std::vector<OracleReport> sdt_embedding_trial(RngStream& rng, std::uint64_t seed, std::size_t t,
                                             const SdtShape& s, std::size_t sequences) {
  auto [frozen, target] = sdt_models(rng, s);
  const SdtEmbedding e = construct_sdt_embedding(frozen, target);
  double diff = 0.0;
  for (std::size_t q = 0; q < sequences; ++q) {
    const Tensor x = rng_draw(rng, Normal{0.0, 1.0}, {s.D, 32});
    const Tensor y = model_tokens(target, x);
    diff = std::max(diff, max_abs_diff(model_tokens(e.model, x), y) / std::max(1.0, y.max_abs()));
  }
  const std::string inst = dims({{"L", s.L}, {"D", s.D}, {"H", s.H}, {"L*", s.Ls}, {"H*", s.Hs}}, seed, t);
  std::vector<OracleReport> out;
  out.push_back({"sdt_embedding.equality", inst, diff, 1e-8});
  std::string budget = inst;
  if (!e.violations.empty()) budget += "; " + e.violations.front();
  out.push_back({"sdt_embedding.budget", budget, static_cast<double>(e.violations.size()), 0.0});
  return out;
}

std::vector<OracleReport> run_oracle(const std::string& name, std::uint64_t seed, std::size_t trials) {
  const auto names = oracle_names();
  if (std::find(names.begin(), names.end(), name) == names.end()) {
    std::string valid;
    for (const auto& n : names) valid += " " + n;
    throw std::invalid_argument("unknown oracle '" + name + "'; valid:" + valid);
  }
  std::vector<OracleReport> out;
  for (std::size_t t = 0; t < trials; ++t) {
    RngStream rng(seed, t + 1);
    if (name == "scan_conv") out.push_back(scan_conv_trial(rng, seed, t));
    if (name == "prefix_state") out.push_back(prefix_state_trial(rng, seed, t));
    if (name == "reachability") out.push_back(reachability_trial(rng, seed, t));
    if (name == "prefix_inverse") out.push_back(prefix_inverse_trial(rng, seed, t));
    if (name == "win_hat") out.push_back(win_hat_trial(rng, seed, t));
    if (name == "essential") out.push_back(essential_trial(rng, seed, t));
    if (name == "sdt_embedding") {
      for (auto& r : sdt_embedding_trial(rng, seed, t, kSdtShapes[t % std::size(kSdtShapes)], 10)) out.push_back(std::move(r));
    }
  }
  return out;
}

}  // namespace ssmtune
