// Copyright 2026 The ssmtune Authors.
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "ssmtune/num/linalg.hpp"
#include "ssmtune/peft/adapter.hpp"
#include "ssmtune/theory/oracles.hpp"

using namespace ssmtune;

namespace {

// Independent brute force: per-permutation cost written directly from the
// objective, with the redundant term evaluated on the discretized channel.
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
        if (std::abs(f.a[j] - t.a[i]) > 1e-12) ++cost;
        if (std::abs(f.b[j] * f.c[j] - t.b[i] * t.c[i]) > 1e-12) ++cost;
      } else {
        // Nonzero contribution of a leftover state: b_bar c != 0 with a valid a.
        if (fd.b_bar[j] * fd.c[j] != 0.0) ++cost;
      }
    }
    best = std::min(best, cost);
  } while (std::next_permutation(p.begin(), p.end()));
  return best;
}

double scan_gap(const DiscreteChannel& a, const DiscreteChannel& b, const std::vector<double>& x) {
  const auto ya = s4_scan(a, x, std::vector<double>(a.state_dim(), 0.0)).y;
  const auto yb = s4_scan(b, x, std::vector<double>(b.state_dim(), 0.0)).y;
  double m = 0.0;
  for (std::size_t n = 0; n < x.size(); ++n) m = std::max(m, std::abs(ya[n] - yb[n]));
  return m;
}

std::vector<double> randn(RngStream& rng, std::size_t n) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal(0.0, 1.0);
  return v;
}

void expect_all_pass(const std::vector<OracleReport>& reports) {
  for (const auto& r : reports) {
    INFO(format_report(r));
    CHECK(r.pass());
  }
}

}  // namespace

TEST_SUITE("prefix oracles") {
  TEST_CASE("closed-form injected state") {
    const DiscreteChannel ch{{0.5}, {1.0}, {1.0}};
    CHECK(prefix_to_initial_state(ch, {1.0, 1.0}) == std::vector<double>{1.5});
    CHECK(prefix_to_initial_state(ch, {0.0, 0.0, 0.0}) == std::vector<double>{0.0});
    CHECK_THROWS(prefix_to_initial_state(ch, {}));
  }

  TEST_CASE("reachability of the two-state example") {
    const DiscreteChannel ch{{0.5, 0.25}, {1.0, 1.0}, {1.0, 1.0}};
    const Tensor K = reachability_matrix(ch, 2);
    CHECK(K.at(0, 0) * K.at(1, 1) - K.at(0, 1) * K.at(1, 0) == doctest::Approx(0.25));
    CHECK(reachability_rank(ch, 2).rank == 2);
    CHECK(reachability_rank(ch, 2).reachable_all);
    CHECK(reachability_rank(ch, 1).rank == 1);
    CHECK_FALSE(reachability_rank(ch, 1).reachable_all);
  }

  TEST_CASE("a zero b_bar entry is never fully reachable") {
    const DiscreteChannel ch{{0.5, 0.25, -0.3}, {1.0, 0.0, 2.0}, {1.0, 1.0, 1.0}};
    for (std::size_t M = 1; M <= 8; ++M) CHECK(reachability_rank(ch, M).rank < 3);
    CHECK_THROWS_WITH(initial_state_to_prefix(ch, {1.0, 1.0, 1.0}, 4), doctest::Contains("b_bar[1]"));
  }

  TEST_CASE("converse preconditions are named") {
    const DiscreteChannel ch{{0.5, 0.5}, {1.0, 1.0}, {1.0, 1.0}};
    CHECK_THROWS_WITH(initial_state_to_prefix(ch, {1.0, 1.0}, 2), doctest::Contains("distinct"));
    CHECK_THROWS_WITH(initial_state_to_prefix(ch, {1.0, 1.0}, 1), doctest::Contains("state size"));
  }

  TEST_CASE("minimum-norm prefixes") {
    const DiscreteChannel one{{0.5}, {1.0}, {1.0}};
    const auto zero = initial_state_to_prefix(one, {0.0}, 3);
    for (double p : zero) CHECK(p == 0.0);
    const auto P = initial_state_to_prefix(one, {1.5}, 2);
    CHECK(0.5 * P[0] + P[1] == doctest::Approx(1.5).epsilon(1e-14));
    // Minimum norm: P is parallel to the single row (0.5, 1).
    CHECK(P[0] / P[1] == doctest::Approx(0.5));
  }

  TEST_CASE("square instances round-trip") {
    RngStream rng(1);
    for (std::size_t H = 1; H <= 6; ++H) {
      DiscreteChannel ch;
      for (std::size_t h = 0; h < H; ++h) {
        ch.a_bar.push_back(-0.8 + 1.6 * static_cast<double>(h) / static_cast<double>(std::max<std::size_t>(H - 1, 1)));
        ch.b_bar.push_back(1.0 + 0.1 * static_cast<double>(h));
        ch.c.push_back(1.0);
      }
      const auto h0 = randn(rng, H);
      const auto back = prefix_to_initial_state(ch, initial_state_to_prefix(ch, h0, H));
      for (std::size_t h = 0; h < H; ++h) CHECK(std::abs(back[h] - h0[h]) <= 1e-9);
    }
  }

  TEST_CASE("forward direction over 1000 random instances") { expect_all_pass(run_oracle("prefix_state", 11, 1000)); }

  TEST_CASE("reachability verdict equals M >= H") { expect_all_pass(run_oracle("reachability", 12, 500)); }

  TEST_CASE("random converse instances round-trip") { expect_all_pass(run_oracle("prefix_inverse", 13, 200)); }

  TEST_CASE("prefix tuning equals initial-state tuning on a one-layer model") {
    RngStream rng(14);
    ModelArch arch;
    arch.layers = 1;
    arch.channels = 3;
    arch.states = 4;
    const StackedModel model = init_model(arch, rng);
    const std::size_t M = 3;
    const Tensor P = rng_draw(rng, Normal{0.0, 1.0}, {3, M});
    AdaptedModel prefix = build_adapter(model, PrefixTuningSpec{M, PrefixReparam::direct, 0}, rng);
    prefix.trainable()["prefix.0"] = P;
    AdaptedModel state = build_adapter(model, InitialStateSpec{}, rng);
    const DeepS4LayerParams layer = model.s4_layer(0);
    Tensor& h0 = state.trainable()["layers.0.h0"];
    for (std::size_t d = 0; d < 3; ++d) {
      const Tensor row = P.row(d);
      const auto h = prefix_to_initial_state(discretize_channel(layer.channel(d), arch.method),
                                             {row.data().begin(), row.data().end()});
      for (std::size_t k = 0; k < 4; ++k) h0.at(d, k) = h[k];
    }
    const Tensor x = rng_draw(rng, Normal{0.0, 1.0}, {3, 9});
    Graph g1, g2;
    const Tensor y1 = prefix.forward(g1, x).tokens.value();
    const Tensor y2 = state.forward(g2, x).tokens.value();
    CHECK(max_abs_diff(y1, y2) <= 1e-9);
  }
}

TEST_SUITE("input projection") {
  TEST_CASE("unchanged W_S6 keeps the induced sequences") {
    RngStream rng(20);
    ModelArch arch;
    arch.layers = 1;
    arch.channels = 8;
    arch.states = 2;
    arch.dt_rank = 1;
    arch.kind = LayerKind::s6;
    const S6Params p = init_model(arch, rng).s6_layer(0);
    S6Params q = p;
    q.w_in = construct_win_hat(stacked_w_s6(p), stacked_w_s6(p), p.w_in);
    CHECK(max_abs_diff(q.w_in, p.w_in) <= 1e-12);
    const Tensor x = rng_draw(rng, Normal{0.0, 1.0}, {8, 12});
    CHECK(max_abs_diff(s6_forward(p, x), s6_forward(q, x)) <= 1e-12);
  }

  TEST_CASE("construction satisfies the defining identity") {
    RngStream rng(21);
    const Tensor w = rng_draw(rng, Normal{0.0, 1.0}, {5, 8});
    const Tensor w_bar = rng_draw(rng, Normal{0.0, 1.0}, {5, 8});
    const Tensor w_in = rng_draw(rng, Normal{0.0, 1.0}, {8, 8});
    const Tensor hat = construct_win_hat(w_bar, w, w_in);
    CHECK(max_abs_diff(matmul(w, hat), matmul(w_bar, w_in)) <= 1e-9);
    // The free block keeps W_in's part orthogonal to the row space of W.
    const Tensor proj = matmul(w, hat - w_in);
    CHECK(max_abs_diff(matmul(w.transposed(), min_norm_solve(matmul(w, w.transposed()), proj)), hat - w_in) <= 1e-9);
  }

  TEST_CASE("dimension and rank gates") {
    RngStream rng(22);
    const Tensor w = rng_draw(rng, Normal{0.0, 1.0}, {5, 4});
    CHECK_THROWS_WITH(construct_win_hat(w, w, rng_draw(rng, Normal{0.0, 1.0}, {4, 4})), doctest::Contains("exceeds"));
    Tensor deficient = rng_draw(rng, Normal{0.0, 1.0}, {3, 6});
    for (std::size_t j = 0; j < 6; ++j) deficient.at(2, j) = deficient.at(0, j) + deficient.at(1, j);
    CHECK_THROWS_WITH(construct_win_hat(deficient, deficient, identity(6)), doctest::Contains("full row rank"));
  }

  TEST_CASE("induced sequences agree on random instances") { expect_all_pass(run_oracle("win_hat", 23, 100)); }
}

TEST_SUITE("essential count") {
  TEST_CASE("two-state example prefers the swap") {
    ChannelParams f{{0.5, 0.3}, {0.2, 0.7}, {1.0, 1.0}, 1.0};
    ChannelParams t{{0.3}, {0.7}, {1.0}, 1.0};
    const EssentialUpdate u = essential_param_count(f, t, ParamSpace::discretized);
    CHECK(u.count == 1);
    CHECK(u.permutation == std::vector<std::size_t>{1, 0});
    CHECK(essential_cost(f, t, ParamSpace::discretized, {0, 1}) == 3);
    REQUIRE(u.edits.size() == 1);
    CHECK(u.edits[0].field == "c");
    CHECK(u.edits[0].index == 0);
    CHECK(u.edits[0].value == 0.0);
  }

  TEST_CASE("an already aligned channel costs nothing") {
    ChannelParams f{{0.5, 0.3, -0.2}, {0.2, 0.7, 1.0}, {1.0, 1.0, 2.0}, 1.0};
    ChannelParams t{{-0.2, 0.5, 0.3}, {1.0, 0.2, 0.7}, {2.0, 1.0, 1.0}, 1.0};
    const EssentialUpdate u = essential_param_count(f, t, ParamSpace::discretized);
    CHECK(u.count == 0);
    CHECK(u.permutation == std::vector<std::size_t>{2, 0, 1});
  }

  TEST_CASE("ties resolve to the lexicographically first permutation") {
    ChannelParams f{{0.5, 0.5}, {1.0, 1.0}, {1.0, 1.0}, 1.0};
    ChannelParams t{{0.5}, {1.0}, {1.0}, 1.0};
    CHECK(essential_param_count(f, t, ParamSpace::discretized).permutation == std::vector<std::size_t>{0, 1});
  }

  TEST_CASE("invalid inputs are rejected") {
    ChannelParams zero{{0.5, 0.0}, {1.0, 1.0}, {1.0, 1.0}, 1.0};
    ChannelParams t{{0.5}, {1.0}, {1.0}, 1.0};
    CHECK_THROWS_WITH(essential_param_count(zero, t, ParamSpace::discretized), doctest::Contains("nonzero"));
    ChannelParams big;
    big.a.assign(9, 0.5);
    big.b.assign(9, 1.0);
    big.c.assign(9, 1.0);
    CHECK_THROWS(essential_param_count(big, t, ParamSpace::discretized));
    ChannelParams f{{-1.0}, {1.0}, {1.0}, 0.1};
    ChannelParams other{{-1.0}, {1.0}, {1.0}, 0.2};
    CHECK_THROWS_WITH(essential_param_count(f, other, ParamSpace::zoh), doctest::Contains("step size"));
    CHECK(parse_param_space("zoh") == ParamSpace::zoh);
    CHECK_THROWS(parse_param_space("euler"));
  }

  TEST_CASE("minimum matches exhaustive search and the update is exact") {
    RngStream rng(30);
    for (std::size_t H = 1; H <= 5; ++H) {
      for (std::size_t Hs = 1; Hs <= H; ++Hs) {
        for (int trial = 0; trial < 50; ++trial) {
          const auto space = static_cast<ParamSpace>(trial % 3);
          const ChannelParams f = random_essential_frozen(rng, H, space);
          const ChannelParams t = random_essential_target(rng, f, Hs, space);
          const EssentialUpdate u = essential_param_count(f, t, space);
          CHECK(u.count == brute_force_min(f, t, space));
          CHECK(u.count == u.edits.size());
          CHECK(scan_gap(u.updated.discrete(space), t.discrete(space), randn(rng, 32)) <= 1e-9);
        }
      }
    }
  }

  TEST_CASE("three-state instances are functionally exact") { expect_all_pass(run_oracle("essential", 31, 100)); }
}

TEST_SUITE("sdt embedding") {
  TEST_CASE("L = 2, D = 2 target is reproduced") {
    RngStream rng(40);
    const auto reports = sdt_embedding_trial(rng, 40, 0, SdtShape{2, 2, 4, 1, 2}, 50);
    INFO(format_report(reports[0]));
    CHECK(reports[0].pass());
  }

  TEST_CASE("a masked copy needs no SSM changes beyond masking") {
    RngStream rng(41);
    ModelArch arch;
    arch.layers = 1;
    arch.channels = 4;
    arch.states = 3;
    arch.activations = {Activation::linear};
    const StackedModel frozen = init_model(arch, rng);
    StackedModel target = frozen;
    target.param("layers.0.u") = Tensor(Shape{4, 1});
    for (std::size_t h = 0; h < 3; ++h) target.param("layers.0.c").at(2, h) = 0.0;
    const SdtEmbedding e = construct_sdt_embedding(frozen, target);
    CHECK(e.layers[0].tuned_channels == 0);
    CHECK(e.layers[0].projection_update_rank == 0);
    CHECK(e.layers[0].zeroed_channels == std::vector<std::size_t>{2});
    CHECK(e.model.param("layers.0.a") == frozen.param("layers.0.a"));
    CHECK(e.model.param("layers.0.b") == frozen.param("layers.0.b"));
    const Tensor x = rng_draw(rng, Normal{0.0, 1.0}, {4, 16});
    CHECK(max_abs_diff(model_tokens(e.model, x), model_tokens(target, x)) <= 1e-12);
  }

  TEST_CASE("deeper instances are functionally exact") {
    RngStream rng(42);
    for (const SdtShape& s : {SdtShape{4, 8, 4, 2, 2}, SdtShape{4, 64, 8, 1, 4}, SdtShape{3, 5, 3, 2, 3}}) {
      const auto reports = sdt_embedding_trial(rng, 42, 0, s, 5);
      INFO(format_report(reports[0]));
      CHECK(reports[0].pass());
    }
  }

  TEST_CASE("inventory of the D = 64 shape") {
    RngStream rng(43);
    ModelArch fa;
    fa.layers = 4;
    fa.channels = 64;
    fa.states = 8;
    fa.activations.assign(4, Activation::linear);
    ModelArch ta = fa;
    ta.layers = 1;
    ta.states = 4;
    ta.activations = {Activation::linear};
    const StackedModel frozen = init_model(fa, rng);
    StackedModel target = init_model(ta, rng);
    target.param("layers.0.u") = Tensor(Shape{64, 1});
    const SdtEmbedding e = construct_sdt_embedding(frozen, target);
    CHECK(e.channel_budget == 16);
    CHECK(e.rank_budget == 4);
    for (std::size_t i = 0; i < 4; ++i) {
      CHECK(e.layers[i].emulating_channels.size() == 16);
      CHECK(e.layers[i].max_tuned_states <= 4);
    }
    for (std::size_t i = 0; i < 3; ++i) CHECK(e.layers[i].tuned_channels <= 16);
    // The group's last layer must carry the other 48 channels through its SSM.
    CHECK(e.layers[3].pass_through_channels.size() == 48);
    CHECK(e.layers[3].tuned_channels == 64);
    CHECK_FALSE(e.within_budget());
  }

  TEST_CASE("preconditions") {
    RngStream rng(44);
    ModelArch arch;
    arch.layers = 2;
    arch.channels = 2;
    arch.states = 2;
    const StackedModel relu_model = init_model(arch, rng);
    arch.activations.assign(2, Activation::linear);
    StackedModel target = init_model(arch, rng);
    CHECK_THROWS_WITH(construct_sdt_embedding(relu_model, target), doctest::Contains("linear"));
    CHECK_THROWS_WITH(construct_sdt_embedding(init_model(arch, rng), target), doctest::Contains("residual"));
  }
}
