// Copyright 2026 The ssmtune Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ssmtune/num/rng.hpp"
#include "ssmtune/ssm/model.hpp"
#include "ssmtune/ssm/s4.hpp"
#include "ssmtune/ssm/s6.hpp"

namespace ssmtune {

// ---- Prefixes and initial states ----

/// h0* = sum_m a_bar^(M-m) ⊙ b_bar * p_m. A scan from h0* on x reproduces
/// positions M+1.. of a zero-state scan on [P, x].
std::vector<double> prefix_to_initial_state(const DiscreteChannel& ch, const std::vector<double>& prefix);

/// H x M matrix whose column m is a_bar^(M-m) ⊙ b_bar.
Tensor reachability_matrix(const DiscreteChannel& ch, std::size_t M);

struct Reachability {
  std::size_t rank = 0;
  bool reachable_all = false;
};

/// Numerical rank (relative tolerance 1e-10) of the reachability matrix.
Reachability reachability_rank(const DiscreteChannel& ch, std::size_t M);

/// Minimum-norm prefix of length M whose injected state equals h0.
/// Requires M >= H, distinct a_bar entries and nonzero b_bar entries.
std::vector<double> initial_state_to_prefix(const DiscreteChannel& ch, const std::vector<double>& h0,
                                            std::size_t M);

// ---- Input-projection update for S6 ----

/// Copy of p with [w_b; w_c; w_dt_down] replaced by the rows of w.
S6Params with_stacked_w_s6(const S6Params& p, const Tensor& w);

/// W_in_hat with W_S6 W_in_hat = W_S6_bar W_in. Needs 2H + r <= D and full row
/// rank W_S6. The free block keeps W_in's component orthogonal to W_S6's row
/// space, which makes W_in_hat the closest such matrix to W_in.
Tensor construct_win_hat(const Tensor& w_s6_bar, const Tensor& w_s6, const Tensor& w_in);

// ---- Essential parameter count ----

enum class ParamSpace { discretized, bilinear, zoh };
const char* to_string(ParamSpace s);
ParamSpace parse_param_space(const std::string& s);

/// One S4 channel. For the discretized space a holds a_bar and b holds b_bar;
/// otherwise a, b are continuous and dt is the step size.
struct ChannelParams {
  std::vector<double> a, b, c;
  double dt = 1.0;

  std::size_t states() const { return a.size(); }
  /// Discretized form (identity for the discretized space).
  DiscreteChannel discrete(ParamSpace space) const;
};

struct ParamEdit {
  std::string field;  // "a" or "c"
  std::size_t index = 0;
  double value = 0.0;
};

struct EssentialUpdate {
  std::size_t count = 0;
  /// permutation[i] is the frozen state placed at position i.
  std::vector<std::size_t> permutation;
  std::vector<ParamEdit> edits;
  ChannelParams updated;
};

/// Entries closer than this count as already aligned.
inline constexpr double kAlignTolerance = 1e-12;

/// Cost of one permutation: redundant frozen states beyond position H* whose
/// contribution is nonzero, plus misaligned state entries, plus misaligned
/// b ⊙ c entries over the first H* positions.
std::size_t essential_cost(const ChannelParams& frozen, const ChannelParams& target, ParamSpace space,
                           const std::vector<std::size_t>& permutation);

/// Exhaustive minimum over permutations (H <= 8), lexicographically first on
/// ties, with the sparse update that realizes it. Continuous spaces compare
/// the target under the frozen step size. Zero frozen entries are rejected.
EssentialUpdate essential_param_count(const ChannelParams& frozen, const ChannelParams& target,
                                      ParamSpace space);

/// Random valid frozen channel: nonzero entries, negative continuous a.
ChannelParams random_essential_frozen(RngStream& rng, std::size_t H, ParamSpace space);

/// Random target of H* states that reuses some frozen entries, so partial
/// alignments and nontrivial permutations occur.
ChannelParams random_essential_target(RngStream& rng, const ChannelParams& frozen, std::size_t Hs,
                                      ParamSpace space);

// ---- Deep S4 embedding ----

struct LayerInventory {
  std::size_t target_layer = 0;
  bool group_final = false;
  std::vector<std::size_t> emulating_channels;
  std::vector<std::size_t> pass_through_channels;
  std::vector<std::size_t> zeroed_channels;
  /// Channels whose SSM parameters changed to anything other than c = 0.
  std::size_t tuned_channels = 0;
  /// Largest per-channel count of states whose a or b changed or whose c became nonzero.
  std::size_t max_tuned_states = 0;
  std::size_t projection_update_rank = 0;
  bool residual_touched = false;
  bool bias_touched = false;
};

struct SdtEmbedding {
  StackedModel model;
  std::vector<LayerInventory> layers;
  std::size_t channel_budget = 0;  // ceil(D L* / L)
  std::size_t state_budget = 0;    // H*
  std::size_t rank_budget = 0;     // ceil(L / L*), last layer exempt
  std::vector<std::string> violations;

  bool within_budget() const { return violations.empty(); }
};

/// Updates a frozen deep S4 model (linear activations, zero initial states) to
/// compute a target deep S4 model without residuals. Target layer k is
/// emulated by a contiguous group of at most ceil(L / L*) frozen layers: each
/// layer tunes a chunk of channels to the target's channels and passes the
/// rest through its residual; the group's last layer applies the target's
/// projection and bias, with its other channels tuned to pass-through.
SdtEmbedding construct_sdt_embedding(const StackedModel& frozen, const StackedModel& target);

// ---- Reports ----

struct OracleReport {
  std::string oracle;
  std::string instance;
  double discrepancy = 0.0;
  double threshold = 0.0;

  bool pass() const { return discrepancy <= threshold; }
};

std::string format_report(const OracleReport& r);

std::vector<std::string> oracle_names();

struct SdtShape {
  std::size_t L, D, H, Ls, Hs;
};

/// One random embedding instance: an equality report over `sequences` random
/// inputs of length 32 and a budget report counting violations.
std::vector<OracleReport> sdt_embedding_trial(RngStream& rng, std::uint64_t seed, std::size_t trial,
                                             const SdtShape& shape, std::size_t sequences);

/// Runs `trials` random instances of one oracle. Instances derive from
/// (seed, trial index) only, so results do not depend on scheduling.
std::vector<OracleReport> run_oracle(const std::string& name, std::uint64_t seed, std::size_t trials);

}  // namespace ssmtune
