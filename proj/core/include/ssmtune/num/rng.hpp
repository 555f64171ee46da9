// Copyright 2026 The ssmtune Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <variant>

#include "ssmtune/num/tensor.hpp"

namespace ssmtune {

struct Uniform {
  double low = 0.0;
  double high = 1.0;
};
struct Normal {
  double mean = 0.0;
  double stddev = 1.0;
};
/// Integers in [low, high).
struct IntegerRange {
  std::int64_t low = 0;
  std::int64_t high = 1;
};
using Distribution = std::variant<Uniform, Normal, IntegerRange>;

/// Counter-based generator: the n-th draw is a pure function of (key, n), so a
/// stream is fully described by its seed, stream id and counter.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed, std::uint64_t stream_id = 0);

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 bits of resolution.
  double next_double();
  double uniform(double low, double high);
  double normal(double mean, double stddev);
  std::int64_t integer(std::int64_t low, std::int64_t high);

  /// An independent stream derived from this stream's seed.
  RngStream split(std::uint64_t stream_id) const { return RngStream(seed_, stream_id); }

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t seed_;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// Fills a tensor of `shape` from `dist`, advancing `stream`.
Tensor rng_draw(RngStream& stream, const Distribution& dist, const Shape& shape);

}  // namespace ssmtune
