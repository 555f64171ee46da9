// Copyright 2026 The ssmtune Authors.
// SPDX-License-Identifier: Apache-2.0

#include "ssmtune/num/rng.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace ssmtune {

namespace {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace

RngStream::RngStream(std::uint64_t seed, std::uint64_t stream_id)
    : seed_(seed), key_(mix64(mix64(seed) ^ (stream_id * kGolden + 0x632BE59BD9B4E019ULL))) {}

std::uint64_t RngStream::next_u64() {
  ++counter_;
  return mix64(key_ + counter_ * kGolden);
}

double RngStream::next_double() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::uniform(double low, double high) {
  if (!(low <= high)) throw std::invalid_argument("uniform: low must not exceed high");
  return low + (high - low) * next_double();
}

double RngStream::normal(double mean, double stddev) {
  if (!(stddev >= 0.0)) throw std::invalid_argument("normal: stddev must be >= 0");
  if (has_spare_) {
    has_spare_ = false;
    return mean + stddev * spare_;
  }
  // Box-Muller; 1 - u keeps the log argument in (0, 1].
  const double u1 = 1.0 - next_double();
  const double u2 = next_double();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  spare_ = radius * std::sin(angle);
  has_spare_ = true;
  return mean + stddev * radius * std::cos(angle);
}

std::int64_t RngStream::integer(std::int64_t low, std::int64_t high) {
  if (low >= high) throw std::invalid_argument("integer: empty range");
  const auto span = static_cast<std::uint64_t>(high - low);
  // Rejection sampling removes modulo bias.
  const std::uint64_t limit = UINT64_MAX - (UINT64_MAX % span);
  std::uint64_t x = next_u64();
  while (x >= limit) x = next_u64();
  return low + static_cast<std::int64_t>(x % span);
}

Tensor rng_draw(RngStream& stream, const Distribution& dist, const Shape& shape) {
  Tensor out(shape);
  std::visit(
      [&](const auto& d) {
        using D = std::decay_t<decltype(d)>;
        if constexpr (std::is_same_v<D, Uniform>) {
          if (!(d.low <= d.high)) throw std::invalid_argument("uniform: low must not exceed high");
          for (auto& x : out.data()) x = stream.uniform(d.low, d.high);
        } else if constexpr (std::is_same_v<D, Normal>) {
          if (!(d.stddev >= 0.0)) throw std::invalid_argument("normal: stddev must be >= 0");
          for (auto& x : out.data()) x = stream.normal(d.mean, d.stddev);
        } else {
          if (d.low >= d.high) throw std::invalid_argument("integer: empty range");
          for (auto& x : out.data()) x = static_cast<double>(stream.integer(d.low, d.high));
        }
      },
      dist);
  return out;
}

}  // namespace ssmtune
