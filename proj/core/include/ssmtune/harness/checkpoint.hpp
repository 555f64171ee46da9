// Copyright 2026 The ssmtune Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>

#include "ssmtune/num/tensor.hpp"

namespace ssmtune {

/// Binary layout, all integers little-endian:
///   "SSMCKPT1", u64 entry count,
///   per entry in name order: u32 name length, name bytes, u32 rank, u64 extents[rank],
///                            u64 byte offset into the payload,
///   payload: every tensor's row-major float64 values, little-endian, back to back.
inline constexpr char kCheckpointMagic[] = "SSMCKPT1";

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string checkpoint_bytes(const ParamMap& params);
ParamMap checkpoint_parse(const std::string& bytes);

/// I/O failures throw CheckpointError naming the path.
void checkpoint_save(const ParamMap& params, const std::filesystem::path& path);
ParamMap checkpoint_read(const std::filesystem::path& path);

/// Overwrites `params` with the checkpoint's values. The checkpoint must hold
/// exactly the same names and shapes; the first mismatch is reported.
void checkpoint_load(ParamMap& params, const std::filesystem::path& path);

}  // namespace ssmtune
