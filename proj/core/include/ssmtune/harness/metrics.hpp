// Copyright 2026 The ssmtune Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace ssmtune {

struct MetricsRow {
  std::string run_id;
  std::uint64_t seed = 0;
  std::string adapter;
  double trainable_pct = 0.0;
  double best_metric = 0.0;
  double seconds = 0.0;

  bool operator==(const MetricsRow&) const = default;
};

/// One row per (run id, seed).
struct MetricsTable {
  std::vector<MetricsRow> rows;
};

/// Fixed column order of the metrics file.
inline constexpr const char* kMetricsHeader = "run_id,seed,adapter,trainable_pct,best_metric,seconds";

/// Six significant digits ("%.6g"), the form every float takes in the metrics file.
std::string format_float(double v);

/// Header then one LF-terminated line per row. Throws on an empty table, on a
/// duplicate (run id, seed) pair, or on a text field holding a comma, quote or line break.
std::string format_metrics(const MetricsTable& table);
/// Writes format_metrics(table); I/O failures throw naming the path.
void emit_metrics(const MetricsTable& table, const std::filesystem::path& path);

/// Parses the metrics format; errors name the line.
MetricsTable parse_metrics(const std::string& text);
MetricsTable read_metrics(const std::filesystem::path& path);

}  // namespace ssmtune
