// Copyright 2026 The ssmtune Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <string>

#include "ssmtune/harness/metrics.hpp"

namespace ssmtune {

struct PlotOptions {
  bool log_y = true;
  std::string title = "Approximation error against trainable parameters";
  std::string x_label = "Trainable parameters (% of frozen model)";
  std::string y_label = "Best validation MSE";
  int width = 720;
  int height = 460;
};

/// Static SVG scatter/line chart of best_metric against trainable_pct with one
/// series per adapter, a legend and axis labels. Data markers are the only
/// <circle> elements. Log scale rejects nonpositive values, naming the row.
std::string render_svg(const MetricsTable& table, const PlotOptions& options = {});
/// Writes render_svg; I/O failures throw naming the path.
void plot_svg(const MetricsTable& table, const std::filesystem::path& path, const PlotOptions& options = {});

}  // namespace ssmtune
