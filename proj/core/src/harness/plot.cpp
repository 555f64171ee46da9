// Copyright 2026 The ssmtune Authors.
// SPDX-License-Identifier: Apache-2.0

#include "ssmtune/harness/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <stdexcept>
#include <vector>

namespace ssmtune {

namespace {

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

std::string escape(const std::string& s) {
  std::string out;
  for (char ch : s) {
    switch (ch) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += ch;
    }
  }
  return out;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string tick_label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

/// Affine map of [lo, hi] onto [a, b]; a degenerate range maps to the midpoint.
struct Axis {
  double lo, hi, a, b;
  double operator()(double v) const { return hi > lo ? a + (v - lo) / (hi - lo) * (b - a) : 0.5 * (a + b); }
};

std::vector<double> linear_ticks(double lo, double hi) {
  std::vector<double> t;
  if (!(hi > lo)) return {lo};
  const double raw = (hi - lo) / 5.0;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  double step = mag;
  for (double m : {1.0, 2.0, 5.0, 10.0}) {
    if (m * mag >= raw) {
      step = m * mag;
      break;
    }
  }
  for (double v = std::ceil(lo / step) * step; v <= hi + 1e-9 * step; v += step) t.push_back(v);
  return t;
}

}  // namespace

std::string render_svg(const MetricsTable& table, const PlotOptions& o) {
  if (table.rows.empty()) throw std::invalid_argument("plot needs at least one row");
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const MetricsRow& r = table.rows[i];
    if (!std::isfinite(r.trainable_pct) || !std::isfinite(r.best_metric)) {
      throw std::invalid_argument("row " + std::to_string(i + 1) + " (" + r.run_id + ", seed " +
                                  std::to_string(r.seed) + ") has a non-finite value");
    }
    if (o.log_y && r.best_metric <= 0.0) {
      throw std::invalid_argument("row " + std::to_string(i + 1) + " (" + r.run_id + ", seed " +
                                  std::to_string(r.seed) + ") has best_metric " + format_float(r.best_metric) +
                                  "; a log-scale y axis needs positive values");
    }
  }

  // Series in first-appearance order.
  std::vector<std::string> order;
  std::map<std::string, std::vector<std::pair<double, double>>> series;
  for (const MetricsRow& r : table.rows) {
    if (!series.contains(r.adapter)) order.push_back(r.adapter);
    series[r.adapter].emplace_back(r.trainable_pct, r.best_metric);
  }

  double x_lo = table.rows[0].trainable_pct, x_hi = x_lo;
  double y_lo = table.rows[0].best_metric, y_hi = y_lo;
  for (const MetricsRow& r : table.rows) {
    x_lo = std::min(x_lo, r.trainable_pct);
    x_hi = std::max(x_hi, r.trainable_pct);
    y_lo = std::min(y_lo, r.best_metric);
    y_hi = std::max(y_hi, r.best_metric);
  }
  if (x_hi == x_lo) {
    x_lo -= 1.0;
    x_hi += 1.0;
  }
  const double pad_x = 0.05 * (x_hi - x_lo);
  x_lo -= pad_x;
  x_hi += pad_x;
  auto ty = [&](double v) { return o.log_y ? std::log10(v) : v; };
  double ly = ty(y_lo), hy = ty(y_hi);
  if (o.log_y) {
    ly = std::floor(ly);
    hy = std::ceil(hy);
    if (hy == ly) hy += 1.0;
  } else {
    if (hy == ly) {
      ly -= 1.0;
      hy += 1.0;
    }
    const double pad_y = 0.05 * (hy - ly);
    ly -= pad_y;
    hy += pad_y;
  }

  const double left = 80, right = o.width - 200, top = 50, bottom = o.height - 60;
  const Axis X{x_lo, x_hi, left, right};
  const Axis Y{ly, hy, bottom, top};

  std::string s;
  s += "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(o.width) + "\" height=\"" +
       std::to_string(o.height) + "\" viewBox=\"0 0 " + std::to_string(o.width) + " " +
       std::to_string(o.height) + "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s += "<rect x=\"0\" y=\"0\" width=\"" + std::to_string(o.width) + "\" height=\"" + std::to_string(o.height) +
       "\" fill=\"white\"/>\n";
  s += "<text x=\"" + num(0.5 * (left + right)) + "\" y=\"28\" text-anchor=\"middle\" font-size=\"15\">" +
       escape(o.title) + "</text>\n";

  // Grid, ticks and tick labels.
  s += "<g stroke=\"#dddddd\" stroke-width=\"1\">\n";
  std::vector<double> xt = linear_ticks(x_lo, x_hi);
  std::vector<double> yt;
  if (o.log_y) {
    for (double e = ly; e <= hy + 1e-9; e += 1.0) yt.push_back(e);
  } else {
    yt = linear_ticks(ly, hy);
  }
  for (double v : xt) s += "<line x1=\"" + num(X(v)) + "\" y1=\"" + num(top) + "\" x2=\"" + num(X(v)) + "\" y2=\"" + num(bottom) + "\"/>\n";
  for (double v : yt) s += "<line x1=\"" + num(left) + "\" y1=\"" + num(Y(v)) + "\" x2=\"" + num(right) + "\" y2=\"" + num(Y(v)) + "\"/>\n";
  s += "</g>\n";
  s += "<rect x=\"" + num(left) + "\" y=\"" + num(top) + "\" width=\"" + num(right - left) + "\" height=\"" +
       num(bottom - top) + "\" fill=\"none\" stroke=\"black\"/>\n";
  for (double v : xt) {
    s += "<text x=\"" + num(X(v)) + "\" y=\"" + num(bottom + 18) + "\" text-anchor=\"middle\">" +
         tick_label(v) + "</text>\n";
  }
  for (double v : yt) {
    const std::string label = o.log_y ? "1e" + tick_label(v) : tick_label(v);
    s += "<text x=\"" + num(left - 6) + "\" y=\"" + num(Y(v) + 4) + "\" text-anchor=\"end\">" + label +
         "</text>\n";
  }
  s += "<text x=\"" + num(0.5 * (left + right)) + "\" y=\"" + num(o.height - 18) +
       "\" text-anchor=\"middle\">" + escape(o.x_label) + "</text>\n";
  s += "<text transform=\"translate(20 " + num(0.5 * (top + bottom)) +
       ") rotate(-90)\" text-anchor=\"middle\">" + escape(o.y_label + (o.log_y ? " (log scale)" : "")) +
       "</text>\n";

  // Series: a line through the points ordered by x, then one marker per row.
  for (std::size_t k = 0; k < order.size(); ++k) {
    const char* color = kPalette[k % std::size(kPalette)];
    auto pts = series[order[k]];
    std::stable_sort(pts.begin(), pts.end());
    s += "<g class=\"series\" data-adapter=\"" + escape(order[k]) + "\">\n";
    if (pts.size() > 1) {
      s += "<polyline fill=\"none\" stroke=\"" + std::string(color) + "\" stroke-width=\"1.5\" points=\"";
      for (std::size_t i = 0; i < pts.size(); ++i) {
        s += (i ? " " : "") + num(X(pts[i].first)) + "," + num(Y(ty(pts[i].second)));
      }
      s += "\"/>\n";
    }
    for (const auto& [x, y] : pts) {
      s += "<circle cx=\"" + num(X(x)) + "\" cy=\"" + num(Y(ty(y))) + "\" r=\"4\" fill=\"" + color + "\"/>\n";
    }
    s += "</g>\n";
  }

  // Legend.
  const double lx = right + 16;
  for (std::size_t k = 0; k < order.size(); ++k) {
    const double ly0 = top + 8 + 20.0 * static_cast<double>(k);
    s += "<rect x=\"" + num(lx) + "\" y=\"" + num(ly0) + "\" width=\"12\" height=\"12\" fill=\"" +
         kPalette[k % std::size(kPalette)] + "\"/>\n";
    s += "<text x=\"" + num(lx + 18) + "\" y=\"" + num(ly0 + 10) + "\">" + escape(order[k]) + "</text>\n";
  }
  s += "</svg>\n";
  return s;
}

void plot_svg(const MetricsTable& table, const std::filesystem::path& path, const PlotOptions& options) {
  const std::string svg = render_svg(table, options);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << svg;
  out.flush();
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

}  // namespace ssmtune
