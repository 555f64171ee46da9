// Copyright 2026 The ssmtune Authors.
// SPDX-License-Identifier: Apache-2.0

#include "ssmtune/harness/metrics.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace ssmtune {

std::string format_float(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

namespace {

void check_field(const std::string& s, const char* what, std::size_t row) {
  if (s.find_first_of(",\"\r\n") != std::string::npos) {
    throw std::invalid_argument("metrics row " + std::to_string(row) + ": " + what +
                                " must not contain commas, quotes or line breaks");
  }
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    out.push_back(line.substr(start, comma - start));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

double parse_double(const std::string& s, std::size_t line, const char* column) {
  double v = 0.0;
  const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || end != s.data() + s.size() || s.empty()) {
    throw std::invalid_argument("metrics line " + std::to_string(line) + ": bad " + column + " '" + s + "'");
  }
  return v;
}

}  // namespace

std::string format_metrics(const MetricsTable& table) {
  if (table.rows.empty()) throw std::invalid_argument("metrics table is empty");
  std::set<std::pair<std::string, std::uint64_t>> keys;
  std::string out = std::string(kMetricsHeader) + "\n";
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    const MetricsRow& r = table.rows[i];
    check_field(r.run_id, "run_id", i);
    check_field(r.adapter, "adapter", i);
    if (!keys.emplace(r.run_id, r.seed).second) {
      throw std::invalid_argument("metrics row " + std::to_string(i) + ": duplicate (run_id, seed) = (" +
                                  r.run_id + ", " + std::to_string(r.seed) + ")");
    }
    out += r.run_id + "," + std::to_string(r.seed) + "," + r.adapter + "," + format_float(r.trainable_pct) +
           "," + format_float(r.best_metric) + "," + format_float(r.seconds) + "\n";
  }
  return out;
}

void emit_metrics(const MetricsTable& table, const std::filesystem::path& path) {
  const std::string text = format_metrics(table);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << text;
  out.flush();
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

MetricsTable parse_metrics(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kMetricsHeader) {
    throw std::invalid_argument(std::string("metrics line 1: expected header '") + kMetricsHeader + "'");
  }
  MetricsTable table;
  std::size_t n = 1;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    const auto f = split(line);
    if (f.size() != 6) {
      throw std::invalid_argument("metrics line " + std::to_string(n) + ": expected 6 fields, found " +
                                  std::to_string(f.size()));
    }
    MetricsRow r;
    r.run_id = f[0];
    const auto [end, ec] = std::from_chars(f[1].data(), f[1].data() + f[1].size(), r.seed);
    if (ec != std::errc() || end != f[1].data() + f[1].size() || f[1].empty()) {
      throw std::invalid_argument("metrics line " + std::to_string(n) + ": bad seed '" + f[1] + "'");
    }
    r.adapter = f[2];
    r.trainable_pct = parse_double(f[3], n, "trainable_pct");
    r.best_metric = parse_double(f[4], n, "best_metric");
    r.seconds = parse_double(f[5], n, "seconds");
    table.rows.push_back(std::move(r));
  }
  return table;
}

MetricsTable read_metrics(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_metrics(text.str());
}

}  // namespace ssmtune
