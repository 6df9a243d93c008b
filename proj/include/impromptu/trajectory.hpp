// Copyright 2026 The Impromptu Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <istream>
#include <numbers>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "impromptu/errors.hpp"

namespace impromptu {

struct SinusoidComponent {
  double amplitude = 0.0;
  double omega = 0.0;  // rad/s
  double phase = 0.0;  // rad
};

// Desired output y_d(k) on a uniform grid t = k dt.
//
// Either a sum of sinusoids plus offset, or resampled samples. Samples are
// clamped at both ends, so y_d(k + r) is defined for every k.
class TrajectorySpec {
 public:
  static TrajectorySpec sinusoids(std::vector<SinusoidComponent> components, double offset, double dt,
                                  double duration) {
    check_grid(dt, duration);
    for (const auto& c : components) {
      if (!std::isfinite(c.amplitude) || !std::isfinite(c.omega) || !std::isfinite(c.phase)) {
        throw InvalidArgument("trajectory: non-finite sinusoid parameter");
      }
    }
    if (!std::isfinite(offset)) throw InvalidArgument("trajectory: non-finite offset");
    TrajectorySpec spec;
    spec.components_ = std::move(components);
    spec.offset_ = offset;
    spec.dt_ = dt;
    spec.duration_ = duration;
    return spec;
  }

  // Samples at t = k dt, k = 0..n-1.
  static TrajectorySpec samples(std::vector<double> values, double dt) {
    if (values.empty()) throw InvalidArgument("trajectory: no samples");
    for (double v : values) {
      if (!std::isfinite(v)) throw InvalidArgument("trajectory: non-finite sample");
    }
    const double duration = dt * static_cast<double>(values.size() - 1);
    check_grid(dt, duration);
    TrajectorySpec spec;
    spec.samples_ = std::move(values);
    spec.dt_ = dt;
    spec.duration_ = duration;
    return spec;
  }

  bool is_sampled() const { return !samples_.empty(); }
  double dt() const { return dt_; }
  double duration() const { return duration_; }
  const std::vector<SinusoidComponent>& components() const { return components_; }
  double offset() const { return offset_; }
  const std::vector<double>& sample_values() const { return samples_; }

  // Number of simulated steps covering [0, duration).
  std::size_t steps() const {
    return static_cast<std::size_t>(std::floor(duration_ / dt_ + 1e-9));
  }

  double at_time(double t) const {
    double v = offset_;
    for (const auto& c : components_) v += c.amplitude * std::sin(c.omega * t + c.phase);
    return v;
  }

  double operator()(std::size_t k) const {
    if (is_sampled()) return samples_[std::min(k, samples_.size() - 1)];
    return at_time(dt_ * static_cast<double>(k));
  }

  // Analytic sup-norm bound.
  double bound() const {
    if (is_sampled()) {
      double m = 0.0;
      for (double v : samples_) m = std::max(m, std::abs(v));
      return m;
    }
    double b = std::abs(offset_);
    for (const auto& c : components_) b += std::abs(c.amplitude);
    return b;
  }

 private:
  static void check_grid(double dt, double duration) {
    if (!(dt > 0.0) || !std::isfinite(dt)) throw InvalidArgument("trajectory: dt must be positive");
    if (!(duration >= 0.0) || !std::isfinite(duration)) throw InvalidArgument("trajectory: bad duration");
  }

  std::vector<SinusoidComponent> components_;
  double offset_ = 0.0;
  std::vector<double> samples_;
  double dt_ = 1.0;
  double duration_ = 0.0;
};

inline constexpr double kTestTrajectoryDt = 1.5e-3;
inline constexpr double kTestTrajectoryDuration = 48.0;

// y_d(t) = sin(2 pi t / 8) + cos(2 pi t / 16) - 1.
inline TrajectorySpec make_test_trajectory(double duration = kTestTrajectoryDuration,
                                           double dt = kTestTrajectoryDt) {
  constexpr double pi = std::numbers::pi;
  return TrajectorySpec::sinusoids({{1.0, 2.0 * pi / 8.0, 0.0}, {1.0, 2.0 * pi / 16.0, pi / 2.0}}, -1.0, dt,
                                   duration);
}

// Piecewise-linear resampling of (t, v) onto t0 + k dt. Time must be strictly
// increasing.
inline std::vector<double> resample_linear(const std::vector<double>& t, const std::vector<double>& v,
                                           double dt) {
  if (t.size() != v.size() || t.empty()) throw InvalidArgument("resample: empty or mismatched columns");
  if (!(dt > 0.0)) throw InvalidArgument("resample: dt must be positive");
  for (std::size_t i = 1; i < t.size(); ++i) {
    if (!(t[i] > t[i - 1])) throw InvalidArgument("resample: time column is not strictly increasing");
  }
  const double span = t.back() - t.front();
  const auto n = static_cast<std::size_t>(std::floor(span / dt + 1e-9)) + 1;
  std::vector<double> out;
  out.reserve(n);
  std::size_t seg = 0;
  for (std::size_t k = 0; k < n; ++k) {
    const double tk = std::min(t.front() + dt * static_cast<double>(k), t.back());
    while (seg + 2 < t.size() && t[seg + 1] < tk) ++seg;
    if (t.size() == 1) {
      out.push_back(v[0]);
      continue;
    }
    const double w = std::clamp((tk - t[seg]) / (t[seg + 1] - t[seg]), 0.0, 1.0);
    out.push_back(v[seg] + w * (v[seg + 1] - v[seg]));
  }
  return out;
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> columns;

  int column_index(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i] == name) return static_cast<int>(i);
    }
    return -1;
  }
};

inline std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t\r\n\xEF\xBB\xBF");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

// Numeric CSV with one header row.
inline CsvTable read_csv_table(std::istream& in) {
  CsvTable table;
  std::string line;
  while (std::getline(in, line)) {
    if (!trim(line).empty()) break;
  }
  if (trim(line).empty()) throw InvalidArgument("csv: empty input");
  table.header = split_csv_line(trim(line));
  table.columns.assign(table.header.size(), {});
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (trim(line).empty()) continue;
    const auto cells = split_csv_line(trim(line));
    if (cells.size() != table.header.size()) {
      throw InvalidArgument("csv: row " + std::to_string(row) + " has the wrong number of fields");
    }
    for (std::size_t c = 0; c < cells.size(); ++c) {
      std::size_t used = 0;
      double value = 0.0;
      try {
        value = std::stod(cells[c], &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != cells[c].size() || cells[c].empty()) {
        throw InvalidArgument("csv: row " + std::to_string(row) + " has a non-numeric field");
      }
      if (!std::isfinite(value)) throw InvalidArgument("csv: row " + std::to_string(row) + " is not finite");
      table.columns[c].push_back(value);
    }
  }
  return table;
}

// Reads a `t,<column>` trajectory (`t,yd` for single-output files, or one
// axis of a `t,x,y,z` file) and resamples it to dt.
inline TrajectorySpec ingest_csv_trajectory(std::istream& in, const std::string& column, double dt,
                                            const std::string& time_column = "t") {
  const CsvTable table = read_csv_table(in);
  const int ti = table.column_index(time_column);
  const int vi = table.column_index(column);
  if (ti < 0) throw InvalidArgument("csv: missing time column '" + time_column + "'");
  if (vi < 0) throw InvalidArgument("csv: missing column '" + column + "'");
  if (table.columns[ti].empty()) throw InvalidArgument("csv: no data rows");
  return TrajectorySpec::samples(resample_linear(table.columns[ti], table.columns[vi], dt), dt);
}

inline TrajectorySpec ingest_csv_trajectory(const std::string& path, const std::string& column, double dt,
                                            const std::string& time_column = "t") {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open trajectory file " + path);
  return ingest_csv_trajectory(in, column, dt, time_column);
}

}  // namespace impromptu
