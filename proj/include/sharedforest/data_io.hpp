// Copyright 2026 The sharedforest Authors. All Rights Reserved.
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//     http://www.apache.org/licenses/LICENSE-2.0
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "sharedforest/error.hpp"

namespace sharedforest {

enum class ModelKind { MixedResponse, GammaHurdle, LogNormalHurdle };

inline std::string_view to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::MixedResponse: return "mixed";
    case ModelKind::GammaHurdle: return "gamma_hurdle";
    case ModelKind::LogNormalHurdle: return "lognormal_hurdle";
  }
  return "?";
}

inline ModelKind parse_model_kind(std::string_view name) {
  if (name == "mixed") return ModelKind::MixedResponse;
  if (name == "gamma_hurdle" || name == "gamma") return ModelKind::GammaHurdle;
  if (name == "lognormal_hurdle" || name == "lognormal") return ModelKind::LogNormalHurdle;
  throw ConfigError("model: unknown kind '" + std::string(name) + "' (mixed | gamma_hurdle | lognormal_hurdle)");
}

/// Maps raw predictor values to (average rank)/(n+1) of the training column;
/// unseen values are interpolated between neighbouring training values.
class QuantileMap {
 public:
  QuantileMap() = default;

  /// Builds the map and returns the normalized training column.
  static std::pair<QuantileMap, std::vector<double>> fit(std::span<const double> column) {
    const std::size_t n = column.size();
    if (n == 0) throw DataError(DataErrorCode::MissingValue, "quantile_normalize: empty column");
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return column[a] < column[b]; });
    QuantileMap map;
    map.n_ = n;
    std::vector<double> out(n);
    const double denom = static_cast<double>(n) + 1.0;
    for (std::size_t k = 0; k < n;) {
      std::size_t e = k;
      while (e + 1 < n && column[order[e + 1]] == column[order[k]]) ++e;
      // ranks k+1 .. e+1 share their average
      const double avg_rank = 0.5 * (static_cast<double>(k + 1) + static_cast<double>(e + 1));
      const double u = avg_rank / denom;
      map.values_.push_back(column[order[k]]);
      map.normalized_.push_back(u);
      for (std::size_t j = k; j <= e; ++j) out[order[j]] = u;
      k = e + 1;
    }
    return {std::move(map), std::move(out)};
  }

  static QuantileMap from_parts(std::size_t n, std::vector<double> values, std::vector<double> normalized) {
    QuantileMap map;
    map.n_ = n;
    map.values_ = std::move(values);
    map.normalized_ = std::move(normalized);
    return map;
  }

  double operator()(double v) const {
    const double lo = 1.0 / (static_cast<double>(n_) + 1.0);
    const double hi = static_cast<double>(n_) / (static_cast<double>(n_) + 1.0);
    if (std::isnan(v)) throw DataError(DataErrorCode::MissingValue, "quantile map: missing value");
    const auto it = std::lower_bound(values_.begin(), values_.end(), v);
    if (it == values_.end()) return hi;
    const auto k = static_cast<std::size_t>(it - values_.begin());
    if (*it == v) return normalized_[k];
    if (k == 0) return lo;
    const double x0 = values_[k - 1];
    const double x1 = values_[k];
    const double f = (v - x0) / (x1 - x0);
    return std::clamp(normalized_[k - 1] + f * (normalized_[k] - normalized_[k - 1]), lo, hi);
  }

  std::size_t size() const { return n_; }
  const std::vector<double>& values() const { return values_; }
  const std::vector<double>& normalized() const { return normalized_; }

 private:
  std::size_t n_ = 0;
  std::vector<double> values_;      // sorted distinct training values
  std::vector<double> normalized_;  // their normalized positions
};

inline std::vector<double> quantile_normalize(std::span<const double> column) {
  return QuantileMap::fit(column).second;
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> columns;
  std::size_t rows = 0;

  std::optional<std::size_t> find(std::string_view name) const {
    for (std::size_t j = 0; j < header.size(); ++j)
      if (header[j] == name) return j;
    return std::nullopt;
  }
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
  return s;
}

inline std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.push_back(trim(line.substr(start)));
      return out;
    }
    out.push_back(trim(line.substr(start, pos - start)));
    start = pos + 1;
  }
}

inline double parse_cell(std::string_view cell, std::size_t line, std::size_t column, std::string_view name) {
  const std::string where =
      "line " + std::to_string(line) + ", column " + std::to_string(column + 1) + " ('" + std::string(name) + "')";
  if (cell.empty() || cell == "NA" || cell == "NaN" || cell == "nan")
    throw DataError(DataErrorCode::MissingValue, "missing value at " + where);
  double v = 0.0;
  const char* first = cell.data();
  const char* last = cell.data() + cell.size();
  if (*first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || !std::isfinite(v))
    throw DataError(DataErrorCode::ParseError, "non-numeric cell '" + std::string(cell) + "' at " + where);
  return v;
}

}  // namespace detail

inline CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError(DataErrorCode::MissingFile, "cannot open '" + path + "'");
  CsvTable table;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!detail::trim(line).empty()) break;
  }
  if (line_no == 0 || detail::trim(line).empty())
    throw DataError(DataErrorCode::MissingColumn, "'" + path + "' has no header row");
  for (auto h : detail::split_commas(line)) table.header.emplace_back(h);
  table.columns.assign(table.header.size(), {});
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    const auto cells = detail::split_commas(line);
    if (cells.size() != table.header.size())
      throw DataError(DataErrorCode::RaggedRow, "'" + path + "' line " + std::to_string(line_no) + ": expected " +
                                                    std::to_string(table.header.size()) + " fields, found " +
                                                    std::to_string(cells.size()));
    for (std::size_t j = 0; j < cells.size(); ++j)
      table.columns[j].push_back(detail::parse_cell(cells[j], line_no, j, table.header[j]));
    ++table.rows;
  }
  return table;
}

/// Shortest round-trip decimal form.
inline std::string format_double(double v) {
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  (void)ec;
  return std::string(buf, ptr);
}

inline void write_csv(const std::string& path, const std::vector<std::string>& header,
                      const std::vector<std::vector<double>>& columns) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(DataErrorCode::MissingFile, "cannot write '" + path + "'");
  for (std::size_t j = 0; j < header.size(); ++j) out << (j ? "," : "") << header[j];
  out << '\n';
  const std::size_t rows = columns.empty() ? 0 : columns.front().size();
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < columns.size(); ++j) out << (j ? "," : "") << format_double(columns[j][i]);
    out << '\n';
  }
}

struct DataSchema {
  std::string response;
  std::string binary;                   // optional second outcome (mixed model)
  std::vector<std::string> predictors;  // empty: every other column
};

struct Dataset {
  std::vector<std::string> predictor_names;
  std::size_t n = 0;
  std::size_t p = 0;
  std::vector<double> raw_x;  // row-major n x p
  std::vector<double> x;      // normalized, row-major
  std::vector<double> y;
  std::vector<double> binary;
  std::vector<QuantileMap> maps;

  std::span<const double> row(std::size_t i) const { return {x.data() + i * p, p}; }
};

/// Selects predictor columns and the response(s) from a parsed table.
inline Dataset dataset_from_table(const CsvTable& table, const DataSchema& schema, bool require_response = true) {
  Dataset d;
  d.n = table.rows;
  std::vector<std::size_t> cols;
  auto need = [&](const std::string& name) {
    const auto j = table.find(name);
    if (!j) throw DataError(DataErrorCode::MissingColumn, "column '" + name + "' not found in header");
    return *j;
  };
  std::optional<std::size_t> ycol;
  std::optional<std::size_t> zcol;
  if (!schema.response.empty()) {
    if (require_response) ycol = need(schema.response);
    else ycol = table.find(schema.response);
  }
  if (!schema.binary.empty()) {
    if (require_response) zcol = need(schema.binary);
    else zcol = table.find(schema.binary);
  }
  if (schema.predictors.empty()) {
    for (std::size_t j = 0; j < table.header.size(); ++j)
      if (j != ycol && j != zcol) cols.push_back(j);
  } else {
    for (const auto& name : schema.predictors) cols.push_back(need(name));
  }
  if (cols.empty()) throw DataError(DataErrorCode::MissingColumn, "no predictor columns");
  d.p = cols.size();
  for (std::size_t j : cols) d.predictor_names.push_back(table.header[j]);
  d.raw_x.resize(d.n * d.p);
  for (std::size_t k = 0; k < d.p; ++k)
    for (std::size_t i = 0; i < d.n; ++i) d.raw_x[i * d.p + k] = table.columns[cols[k]][i];
  if (ycol) d.y = table.columns[*ycol];
  if (zcol) d.binary = table.columns[*zcol];
  return d;
}

/// Fits quantile maps on the raw predictors and fills `x`.
inline void normalize_predictors(Dataset& d) {
  d.maps.clear();
  d.x.assign(d.n * d.p, 0.0);
  std::vector<double> col(d.n);
  for (std::size_t k = 0; k < d.p; ++k) {
    for (std::size_t i = 0; i < d.n; ++i) col[i] = d.raw_x[i * d.p + k];
    auto [map, u] = QuantileMap::fit(col);
    for (std::size_t i = 0; i < d.n; ++i) d.x[i * d.p + k] = u[i];
    d.maps.push_back(std::move(map));
  }
}

/// Applies stored maps to new raw predictors.
inline void apply_predictor_maps(Dataset& d, const std::vector<QuantileMap>& maps) {
  if (maps.size() != d.p) throw DataError(DataErrorCode::SchemaMismatch, "predictor count differs from the model");
  d.maps = maps;
  d.x.assign(d.n * d.p, 0.0);
  for (std::size_t i = 0; i < d.n; ++i)
    for (std::size_t k = 0; k < d.p; ++k) d.x[i * d.p + k] = maps[k](d.raw_x[i * d.p + k]);
}

inline Dataset load_csv(const std::string& path, const DataSchema& schema) {
  Dataset d = dataset_from_table(read_csv(path), schema);
  if (d.n == 0) throw DataError(DataErrorCode::MissingValue, "'" + path + "' has no data rows");
  normalize_predictors(d);
  return d;
}

inline void write_dataset_csv(const std::string& path, const Dataset& d, const std::string& response_name,
                              const std::string& binary_name = {}) {
  std::vector<std::string> header = d.predictor_names;
  std::vector<std::vector<double>> columns(d.p, std::vector<double>(d.n));
  for (std::size_t i = 0; i < d.n; ++i)
    for (std::size_t k = 0; k < d.p; ++k) columns[k][i] = d.raw_x[i * d.p + k];
  if (!d.y.empty()) {
    header.push_back(response_name);
    columns.push_back(d.y);
  }
  if (!d.binary.empty() && !binary_name.empty()) {
    header.push_back(binary_name);
    columns.push_back(d.binary);
  }
  write_csv(path, header, columns);
}

/// Affine map between the working response and the original scale.
struct ResponseScaling {
  ModelKind kind = ModelKind::MixedResponse;
  double center = 0.0;  // mean of y (mixed) or of log y (log-normal); 0 for gamma
  double scale = 1.0;   // sd of y / log y, or the mean positive y (gamma)
};

struct WorkingResponse {
  std::vector<double> value;   // standardized y, standardized log y, or y / mean (zeros stay 0)
  std::vector<char> positive;  // y > 0 (hurdle) or the binary outcome (mixed)
  ResponseScaling scaling;
  std::size_t num_positive = 0;
};

namespace detail {

inline std::pair<double, double> mean_sd(const std::vector<double>& v) {
  const double n = static_cast<double>(v.size());
  double mean = 0.0;
  for (double a : v) mean += a;
  mean /= n;
  double ss = 0.0;
  for (double a : v) ss += (a - mean) * (a - mean);
  return {mean, v.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0};
}

}  // namespace detail

/// Working response for a model; `binary` is required for the mixed model.
inline WorkingResponse preprocess_response(std::span<const double> y, ModelKind kind,
                                           std::span<const double> binary = {}) {
  WorkingResponse out;
  out.scaling.kind = kind;
  const std::size_t n = y.size();
  out.value.assign(n, 0.0);
  out.positive.assign(n, 0);

  if (kind == ModelKind::MixedResponse) {
    if (binary.size() != n)
      throw DataError(DataErrorCode::MissingColumn, "mixed model needs a binary outcome for every row");
    for (std::size_t i = 0; i < n; ++i) {
      if (binary[i] != 0.0 && binary[i] != 1.0)
        throw DataError(DataErrorCode::ParseError, "binary outcome must be 0 or 1 (row " + std::to_string(i + 1) + ")");
      out.positive[i] = binary[i] == 1.0;
      out.num_positive += out.positive[i] ? 1 : 0;
    }
    const auto [mean, sd] = detail::mean_sd(std::vector<double>(y.begin(), y.end()));
    if (!(sd > 0.0)) throw DataError(DataErrorCode::DegenerateResponse, "response has zero variance");
    out.scaling.center = mean;
    out.scaling.scale = sd;
    for (std::size_t i = 0; i < n; ++i) out.value[i] = (y[i] - mean) / sd;
    return out;
  }

  std::vector<double> pos;
  for (std::size_t i = 0; i < n; ++i) {
    if (y[i] < 0.0)
      throw DataError(DataErrorCode::NegativeResponse, "negative response at row " + std::to_string(i + 1));
    if (y[i] > 0.0) {
      out.positive[i] = 1;
      pos.push_back(kind == ModelKind::LogNormalHurdle ? std::log(y[i]) : y[i]);
    }
  }
  out.num_positive = pos.size();
  if (pos.size() < 2) throw DataError(DataErrorCode::DegenerateResponse, "fewer than two positive responses");
  const auto [mean, sd] = detail::mean_sd(pos);
  if (kind == ModelKind::LogNormalHurdle) {
    if (!(sd > 0.0)) throw DataError(DataErrorCode::DegenerateResponse, "positive responses are all equal");
    out.scaling.center = mean;
    out.scaling.scale = sd;
    for (std::size_t i = 0; i < n; ++i)
      if (out.positive[i]) out.value[i] = (std::log(y[i]) - mean) / sd;
  } else {
    out.scaling.center = 0.0;
    out.scaling.scale = mean;
    for (std::size_t i = 0; i < n; ++i)
      if (out.positive[i]) out.value[i] = y[i] / mean;
  }
  return out;
}

}  // namespace sharedforest
