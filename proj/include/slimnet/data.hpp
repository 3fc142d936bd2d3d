#pragma once

#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "slimnet/io.hpp"
#include "slimnet/tensor.hpp"

namespace slimnet {

enum class Split : std::uint8_t { Train, Val, Test };

// Per-feature affine parameters fitted on the training split.
struct StandardizeParams {
  Tensor mean;
  Tensor stddev;
};

struct Dataset {
  Tensor features;  // samples along axis 0
  std::vector<int> labels;
  std::size_t class_count = 0;
  std::vector<double> label_values;  // original label value per class index
  std::vector<Split> assignment;     // per sample
  bool standardized = false;
  StandardizeParams standardize_params;

  std::size_t sample_count() const { return features.extent(0); }
  std::size_t feature_count() const { return features.size() / sample_count(); }
};

inline std::vector<std::size_t> split_indices(const Dataset& ds, Split split) {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < ds.assignment.size(); ++i) {
    if (ds.assignment[i] == split) rows.push_back(i);
  }
  return rows;
}

struct Batch {
  Tensor features;
  std::vector<int> labels;
};

inline Batch make_batch(const Dataset& ds, const std::vector<std::size_t>& rows) {
  if (rows.empty()) throw ArgumentError("batch must contain at least one row");
  std::vector<std::size_t> shape = ds.features.shape();
  shape[0] = rows.size();
  Batch batch{Tensor(std::move(shape)), {}};
  batch.labels.reserve(rows.size());
  const std::size_t stride = ds.feature_count();
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= ds.sample_count()) {
      throw ArgumentError("row " + std::to_string(rows[r]) + " out of range");
    }
    for (std::size_t j = 0; j < stride; ++j) {
      batch.features[r * stride + j] = ds.features[rows[r] * stride + j];
    }
    batch.labels.push_back(ds.labels[rows[r]]);
  }
  return batch;
}

inline Tensor standardize_features(const Tensor& x, const StandardizeParams& params) {
  const std::size_t n = x.extent(0), d = x.size() / n;
  if (params.mean.size() != d || params.stddev.size() != d) {
    throw DimensionError("standardization parameters cover " +
                         std::to_string(params.mean.size()) + " features, data has " +
                         std::to_string(d));
  }
  Tensor out = x;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      out[i * d + j] = (x[i * d + j] - params.mean[j]) / params.stddev[j];
    }
  }
  return out;
}

inline Tensor unstandardize_features(const Tensor& x, const StandardizeParams& params) {
  const std::size_t n = x.extent(0), d = x.size() / n;
  if (params.mean.size() != d || params.stddev.size() != d) {
    throw DimensionError("standardization parameters cover " +
                         std::to_string(params.mean.size()) + " features, data has " +
                         std::to_string(d));
  }
  Tensor out = x;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      out[i * d + j] = x[i * d + j] * params.stddev[j] + params.mean[j];
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Delimited-text loading.
// ---------------------------------------------------------------------------

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
    s.remove_suffix(1);
  }
  return s;
}

inline bool parse_number(std::string_view cell, double& out) {
  cell = trim(cell);
  if (cell.empty()) return false;
  const char* end = cell.data() + cell.size();
  auto [ptr, ec] = std::from_chars(cell.data(), end, out);
  return ec == std::errc{} && ptr == end;
}

inline std::vector<std::string_view> split_fields(std::string_view line, char delimiter) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(delimiter, start);
    if (pos == std::string_view::npos) {
      fields.push_back(line.substr(start));
      return fields;
    }
    fields.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

}  // namespace detail

// Parses delimited numeric text. The first line is treated as a header when
// any of its cells is non-numeric; label_column names a header column or, for
// headerless files, a 0-based column index. Label values are remapped to
// 0..C-1 in ascending order of the original value.
inline Dataset parse_csv(const std::string& text, const std::string& label_column,
                         char delimiter = ',') {
  std::vector<std::string_view> lines;
  {
    std::size_t start = 0;
    while (start <= text.size()) {
      const std::size_t pos = text.find('\n', start);
      if (pos == std::string::npos) {
        if (start < text.size()) lines.push_back(std::string_view(text).substr(start));
        break;
      }
      lines.push_back(std::string_view(text).substr(start, pos - start));
      start = pos + 1;
    }
  }
  while (!lines.empty() && detail::trim(lines.back()).empty()) lines.pop_back();
  if (lines.empty()) throw ParseError(1, "file is empty");

  const std::vector<std::string_view> first = detail::split_fields(lines[0], delimiter);
  const std::size_t columns = first.size();
  if (columns < 2) {
    throw SchemaError("need at least one feature column and one label column, found " +
                      std::to_string(columns));
  }

  bool has_header = false;
  for (std::string_view cell : first) {
    double ignored;
    if (!detail::parse_number(cell, ignored)) has_header = true;
  }

  std::size_t label_index = columns;
  if (has_header) {
    for (std::size_t j = 0; j < columns; ++j) {
      if (detail::trim(first[j]) == label_column) label_index = j;
    }
  }
  if (label_index == columns) {
    // Fall back to a numeric column index (the only option without a header).
    std::size_t idx = 0;
    bool numeric = !label_column.empty();
    for (char c : label_column) {
      if (c < '0' || c > '9') numeric = false;
    }
    if (numeric) idx = std::stoull(label_column);
    if (!numeric || idx >= columns) {
      throw SchemaError("unknown label column '" + label_column + "' among " +
                        std::to_string(columns) + " columns");
    }
    label_index = idx;
  }

  const std::size_t first_data = has_header ? 1 : 0;
  const std::size_t n = lines.size() - first_data;
  if (n == 0) throw ParseError(lines.size(), "no data rows");

  Dataset ds;
  ds.features = Tensor({n, columns - 1});
  ds.labels.resize(n);
  std::vector<double> raw_labels(n);

  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t line_no = first_data + r + 1;
    const auto fields = detail::split_fields(lines[first_data + r], delimiter);
    if (fields.size() != columns) {
      throw ParseError(line_no, "expected " + std::to_string(columns) + " fields, got " +
                                    std::to_string(fields.size()));
    }
    std::size_t out_col = 0;
    for (std::size_t j = 0; j < columns; ++j) {
      double value;
      if (!detail::parse_number(fields[j], value)) {
        throw ParseError(line_no, "cannot parse '" + std::string(detail::trim(fields[j])) +
                                      "' as a number in column " + std::to_string(j));
      }
      if (j == label_index) {
        raw_labels[r] = value;
      } else {
        ds.features[r * (columns - 1) + out_col++] = value;
      }
    }
  }

  std::map<double, int> mapping;
  for (double v : raw_labels) mapping.emplace(v, 0);
  int next = 0;
  for (auto& [value, id] : mapping) {
    id = next++;
    ds.label_values.push_back(value);
  }
  for (std::size_t r = 0; r < n; ++r) ds.labels[r] = mapping[raw_labels[r]];
  ds.class_count = mapping.size();
  ds.assignment.assign(n, Split::Train);
  return ds;
}

inline Dataset load_csv(const std::string& path, const std::string& label_column,
                        char delimiter = ',') {
  return parse_csv(detail::read_file(path), label_column, delimiter);
}

inline std::string to_csv(const Dataset& ds) {
  const std::size_t d = ds.feature_count();
  std::string out;
  for (std::size_t j = 0; j < d; ++j) out += "f" + std::to_string(j) + ",";
  out += "label\n";
  for (std::size_t r = 0; r < ds.sample_count(); ++r) {
    for (std::size_t j = 0; j < d; ++j) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.17g", ds.features[r * d + j]);
      out += buf;
      out += ',';
    }
    out += std::to_string(
        ds.label_values.empty() ? ds.labels[r] : static_cast<int>(ds.label_values[ds.labels[r]]));
    out += '\n';
  }
  return out;
}

// ---------------------------------------------------------------------------
// Splitting and standardization.
// ---------------------------------------------------------------------------

// Seeded shuffle into train/val/test by the given fractions, then per-feature
// z-scoring fitted on the training rows and applied everywhere. Constant
// features keep stddev 1 so they pass through unscaled.
inline Dataset split_standardize(Dataset ds, const std::array<double, 3>& fractions,
                                 std::uint64_t seed) {
  double total = 0.0;
  for (double f : fractions) {
    if (f < 0.0) throw ArgumentError("split fractions must be nonnegative");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw ArgumentError("split fractions must sum to 1, got " + std::to_string(total));
  }

  const std::size_t n = ds.sample_count();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  SeededRng rng(seed);
  rng.shuffle(order);

  std::size_t n_train = static_cast<std::size_t>(std::llround(fractions[0] * static_cast<double>(n)));
  std::size_t n_val = static_cast<std::size_t>(std::llround(fractions[1] * static_cast<double>(n)));
  n_train = std::min(n_train, n);
  n_val = std::min(n_val, n - n_train);

  ds.assignment.assign(n, Split::Test);
  for (std::size_t i = 0; i < n_train; ++i) ds.assignment[order[i]] = Split::Train;
  for (std::size_t i = n_train; i < n_train + n_val; ++i) ds.assignment[order[i]] = Split::Val;

  const std::size_t d = ds.feature_count();
  Tensor mean({d}), stddev({d});
  if (n_train > 0) {
    for (std::size_t i = 0; i < n_train; ++i) {
      const std::size_t row = order[i];
      for (std::size_t j = 0; j < d; ++j) mean[j] += ds.features[row * d + j];
    }
    mean.scale(1.0 / static_cast<double>(n_train));
    for (std::size_t i = 0; i < n_train; ++i) {
      const std::size_t row = order[i];
      for (std::size_t j = 0; j < d; ++j) {
        const double delta = ds.features[row * d + j] - mean[j];
        stddev[j] += delta * delta;
      }
    }
    for (std::size_t j = 0; j < d; ++j) {
      stddev[j] = std::sqrt(stddev[j] / static_cast<double>(n_train));
      if (stddev[j] == 0.0) stddev[j] = 1.0;
    }
  } else {
    for (std::size_t j = 0; j < d; ++j) stddev[j] = 1.0;
  }

  ds.standardize_params = StandardizeParams{std::move(mean), std::move(stddev)};
  ds.features = standardize_features(ds.features, ds.standardize_params);
  ds.standardized = true;
  return ds;
}

// ---------------------------------------------------------------------------
// Synthetic classification data with known intrinsic width.
// ---------------------------------------------------------------------------

struct SyntheticSpec {
  std::size_t samples = 1000;
  std::size_t features = 16;
  std::size_t informative = 4;
  std::size_t classes = 2;
  double noise = 0.0;  // probability a label is resampled uniformly
  std::uint64_t seed = 0;
};

// Standard-normal features whose labels are the argmax of a random linear map
// of the first `informative` columns, optionally corrupted by uniform label
// noise. The remaining columns never influence the label, so a first layer
// needs only the informative columns' worth of width.
inline Dataset gen_synthetic(const SyntheticSpec& spec, Tensor* out_map = nullptr) {
  if (spec.samples == 0) throw ArgumentError("need at least one sample");
  if (spec.informative == 0 || spec.informative > spec.features) {
    throw ArgumentError("informative features must be in 1.." + std::to_string(spec.features));
  }
  if (spec.classes < 2) throw ArgumentError("need at least two classes");
  if (spec.noise < 0.0 || spec.noise >= 1.0) throw ArgumentError("noise must be in [0, 1)");

  SeededRng map_rng = SeededRng(spec.seed).split(0);
  SeededRng feature_rng = SeededRng(spec.seed).split(1);
  SeededRng noise_rng = SeededRng(spec.seed).split(2);

  Tensor map({spec.classes, spec.informative});
  for (std::size_t i = 0; i < map.size(); ++i) map[i] = map_rng.normal();

  Dataset ds;
  ds.features = Tensor({spec.samples, spec.features});
  ds.labels.resize(spec.samples);
  for (std::size_t r = 0; r < spec.samples; ++r) {
    for (std::size_t j = 0; j < spec.features; ++j) {
      ds.features[r * spec.features + j] = feature_rng.normal();
    }
    std::size_t best = 0;
    double best_score = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < spec.classes; ++c) {
      double score = 0.0;
      for (std::size_t j = 0; j < spec.informative; ++j) {
        score += map.at({c, j}) * ds.features[r * spec.features + j];
      }
      if (score > best_score) {
        best_score = score;
        best = c;
      }
    }
    int label = static_cast<int>(best);
    if (spec.noise > 0.0 && noise_rng.uniform() < spec.noise) {
      label = static_cast<int>(noise_rng.next_below(spec.classes));
    }
    ds.labels[r] = label;
  }
  ds.class_count = spec.classes;
  ds.label_values.resize(spec.classes);
  for (std::size_t c = 0; c < spec.classes; ++c) ds.label_values[c] = static_cast<double>(c);
  ds.assignment.assign(spec.samples, Split::Train);
  if (out_map) *out_map = std::move(map);
  return ds;
}

}  // namespace slimnet
