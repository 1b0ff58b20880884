#pragma once

#include <cstdint>
#include <filesystem>
#include <json.hpp>
#include <span>
#include <string>
#include <vector>

#include "ews/cohort.hpp"
#include "ews/labeler.hpp"

namespace ews::feat {

// Closed value interval [lo, hi].
struct Band {
  double lo = 0.0;
  double hi = 0.0;

  bool contains(double v) const { return v >= lo && v <= hi; }
};

struct VariableConfig {
  std::string id;
  bool is_static = false;
  bool current = true;
  bool summary = true;
  bool intensity = true;
  bool instability = true;
  std::vector<Band> bands;  // L1..L3
};

struct FeatureConfig {
  std::vector<VariableConfig> variables;
  std::int64_t window_s = 28800;

  static FeatureConfig defaults();
  static FeatureConfig from_json(const nlohmann::json& doc);
  static FeatureConfig load(const std::filesystem::path& path);
  nlohmann::json to_json() const;
  std::string hash() const;
  void validate() const;
};

std::vector<std::string> column_names(const FeatureConfig& cfg);

struct Summary {
  double mean = kMissing;
  double std = kMissing;
  double trend = kMissing;  // least-squares slope, units per hour
  double min = kMissing;
  double max = kMissing;
};

// Direct two-pass summary over (time, value) pairs; missing values skipped.
Summary summarize(std::span<const std::int64_t> times_s, std::span<const double> values);

struct Intensity {
  double time_to_last_real = kMissing;  // seconds
  double density_window = 0.0;          // per hour
  double density_stay = 0.0;            // per hour
};

// Timestamps sorted ascending. The stay density divides by max(t, step).
Intensity intensity(std::span<const std::int64_t> real_times_s, std::int64_t t, std::int64_t window_s,
                    std::int64_t step_s);

// Fraction of defined values falling in each band; missing when none defined.
std::vector<double> instability(std::span<const double> values, std::span<const Band> bands);

struct FeatureMatrix {
  std::vector<std::string> columns;
  std::vector<std::string> stay_ids;  // per row
  std::vector<std::int64_t> times_s;  // per row
  std::vector<std::int8_t> labels;    // per row, 0/1
  std::vector<double> values;         // row-major

  std::size_t rows() const { return labels.size(); }
  std::size_t cols() const { return columns.size(); }
  double at(std::size_t r, std::size_t c) const { return values[r * columns.size() + c]; }
  std::span<const double> row(std::size_t r) const {
    return {values.data() + r * columns.size(), columns.size()};
  }
  void append(const FeatureMatrix& other);
  // Keeps only the named columns, in the given order.
  FeatureMatrix select(const std::vector<std::string>& names) const;
  std::size_t column_index(std::string_view name) const;

  void write_csv(const std::filesystem::path& path) const;
  static FeatureMatrix read_csv(const std::filesystem::path& path);
};

struct RowFilter {
  std::size_t stride = 1;  // keep every stride-th defined-label point
  std::size_t offset = 0;
};

// Features of one stay at every grid point with a defined label.
FeatureMatrix build_matrix(const GriddedStay& stay, const std::vector<label::Label>& labels,
                           const FeatureConfig& cfg, const RowFilter& filter = {});

// Features of one stay at a single grid index (label ignored).
std::vector<double> features_at(const GriddedStay& stay, const FeatureConfig& cfg, std::size_t index);

nlohmann::json schema_json(const FeatureConfig& cfg);

}  // namespace ews::feat
