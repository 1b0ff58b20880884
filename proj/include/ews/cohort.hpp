#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace ews {

struct RawMeasurement {
  std::string variable_id;
  std::int64_t time_s = 0;
  double value = 0.0;
};

struct TimedValue {
  std::int64_t time_s = 0;
  double value = 0.0;
};

// Regular-grid view of one channel. Missing values are NaN.
struct GriddedChannel {
  std::vector<double> values;
  std::vector<std::uint8_t> is_real;
};

// Ground-truth failure interval planted by the synthetic generator.
struct PlantedEpisode {
  std::int64_t start_s = 0;
  std::int64_t end_s = 0;
};

struct GriddedStay {
  std::string stay_id;
  std::map<std::string, double> statics;
  // Per channel, sorted by time (stable for equal times).
  std::map<std::string, std::vector<TimedValue>> raw;
  std::int64_t grid_step_s = 300;
  std::int64_t length_s = 0;
  std::map<std::string, GriddedChannel> gridded;
  std::vector<PlantedEpisode> planted;

  std::size_t grid_size() const;
  std::int64_t grid_time(std::size_t i) const { return static_cast<std::int64_t>(i) * grid_step_s; }
  const GriddedChannel* channel(std::string_view id) const;
  const std::vector<TimedValue>* raw_channel(std::string_view id) const;
  double static_value(std::string_view id) const;
};

struct Cohort {
  std::vector<GriddedStay> stays;

  const GriddedStay* find(std::string_view stay_id) const;
};

struct LoadDiagnostic {
  std::string file;
  std::size_t line = 0;  // 1-based; 0 for file-level messages
  std::string message;
};

struct LoadResult {
  Cohort cohort;
  std::vector<LoadDiagnostic> errors;    // rejected rows / files
  std::vector<LoadDiagnostic> warnings;  // rows kept with a remark
};

// Reads every `<stay>.csv` (header `time_s,variable_id,value`) in `dir` with
// its optional `<stay>.json` statics sidecar and resamples it to `grid_step_s`.
// Malformed rows are rejected and reported with their line number; unknown
// channels are kept with a warning.
LoadResult load_cohort(const std::filesystem::path& dir, std::int64_t grid_step_s = 300);
// Single stay file (plus its .json sidecar when present).
LoadResult load_stay(const std::filesystem::path& csv_path, std::int64_t grid_step_s = 300);

// Re-derives the gridded arrays from the raw measurements. Value at grid time
// t is the last raw value at or before t; is_real marks bins (t - step, t]
// holding at least one raw value.
GriddedStay resample(const GriddedStay& stay, std::int64_t grid_step_s);
void resample_in_place(GriddedStay& stay, std::int64_t grid_step_s);

// Builds a stay from unsorted raw rows (stable sort by time per channel).
GriddedStay make_stay(std::string stay_id, std::map<std::string, double> statics,
                      const std::vector<RawMeasurement>& rows, std::int64_t grid_step_s = 300,
                      std::optional<std::int64_t> length_s = std::nullopt);

// Writes `<stay>.csv` and `<stay>.json` (statics, length and planted episodes).
void write_stay(const GriddedStay& stay, const std::filesystem::path& dir);
void write_cohort(const Cohort& cohort, const std::filesystem::path& dir);

struct CohortSplit {
  int split_id = 0;
  std::vector<std::string> train;
  std::vector<std::string> validation;
  std::vector<std::string> test;
};

// Random partitions by stay. Each split shuffles the stay ids independently
// (seeded from `seed` and the split index) and cuts them at
// round(n * train_frac) and round(n * valid_frac).
std::vector<CohortSplit> make_splits(const std::vector<std::string>& stay_ids, int n_splits,
                                     double train_frac, double valid_frac, std::uint64_t seed);
std::vector<CohortSplit> make_splits(const Cohort& cohort, int n_splits, double train_frac,
                                     double valid_frac, std::uint64_t seed);

}  // namespace ews
