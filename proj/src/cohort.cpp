#include "ews/cohort.hpp"

#include <algorithm>
#include <fstream>
#include <json.hpp>
#include <numeric>
#include <random>
#include <sstream>

#include "ews/error.hpp"
#include "ews/util.hpp"
#include "ews/variables.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace ews {

std::size_t GriddedStay::grid_size() const {
  if (length_s < 0 || grid_step_s <= 0) return 0;
  return static_cast<std::size_t>(length_s / grid_step_s) + 1;
}

const GriddedChannel* GriddedStay::channel(std::string_view id) const {
  auto it = gridded.find(std::string(id));
  return it == gridded.end() ? nullptr : &it->second;
}

const std::vector<TimedValue>* GriddedStay::raw_channel(std::string_view id) const {
  auto it = raw.find(std::string(id));
  return it == raw.end() ? nullptr : &it->second;
}

double GriddedStay::static_value(std::string_view id) const {
  auto it = statics.find(std::string(id));
  return it == statics.end() ? kMissing : it->second;
}

const GriddedStay* Cohort::find(std::string_view stay_id) const {
  for (const auto& s : stays) {
    if (s.stay_id == stay_id) return &s;
  }
  return nullptr;
}

namespace {

GriddedChannel grid_channel(const std::vector<TimedValue>& samples, std::size_t n,
                            std::int64_t step) {
  GriddedChannel ch;
  ch.values.assign(n, kMissing);
  ch.is_real.assign(n, 0);
  std::size_t j = 0;
  double last = kMissing;
  for (std::size_t i = 0; i < n; ++i) {
    const std::int64_t t = static_cast<std::int64_t>(i) * step;
    bool real = false;
    while (j < samples.size() && samples[j].time_s <= t) {
      last = samples[j].value;
      // Bin (t - step, t]; the first grid point only owns time 0.
      if (samples[j].time_s > t - step) real = true;
      ++j;
    }
    ch.values[i] = last;
    ch.is_real[i] = real ? 1 : 0;
  }
  return ch;
}

}  // namespace

void resample_in_place(GriddedStay& stay, std::int64_t grid_step_s) {
  if (grid_step_s <= 0) {
    fail(ErrorCode::kConfig, "grid_step must be positive, got " + std::to_string(grid_step_s));
  }
  stay.grid_step_s = grid_step_s;
  const std::size_t n = stay.grid_size();
  stay.gridded.clear();
  for (const auto& [id, samples] : stay.raw) {
    stay.gridded.emplace(id, grid_channel(samples, n, grid_step_s));
  }
}

GriddedStay resample(const GriddedStay& stay, std::int64_t grid_step_s) {
  GriddedStay out = stay;
  resample_in_place(out, grid_step_s);
  return out;
}

GriddedStay make_stay(std::string stay_id, std::map<std::string, double> statics,
                      const std::vector<RawMeasurement>& rows, std::int64_t grid_step_s,
                      std::optional<std::int64_t> length_s) {
  GriddedStay stay;
  stay.stay_id = std::move(stay_id);
  stay.statics = std::move(statics);
  std::int64_t max_t = 0;
  for (const auto& r : rows) {
    stay.raw[r.variable_id].push_back({r.time_s, r.value});
    max_t = std::max(max_t, r.time_s);
  }
  for (auto& [id, samples] : stay.raw) {
    std::stable_sort(samples.begin(), samples.end(),
                     [](const TimedValue& a, const TimedValue& b) { return a.time_s < b.time_s; });
  }
  stay.length_s = length_s.value_or(max_t);
  resample_in_place(stay, grid_step_s);
  return stay;
}

namespace {

void load_one(const fs::path& csv_path, std::int64_t grid_step_s, LoadResult& result) {
  const std::string file = csv_path.filename().string();
  std::ifstream in(csv_path);
  if (!in) {
    result.errors.push_back({file, 0, "cannot open file"});
    return;
  }
  std::vector<RawMeasurement> rows;
  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    if (!header_seen) {
      header_seen = true;
      if (trim(line) != "time_s,variable_id,value") {
        result.errors.push_back({file, line_no, "expected header 'time_s,variable_id,value'"});
        return;
      }
      continue;
    }
    auto fields = split(line, ',');
    if (fields.size() != 3) {
      result.errors.push_back(
          {file, line_no, "expected 3 fields, got " + std::to_string(fields.size())});
      continue;
    }
    std::int64_t t = 0;
    if (!parse_int64(fields[0], t) || t < 0) {
      result.errors.push_back({file, line_no, "time_s must be a non-negative integer"});
      continue;
    }
    std::string var = trim(fields[1]);
    if (var.empty()) {
      result.errors.push_back({file, line_no, "empty variable_id"});
      continue;
    }
    double v = 0;
    if (!parse_double(fields[2], v)) {
      result.errors.push_back({file, line_no, "value must be a finite number, got '" +
                                                  trim(fields[2]) + "'"});
      continue;
    }
    if (!vars::is_known_channel(var)) {
      result.warnings.push_back({file, line_no, "unknown variable_id '" + var + "'"});
    }
    rows.push_back({std::move(var), t, v});
  }

  std::string stay_id = csv_path.stem().string();
  std::map<std::string, double> statics;
  std::optional<std::int64_t> length;
  std::vector<PlantedEpisode> planted;
  fs::path sidecar = csv_path;
  sidecar.replace_extension(".json");
  if (fs::exists(sidecar)) {
    try {
      std::ifstream js(sidecar);
      json doc = json::parse(js);
      if (doc.contains("stay_id")) stay_id = doc["stay_id"].get<std::string>();
      for (auto key : vars::kStatics) {
        if (doc.contains(key) && doc[std::string(key)].is_number()) {
          statics[std::string(key)] = doc[std::string(key)].get<double>();
        }
      }
      if (doc.contains("length_s")) length = doc["length_s"].get<std::int64_t>();
      if (doc.contains("planted_episodes")) {
        for (const auto& e : doc["planted_episodes"]) {
          planted.push_back({e.at("start_s").get<std::int64_t>(), e.at("end_s").get<std::int64_t>()});
        }
      }
    } catch (const std::exception& e) {
      result.errors.push_back({sidecar.filename().string(), 0, std::string("bad sidecar: ") + e.what()});
    }
  }
  GriddedStay stay = make_stay(stay_id, std::move(statics), rows, grid_step_s, length);
  stay.planted = std::move(planted);
  result.cohort.stays.push_back(std::move(stay));
}

}  // namespace

LoadResult load_cohort(const fs::path& dir, std::int64_t grid_step_s) {
  if (grid_step_s <= 0) fail(ErrorCode::kConfig, "grid_step must be positive");
  if (!fs::is_directory(dir)) fail(ErrorCode::kIo, "not a directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".csv") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  LoadResult result;
  for (const auto& f : files) load_one(f, grid_step_s, result);
  return result;
}

LoadResult load_stay(const fs::path& csv_path, std::int64_t grid_step_s) {
  if (grid_step_s <= 0) fail(ErrorCode::kConfig, "grid_step must be positive");
  LoadResult result;
  load_one(csv_path, grid_step_s, result);
  return result;
}

void write_stay(const GriddedStay& stay, const fs::path& dir) {
  fs::create_directories(dir);
  std::vector<RawMeasurement> rows;
  for (const auto& [id, samples] : stay.raw) {
    for (const auto& s : samples) rows.push_back({id, s.time_s, s.value});
  }
  std::stable_sort(rows.begin(), rows.end(), [](const RawMeasurement& a, const RawMeasurement& b) {
    return a.time_s < b.time_s;
  });
  {
    std::ofstream out(dir / (stay.stay_id + ".csv"));
    if (!out) fail(ErrorCode::kIo, "cannot write stay file for " + stay.stay_id);
    out << "time_s,variable_id,value\n";
    for (const auto& r : rows) out << r.time_s << ',' << r.variable_id << ',' << format_double(r.value) << '\n';
  }
  json side;
  side["stay_id"] = stay.stay_id;
  for (const auto& [k, v] : stay.statics) side[k] = v;
  side["length_s"] = stay.length_s;
  if (!stay.planted.empty()) {
    json eps = json::array();
    for (const auto& e : stay.planted) eps.push_back({{"start_s", e.start_s}, {"end_s", e.end_s}});
    side["planted_episodes"] = eps;
  }
  std::ofstream js(dir / (stay.stay_id + ".json"));
  js << side.dump(2) << '\n';
}

void write_cohort(const Cohort& cohort, const fs::path& dir) {
  fs::create_directories(dir);
  for (const auto& s : cohort.stays) write_stay(s, dir);
}

std::vector<CohortSplit> make_splits(const std::vector<std::string>& stay_ids, int n_splits,
                                     double train_frac, double valid_frac, std::uint64_t seed) {
  if (!(train_frac > 0 && train_frac < 1) || !(valid_frac > 0 && valid_frac < 1) ||
      train_frac + valid_frac >= 1) {
    fail(ErrorCode::kConfig, "split fractions must lie in (0,1) and sum to less than 1");
  }
  if (n_splits < 1) fail(ErrorCode::kConfig, "n_splits must be at least 1");
  if (stay_ids.size() < 3) fail(ErrorCode::kConfig, "cohort needs at least 3 stays to split");

  std::vector<std::string> sorted = stay_ids;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  auto n_train = static_cast<std::size_t>(std::llround(static_cast<double>(n) * train_frac));
  auto n_valid = static_cast<std::size_t>(std::llround(static_cast<double>(n) * valid_frac));
  n_train = std::clamp<std::size_t>(n_train, 1, n - 2);
  n_valid = std::clamp<std::size_t>(n_valid, 1, n - n_train - 1);

  std::vector<CohortSplit> splits;
  for (int k = 0; k < n_splits; ++k) {
    std::vector<std::string> ids = sorted;
    std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(k)));
    std::shuffle(ids.begin(), ids.end(), rng);
    CohortSplit s;
    s.split_id = k;
    s.train.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_train));
    s.validation.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train),
                        ids.begin() + static_cast<std::ptrdiff_t>(n_train + n_valid));
    s.test.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train + n_valid), ids.end());
    std::sort(s.train.begin(), s.train.end());
    std::sort(s.validation.begin(), s.validation.end());
    std::sort(s.test.begin(), s.test.end());
    splits.push_back(std::move(s));
  }
  return splits;
}

std::vector<CohortSplit> make_splits(const Cohort& cohort, int n_splits, double train_frac,
                                     double valid_frac, std::uint64_t seed) {
  std::vector<std::string> ids;
  ids.reserve(cohort.stays.size());
  for (const auto& s : cohort.stays) ids.push_back(s.stay_id);
  return make_splits(ids, n_splits, train_frac, valid_frac, seed);
}

}  // namespace ews
