#include "ews/features.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "ews/error.hpp"
#include "ews/variables.hpp"

namespace ews::feat {

using nlohmann::json;

FeatureConfig FeatureConfig::defaults() {
  FeatureConfig cfg;
  auto var = [](std::string_view id, std::vector<Band> bands = {}) {
    VariableConfig v;
    v.id = std::string(id);
    v.bands = std::move(bands);
    return v;
  };
  cfg.variables = {
      var(vars::kFio2, {{30, 40}}),
      var(vars::kSpo2, {{90, 94}}),
      var(vars::kSuppO2, {{2, 4}}),
      var(vars::kPao2),
      var(vars::kSuppFio2Pct, {{21, 40}}),
      var(vars::kSao2),
      var(vars::kGcsEye),
      var(vars::kGcsVerbal),
      var(vars::kPeritonealDialysis),
      var(vars::kPeakPressure),
      var(vars::kSpontBreathing),
      var(vars::kGcsMotor),
      var(vars::kVentModeGroup),
      var(vars::kRass),
      var(vars::kExtubation),
      var(vars::kTracheotomy),
      var(vars::kSt2),
      var(vars::kRespRate),
      var(vars::kPeep),
      var(vars::kUrineOut),
      var(vars::kFio2Estimate),
      var(vars::kVentState),
  };
  for (auto s : vars::kStatics) {
    VariableConfig v;
    v.id = std::string(s);
    v.is_static = true;
    cfg.variables.push_back(v);
  }
  return cfg;
}

void FeatureConfig::validate() const {
  if (window_s <= 0) fail(ErrorCode::kConfig, "feature window_s must be positive");
  std::set<std::string> seen;
  for (const auto& v : variables) {
    if (v.id.empty()) fail(ErrorCode::kConfig, "variable with empty id");
    if (!seen.insert(v.id).second) fail(ErrorCode::kConfig, "duplicate variable '" + v.id + "'");
    if (v.bands.size() > 3) fail(ErrorCode::kConfig, v.id + ": at most 3 severity bands");
    for (std::size_t i = 0; i < v.bands.size(); ++i) {
      if (!(v.bands[i].lo <= v.bands[i].hi)) fail(ErrorCode::kConfig, v.id + ": band with lo > hi");
      for (std::size_t j = 0; j < i; ++j) {
        if (v.bands[i].lo <= v.bands[j].hi && v.bands[j].lo <= v.bands[i].hi) {
          fail(ErrorCode::kConfig, v.id + ": severity bands overlap");
        }
      }
    }
  }
}

FeatureConfig FeatureConfig::from_json(const json& doc) {
  FeatureConfig cfg;
  try {
    cfg.window_s = doc.value("window_s", cfg.window_s);
    for (const auto& jv : doc.at("variables")) {
      VariableConfig v;
      v.id = jv.at("id").get<std::string>();
      v.is_static = jv.value("static", false);
      if (jv.contains("classes")) {
        auto classes = jv["classes"].get<std::vector<std::string>>();
        auto has = [&](const char* c) { return std::find(classes.begin(), classes.end(), c) != classes.end(); };
        for (const auto& c : classes) {
          if (c != "current" && c != "summary" && c != "intensity" && c != "instability") {
            fail(ErrorCode::kConfig, v.id + ": unknown feature class '" + c + "'");
          }
        }
        v.current = has("current");
        v.summary = has("summary");
        v.intensity = has("intensity");
        v.instability = has("instability");
      }
      if (jv.contains("bands")) {
        for (const auto& b : jv["bands"]) v.bands.push_back({b.at(0).get<double>(), b.at(1).get<double>()});
      }
      cfg.variables.push_back(std::move(v));
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::kConfig, std::string("variable config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

FeatureConfig FeatureConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kIo, "cannot open variable config " + path.string());
  try {
    return from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    fail(ErrorCode::kParse, path.string() + ": " + e.what());
  }
}

json FeatureConfig::to_json() const {
  json vs = json::array();
  for (const auto& v : variables) {
    json jv{{"id", v.id}};
    if (v.is_static) {
      jv["static"] = true;
    } else {
      json classes = json::array();
      if (v.current) classes.push_back("current");
      if (v.summary) classes.push_back("summary");
      if (v.intensity) classes.push_back("intensity");
      if (v.instability) classes.push_back("instability");
      jv["classes"] = classes;
      json bands = json::array();
      for (const auto& b : v.bands) bands.push_back({b.lo, b.hi});
      jv["bands"] = bands;
    }
    vs.push_back(jv);
  }
  return json{{"window_s", window_s}, {"variables", vs}};
}

std::string FeatureConfig::hash() const { return hex64(fnv1a64(to_json().dump())); }

std::vector<std::string> column_names(const FeatureConfig& cfg) {
  std::vector<std::string> out;
  for (const auto& v : cfg.variables) {
    if (v.is_static) {
      out.push_back("static__" + v.id);
      continue;
    }
    const std::string p = v.id + "__";
    if (v.current) out.push_back(p + "current");
    if (v.summary) {
      for (const char* w : {"8h", "stay"}) {
        for (const char* s : {"mean", "std", "trend", "min", "max"}) out.push_back(p + s + "_" + w);
      }
    }
    if (v.intensity) {
      out.push_back(p + "time_to_last_real");
      out.push_back(p + "density_8h");
      out.push_back(p + "density_stay");
    }
    if (v.instability) {
      for (std::size_t l = 0; l < v.bands.size(); ++l) {
        out.push_back(p + "instab_l" + std::to_string(l + 1) + "_8h");
        out.push_back(p + "instab_l" + std::to_string(l + 1) + "_stay");
      }
    }
  }
  return out;
}

Summary summarize(std::span<const std::int64_t> times_s, std::span<const double> values) {
  Summary s;
  std::size_t n = 0;
  double sum = 0, tsum = 0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (is_missing(values[i])) continue;
    ++n;
    sum += values[i];
    tsum += static_cast<double>(times_s[i]);
  }
  if (n == 0) return s;
  const double mean = sum / static_cast<double>(n);
  const double tmean = tsum / static_cast<double>(n);
  double m2 = 0, stt = 0, stv = 0;
  s.min = s.max = mean;
  bool first = true;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (is_missing(values[i])) continue;
    const double dv = values[i] - mean;
    const double dt = (static_cast<double>(times_s[i]) - tmean) / 3600.0;
    m2 += dv * dv;
    stt += dt * dt;
    stv += dt * dv;
    if (first || values[i] < s.min) s.min = values[i];
    if (first || values[i] > s.max) s.max = values[i];
    first = false;
  }
  s.mean = mean;
  s.std = std::sqrt(m2 / static_cast<double>(n));
  if (n >= 2 && stt > 0) s.trend = stv / stt;
  return s;
}

Intensity intensity(std::span<const std::int64_t> real_times_s, std::int64_t t, std::int64_t window_s,
                    std::int64_t step_s) {
  Intensity r;
  auto end = std::upper_bound(real_times_s.begin(), real_times_s.end(), t);
  auto begin_window = std::upper_bound(real_times_s.begin(), end, t - window_s);
  const auto total = static_cast<double>(end - real_times_s.begin());
  const auto in_window = static_cast<double>(end - begin_window);
  if (end != real_times_s.begin()) r.time_to_last_real = static_cast<double>(t - *(end - 1));
  r.density_window = in_window / (static_cast<double>(window_s) / 3600.0);
  r.density_stay = total / (static_cast<double>(std::max(t, step_s)) / 3600.0);
  return r;
}

std::vector<double> instability(std::span<const double> values, std::span<const Band> bands) {
  std::vector<double> counts(bands.size(), 0.0);
  std::size_t defined = 0;
  for (double v : values) {
    if (is_missing(v)) continue;
    ++defined;
    for (std::size_t b = 0; b < bands.size(); ++b) {
      if (bands[b].contains(v)) counts[b] += 1.0;
    }
  }
  for (auto& c : counts) c = defined == 0 ? kMissing : c / static_cast<double>(defined);
  return counts;
}

namespace {

// Per-variable expanding-window state, advanced one grid point at a time.
struct Expanding {
  std::size_t n = 0;
  double mean = 0, m2 = 0;         // values
  double tmean = 0, tm2 = 0, c = 0;  // hours, co-moment
  double min = 0, max = 0;
  std::vector<std::size_t> band_counts;

  void add(double t_h, double v, std::span<const Band> bands) {
    ++n;
    const double dn = static_cast<double>(n);
    const double dt = t_h - tmean;
    const double dv = v - mean;
    tmean += dt / dn;
    mean += dv / dn;
    m2 += dv * (v - mean);
    tm2 += dt * (t_h - tmean);
    c += dt * (v - mean);
    if (n == 1 || v < min) min = v;
    if (n == 1 || v > max) max = v;
    band_counts.resize(bands.size(), 0);
    for (std::size_t b = 0; b < bands.size(); ++b) band_counts[b] += bands[b].contains(v) ? 1 : 0;
  }

  Summary summary() const {
    Summary s;
    if (n == 0) return s;
    s.mean = mean;
    s.std = std::sqrt(std::max(0.0, m2 / static_cast<double>(n)));
    if (n >= 2 && tm2 > 0) s.trend = c / tm2;
    s.min = min;
    s.max = max;
    return s;
  }
};

class StayFeaturizer {
 public:
  StayFeaturizer(const GriddedStay& stay, const FeatureConfig& cfg) : stay_(stay), cfg_(cfg) {
    const std::size_t n = stay.grid_size();
    times_.resize(n);
    for (std::size_t i = 0; i < n; ++i) times_[i] = stay.grid_time(i);
    for (const auto& v : cfg.variables) {
      VarData d;
      if (!v.is_static) {
        if (const auto* ch = stay.channel(v.id)) d.values = ch->values;
        d.values.resize(n, kMissing);
        if (const auto* raw = stay.raw_channel(v.id)) {
          for (const auto& tv : *raw) d.real_times.push_back(tv.time_s);
        } else if (const auto* ch = stay.channel(v.id)) {
          for (std::size_t i = 0; i < n && i < ch->is_real.size(); ++i) {
            if (ch->is_real[i]) d.real_times.push_back(times_[i]);
          }
        }
      }
      data_.push_back(std::move(d));
    }
    expanding_.resize(cfg.variables.size());
  }

  // Must be called with non-decreasing i.
  void row(std::size_t i, std::vector<double>& out) {
    out.clear();
    advance_to(i);
    const std::int64_t t = times_[i];
    const auto w = static_cast<std::size_t>(cfg_.window_s / stay_.grid_step_s);
    const std::size_t lo = i + 1 >= w ? i + 1 - w : 0;  // window (t - W, t]
    for (std::size_t k = 0; k < cfg_.variables.size(); ++k) {
      const auto& v = cfg_.variables[k];
      if (v.is_static) {
        out.push_back(stay_.static_value(v.id));
        continue;
      }
      const auto& d = data_[k];
      std::span<const double> wv(d.values.data() + lo, i + 1 - lo);
      if (v.current) out.push_back(d.values[i]);
      if (v.summary) {
        const Summary s8 = summarize(std::span<const std::int64_t>(times_.data() + lo, i + 1 - lo), wv);
        const Summary ss = expanding_[k].summary();
        for (const Summary* s : {&s8, &ss}) {
          out.push_back(s->mean);
          out.push_back(s->std);
          out.push_back(s->trend);
          out.push_back(s->min);
          out.push_back(s->max);
        }
      }
      if (v.intensity) {
        auto in = intensity(d.real_times, t, cfg_.window_s, stay_.grid_step_s);
        out.push_back(in.time_to_last_real);
        out.push_back(in.density_window);
        out.push_back(in.density_stay);
      }
      if (v.instability && !v.bands.empty()) {
        auto f8 = instability(wv, v.bands);
        const auto& e = expanding_[k];
        for (std::size_t b = 0; b < v.bands.size(); ++b) {
          out.push_back(f8[b]);
          out.push_back(e.n == 0 ? kMissing
                                 : static_cast<double>(e.band_counts[b]) / static_cast<double>(e.n));
        }
      }
    }
  }

 private:
  struct VarData {
    std::vector<double> values;
    std::vector<std::int64_t> real_times;
  };

  void advance_to(std::size_t i) {
    for (; next_ <= i; ++next_) {
      const double t_h = static_cast<double>(times_[next_]) / 3600.0;
      for (std::size_t k = 0; k < cfg_.variables.size(); ++k) {
        const auto& v = cfg_.variables[k];
        if (v.is_static) continue;
        const double val = data_[k].values[next_];
        if (!is_missing(val)) expanding_[k].add(t_h, val, v.bands);
      }
    }
  }

  const GriddedStay& stay_;
  const FeatureConfig& cfg_;
  std::vector<std::int64_t> times_;
  std::vector<VarData> data_;
  std::vector<Expanding> expanding_;
  std::size_t next_ = 0;
};

}  // namespace

FeatureMatrix build_matrix(const GriddedStay& stay, const std::vector<label::Label>& labels,
                           const FeatureConfig& cfg, const RowFilter& filter) {
  FeatureMatrix m;
  m.columns = column_names(cfg);
  if (cfg.window_s % stay.grid_step_s != 0) fail(ErrorCode::kConfig, "grid step must divide the feature window");
  StayFeaturizer f(stay, cfg);
  std::vector<double> row;
  std::size_t defined = 0;
  const std::size_t stride = std::max<std::size_t>(filter.stride, 1);
  for (std::size_t i = 0; i < labels.size() && i < stay.grid_size(); ++i) {
    if (labels[i] == label::Label::kUndefined) continue;
    const std::size_t k = defined++;
    if (k % stride != filter.offset % stride) continue;
    f.row(i, row);
    m.values.insert(m.values.end(), row.begin(), row.end());
    m.labels.push_back(labels[i] == label::Label::kPositive ? 1 : 0);
    m.stay_ids.push_back(stay.stay_id);
    m.times_s.push_back(stay.grid_time(i));
  }
  return m;
}

std::vector<double> features_at(const GriddedStay& stay, const FeatureConfig& cfg, std::size_t index) {
  if (index >= stay.grid_size()) fail(ErrorCode::kConfig, "grid index out of range");
  StayFeaturizer f(stay, cfg);
  std::vector<double> row;
  f.row(index, row);
  return row;
}

void FeatureMatrix::append(const FeatureMatrix& other) {
  if (columns.empty() && rows() == 0) columns = other.columns;
  if (other.columns != columns) fail(ErrorCode::kSchema, "feature matrices have different columns");
  values.insert(values.end(), other.values.begin(), other.values.end());
  labels.insert(labels.end(), other.labels.begin(), other.labels.end());
  stay_ids.insert(stay_ids.end(), other.stay_ids.begin(), other.stay_ids.end());
  times_s.insert(times_s.end(), other.times_s.begin(), other.times_s.end());
}

std::size_t FeatureMatrix::column_index(std::string_view name) const {
  auto it = std::find(columns.begin(), columns.end(), name);
  if (it == columns.end()) fail(ErrorCode::kSchema, "feature column '" + std::string(name) + "' not present");
  return static_cast<std::size_t>(it - columns.begin());
}

FeatureMatrix FeatureMatrix::select(const std::vector<std::string>& names) const {
  std::vector<std::size_t> idx;
  for (const auto& n : names) idx.push_back(column_index(n));
  FeatureMatrix m;
  m.columns = names;
  m.labels = labels;
  m.stay_ids = stay_ids;
  m.times_s = times_s;
  m.values.reserve(rows() * idx.size());
  for (std::size_t r = 0; r < rows(); ++r) {
    for (auto c : idx) m.values.push_back(at(r, c));
  }
  return m;
}

void FeatureMatrix::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::kIo, "cannot write " + path.string());
  out << "stay_id,time_s,label";
  for (const auto& c : columns) out << ',' << c;
  out << '\n';
  for (std::size_t r = 0; r < rows(); ++r) {
    out << stay_ids[r] << ',' << times_s[r] << ',' << static_cast<int>(labels[r]);
    for (std::size_t c = 0; c < cols(); ++c) out << ',' << format_double(at(r, c));
    out << '\n';
  }
  if (!out) fail(ErrorCode::kIo, "write failed: " + path.string());
}

FeatureMatrix FeatureMatrix::read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kMissingArtifact, "feature matrix not found: " + path.string());
  FeatureMatrix m;
  std::string line;
  if (!std::getline(in, line)) fail(ErrorCode::kParse, path.string() + ": empty file");
  auto header = split(line, ',');
  if (header.size() < 3 || header[0] != "stay_id" || header[1] != "time_s" || header[2] != "label") {
    fail(ErrorCode::kParse, path.string() + ": header must start with stay_id,time_s,label");
  }
  m.columns.assign(header.begin() + 3, header.end());
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto cells = split(line, ',');
    const auto where = path.string() + ":" + std::to_string(lineno);
    if (cells.size() != header.size()) fail(ErrorCode::kParse, where + ": wrong field count");
    std::int64_t t = 0, lab = 0;
    if (!parse_int64(cells[1], t) || !parse_int64(cells[2], lab) || (lab != 0 && lab != 1)) {
      fail(ErrorCode::kParse, where + ": bad time or label");
    }
    m.stay_ids.push_back(cells[0]);
    m.times_s.push_back(t);
    m.labels.push_back(static_cast<std::int8_t>(lab));
    for (std::size_t c = 3; c < cells.size(); ++c) {
      double v = kMissing;
      if (!cells[c].empty() && !parse_double(cells[c], v)) fail(ErrorCode::kParse, where + ": bad value '" + cells[c] + "'");
      m.values.push_back(v);
    }
  }
  return m;
}

json schema_json(const FeatureConfig& cfg) {
  json cols = json::array();
  auto names = column_names(cfg);
  for (const auto& n : names) {
    auto pos = n.find("__");
    cols.push_back({{"name", n}, {"variable", n.starts_with("static__") ? n.substr(8) : n.substr(0, pos)}});
  }
  return json{{"format", "ews-feature-schema"}, {"version", 1}, {"config_hash", cfg.hash()}, {"columns", cols}};
}

}  // namespace ews::feat
