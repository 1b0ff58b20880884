#include "ews/labeler.hpp"

#include <json.hpp>
#include <sstream>

#include "ews/error.hpp"

namespace ews::label {

ConditionResult failure_condition(double pf, bool ventilated, double peep, const LabelerConfig& cfg) {
  ConditionResult r;
  if (!(pf < cfg.pf_threshold)) return r;
  if (!ventilated) {
    r.value = true;
    return r;
  }
  if (is_missing(peep)) {
    r.data_quality_flag = true;
    return r;
  }
  r.value = peep >= cfg.peep_threshold;
  return r;
}

std::vector<std::int8_t> condition_series(const oxygen::PfTrack& track, const LabelerConfig& cfg,
                                          std::size_t* quality_flags) {
  std::vector<std::int8_t> out(track.size(), -1);
  std::size_t dq = 0;
  for (std::size_t i = 0; i < track.size(); ++i) {
    if (is_missing(track.pf[i])) continue;
    auto c = failure_condition(track.pf[i], track.ventilated[i] != 0, track.peep[i], cfg);
    out[i] = c.value ? 1 : 0;
    dq += c.data_quality_flag ? 1 : 0;
  }
  if (quality_flags) *quality_flags = dq;
  return out;
}

std::vector<std::uint8_t> annotate_state(const std::vector<std::int8_t>& condition, std::int64_t step_s,
                                         const LabelerConfig& cfg) {
  if (step_s <= 0 || cfg.window_s % step_s != 0) {
    fail(ErrorCode::kConfig, "grid step must divide the labeling window");
  }
  const auto w = static_cast<std::size_t>(cfg.window_s / step_s);
  const std::size_t n = condition.size();
  // Prefix counts of defined and satisfied points.
  std::vector<std::int64_t> defined(n + 1, 0), satisfied(n + 1, 0);
  for (std::size_t i = 0; i < n; ++i) {
    defined[i + 1] = defined[i] + (condition[i] >= 0 ? 1 : 0);
    satisfied[i + 1] = satisfied[i] + (condition[i] == 1 ? 1 : 0);
  }
  std::vector<std::uint8_t> out(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t end = i + w;
    if (end > n && !cfg.label_truncated_windows) continue;
    const std::size_t e = std::min(end, n);
    const auto d = defined[e] - defined[i];
    const auto s = satisfied[e] - satisfied[i];
    if (d > 0 && cfg.quorum_den * s >= cfg.quorum_num * d) out[i] = 1;
  }
  return out;
}

std::vector<FailureEvent> build_events(const std::vector<std::uint8_t>& state, std::int64_t step_s,
                                       const LabelerConfig& cfg) {
  std::vector<FailureEvent> runs;
  for (std::size_t i = 0; i < state.size();) {
    if (!state[i]) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j + 1 < state.size() && state[j + 1]) ++j;
    runs.push_back({static_cast<std::int64_t>(i) * step_s, static_cast<std::int64_t>(j) * step_s});
    i = j + 1;
  }
  std::vector<FailureEvent> merged;
  for (const auto& r : runs) {
    if (!merged.empty() && r.start_s - merged.back().end_s <= cfg.merge_gap_s) {
      merged.back().end_s = r.end_s;
    } else {
      merged.push_back(r);
    }
  }
  std::vector<FailureEvent> out;
  for (const auto& e : merged) {
    if (e.duration_s() > cfg.min_duration_s) out.push_back(e);
  }
  return out;
}

std::vector<Label> make_labels(const std::vector<FailureEvent>& events, std::size_t n_points, std::int64_t step_s,
                               const LabelerConfig& cfg) {
  std::vector<Label> out(n_points, Label::kNegative);
  std::size_t next = 0;  // first event with start > t
  for (std::size_t i = 0; i < n_points; ++i) {
    const std::int64_t t = static_cast<std::int64_t>(i) * step_s;
    while (next < events.size() && events[next].start_s <= t) ++next;
    if (next > 0 && t <= events[next - 1].end_s) {
      out[i] = Label::kUndefined;
      continue;
    }
    if (next < events.size() && events[next].start_s <= t + cfg.horizon_s) out[i] = Label::kPositive;
  }
  return out;
}

StayLabels label_track(const oxygen::PfTrack& track, std::int64_t step_s, const LabelerConfig& cfg) {
  StayLabels s;
  s.condition = condition_series(track, cfg, &s.data_quality_points);
  s.state = annotate_state(s.condition, step_s, cfg);
  s.events = build_events(s.state, step_s, cfg);
  s.labels = make_labels(s.events, track.size(), step_s, cfg);
  return s;
}

std::string events_to_json(const std::vector<FailureEvent>& events) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& e : events) {
    arr.push_back({{"start_s", e.start_s}, {"end_s", e.end_s}, {"type", "resp_failure_mod_sev"}});
  }
  return arr.dump();
}

std::vector<FailureEvent> events_from_json(const std::string& text) {
  std::vector<FailureEvent> out;
  try {
    auto arr = nlohmann::json::parse(text);
    if (!arr.is_array()) fail(ErrorCode::kParse, "events document must be a JSON array");
    for (const auto& e : arr) {
      out.push_back({e.at("start_s").get<std::int64_t>(), e.at("end_s").get<std::int64_t>()});
    }
  } catch (const nlohmann::json::exception& ex) {
    fail(ErrorCode::kParse, std::string("events JSON: ") + ex.what());
  }
  return out;
}

std::string labels_to_csv(const std::vector<Label>& labels, std::int64_t step_s) {
  std::ostringstream os;
  os << "time_s,label\n";
  for (std::size_t i = 0; i < labels.size(); ++i) {
    os << static_cast<std::int64_t>(i) * step_s << ',';
    switch (labels[i]) {
      case Label::kPositive: os << "1"; break;
      case Label::kNegative: os << "0"; break;
      case Label::kUndefined: os << "na"; break;
    }
    os << '\n';
  }
  return os.str();
}

std::vector<Label> labels_from_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  std::getline(is, line);
  if (trim(line) != "time_s,label") fail(ErrorCode::kParse, "labels CSV: expected header 'time_s,label'");
  std::vector<Label> out;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    auto cells = split(trim(line), ',');
    if (cells.size() != 2) fail(ErrorCode::kParse, "labels CSV line " + std::to_string(lineno) + ": expected 2 fields");
    if (cells[1] == "1") out.push_back(Label::kPositive);
    else if (cells[1] == "0") out.push_back(Label::kNegative);
    else if (cells[1] == "na") out.push_back(Label::kUndefined);
    else fail(ErrorCode::kParse, "labels CSV line " + std::to_string(lineno) + ": bad label '" + cells[1] + "'");
  }
  return out;
}

}  // namespace ews::label
