#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ews/fio2_pf.hpp"

namespace ews::label {

struct LabelerConfig {
  double pf_threshold = 200.0;    // mmHg, strict "<"
  double peep_threshold = 5.0;    // recorded units, ">="
  std::int64_t window_s = 7200;   // forward window [t, t + window)
  int quorum_num = 2;             // flagged iff num * satisfied >= den * defined
  int quorum_den = 3;
  bool label_truncated_windows = true;  // false: no flag where the window runs past stay end
  std::int64_t merge_gap_s = 3600;      // merge when gap <= this
  std::int64_t min_duration_s = 7200;   // delete events with duration <= this
  std::int64_t horizon_s = 28800;       // label horizon (t, t + horizon]
};

struct ConditionResult {
  bool value = false;
  bool data_quality_flag = false;  // ventilated but PEEP missing
};

ConditionResult failure_condition(double pf, bool ventilated, double peep, const LabelerConfig& cfg = {});

// Per grid point: 1 condition holds, 0 does not, -1 P/F undefined.
std::vector<std::int8_t> condition_series(const oxygen::PfTrack& track, const LabelerConfig& cfg = {},
                                          std::size_t* quality_flags = nullptr);

std::vector<std::uint8_t> annotate_state(const std::vector<std::int8_t>& condition, std::int64_t step_s,
                                         const LabelerConfig& cfg = {});

// Closed interval of grid times.
struct FailureEvent {
  std::int64_t start_s = 0;
  std::int64_t end_s = 0;

  std::int64_t duration_s() const { return end_s - start_s; }
  bool operator==(const FailureEvent&) const = default;
};

std::vector<FailureEvent> build_events(const std::vector<std::uint8_t>& state, std::int64_t step_s,
                                       const LabelerConfig& cfg = {});

enum class Label : std::int8_t { kUndefined = -1, kNegative = 0, kPositive = 1 };

std::vector<Label> make_labels(const std::vector<FailureEvent>& events, std::size_t n_points, std::int64_t step_s,
                               const LabelerConfig& cfg = {});

struct StayLabels {
  std::vector<std::int8_t> condition;
  std::vector<std::uint8_t> state;
  std::vector<FailureEvent> events;
  std::vector<Label> labels;
  std::size_t data_quality_points = 0;
};

StayLabels label_track(const oxygen::PfTrack& track, std::int64_t step_s, const LabelerConfig& cfg = {});

std::string events_to_json(const std::vector<FailureEvent>& events);
std::vector<FailureEvent> events_from_json(const std::string& text);
std::string labels_to_csv(const std::vector<Label>& labels, std::int64_t step_s);
std::vector<Label> labels_from_csv(const std::string& text);

}  // namespace ews::label
