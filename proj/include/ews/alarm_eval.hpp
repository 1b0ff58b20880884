#pragma once

#include <cstdint>
#include <json.hpp>
#include <span>
#include <string>
#include <vector>

#include "ews/labeler.hpp"
#include "ews/metrics.hpp"

namespace ews::alarm {

struct AlarmConfig {
  std::int64_t silence_s = 1800;
  std::int64_t horizon_s = 28800;
};

// Scan in time order; fire when score >= threshold and no alarm fired in the
// preceding silence period. Missing scores never fire.
std::vector<std::int64_t> silence(std::span<const std::int64_t> times_s, std::span<const double> scores,
                                  double threshold, std::int64_t silence_s = 1800);

struct EventPrCounts {
  std::size_t alarms = 0;
  std::size_t true_alarms = 0;
  std::size_t events = 0;
  std::size_t caught_events = 0;

  double precision() const;  // missing without alarms
  double recall() const;     // missing without events
  EventPrCounts& operator+=(const EventPrCounts& o);
};

// An alarm at a is true iff an event starts in (a, a + horizon]; an event
// starting at s is caught iff a true alarm lies in [s - horizon, s).
EventPrCounts event_pr(std::span<const std::int64_t> alarms, std::span<const label::FailureEvent> events,
                       std::int64_t horizon_s = 28800);

// Score series of one stay. Points without a score (undefined labels) are NaN.
struct StayScores {
  std::string stay_id;
  std::vector<std::int64_t> times_s;
  std::vector<double> scores;
  std::vector<label::FailureEvent> events;
};

struct PrPoint {
  double threshold = 0.0;
  EventPrCounts counts;
  double recall = kMissing;
  double precision = kMissing;
};

PrPoint pr_point(std::span<const StayScores> stays, double threshold, const AlarmConfig& cfg = {});

// Sweep thresholds; counts are summed over stays.
std::vector<PrPoint> pr_curve(std::span<const StayScores> stays, std::span<const double> thresholds,
                              const AlarmConfig& cfg = {}, int jobs = 1);

// Distinct score values when there are at most max_thresholds, otherwise an
// evenly spaced quantile grid of the pooled scores. Descending.
std::vector<double> threshold_grid(std::span<const StayScores> stays, std::size_t max_thresholds = 200);

std::vector<double> recall_levels(std::size_t n = 101);

// Precision at the given recall levels by linear interpolation. Duplicate
// recalls keep the highest precision; levels below the lowest observed recall
// take its precision; levels above the highest observed recall are missing.
std::vector<double> interpolate_precision(std::span<const PrPoint> curve, std::span<const double> levels);

// Trapezoidal area under the (recall, precision) points, starting from
// recall 0 at the precision of the lowest-recall point.
double auprc(std::span<const PrPoint> curve);

struct AggregatedPr {
  std::vector<double> recall;
  std::vector<double> precision_mean;
  std::vector<double> precision_std;
  std::vector<double> auprc_per_split;
  double auprc_mean = kMissing;
  double auprc_std = kMissing;
};

AggregatedPr aggregate_pr(const std::vector<std::vector<PrPoint>>& per_split, std::size_t levels = 101);

struct TimingStats {
  std::vector<double> lead_s;             // per caught event
  std::vector<std::size_t> alarms_in_window;  // per caught event
  double median_lead_s = kMissing;
  double mean_alarms_per_caught_event = kMissing;
};

// Lead of the earliest alarm in [onset - horizon, onset) and the number of
// alarms in that window, for every event with at least one.
TimingStats alarm_timing(std::span<const std::int64_t> alarms, std::span<const label::FailureEvent> events,
                         std::int64_t horizon_s = 28800);
void merge_timing(TimingStats& into, const TimingStats& other);
void finalize_timing(TimingStats& t);

struct RocResult {
  std::vector<metrics::RocPoint> points;
  double auroc = kMissing;
};

RocResult timepoint_roc(std::span<const double> scores, std::span<const int> labels);

// Fraction of positive labels among defined points.
double prevalence(std::span<const label::Label> labels);

struct PlotSeries {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
  std::vector<double> band;  // +- around y; empty for none
};

std::string line_plot_svg(const std::string& title, const std::string& x_label, const std::string& y_label,
                          const std::vector<PlotSeries>& series, double x_max = 1.0, double y_max = 1.0);
std::string histogram_svg(const std::string& title, const std::string& x_label, std::span<const double> values,
                          double bin_width, double x_max);

}  // namespace ews::alarm
