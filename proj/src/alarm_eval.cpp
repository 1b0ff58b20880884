#include "ews/alarm_eval.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <numeric>
#include <sstream>

#include "ews/error.hpp"

namespace ews::alarm {

std::vector<std::int64_t> silence(std::span<const std::int64_t> times_s, std::span<const double> scores,
                                  double threshold, std::int64_t silence_s) {
  std::vector<std::int64_t> out;
  for (std::size_t i = 0; i < times_s.size(); ++i) {
    if (is_missing(scores[i]) || !(scores[i] >= threshold)) continue;
    if (!out.empty() && times_s[i] - out.back() < silence_s) continue;
    out.push_back(times_s[i]);
  }
  return out;
}

double EventPrCounts::precision() const {
  return alarms == 0 ? kMissing : static_cast<double>(true_alarms) / static_cast<double>(alarms);
}

double EventPrCounts::recall() const {
  return events == 0 ? kMissing : static_cast<double>(caught_events) / static_cast<double>(events);
}

EventPrCounts& EventPrCounts::operator+=(const EventPrCounts& o) {
  alarms += o.alarms;
  true_alarms += o.true_alarms;
  events += o.events;
  caught_events += o.caught_events;
  return *this;
}

EventPrCounts event_pr(std::span<const std::int64_t> alarms, std::span<const label::FailureEvent> events,
                       std::int64_t horizon_s) {
  EventPrCounts c;
  c.alarms = alarms.size();
  c.events = events.size();
  // Both lists sorted; event starts are increasing.
  std::size_t e = 0;
  for (auto a : alarms) {
    while (e < events.size() && events[e].start_s <= a) ++e;
    if (e < events.size() && events[e].start_s <= a + horizon_s) ++c.true_alarms;
  }
  for (const auto& ev : events) {
    auto it = std::lower_bound(alarms.begin(), alarms.end(), ev.start_s - horizon_s);
    if (it != alarms.end() && *it < ev.start_s) ++c.caught_events;
  }
  return c;
}

PrPoint pr_point(std::span<const StayScores> stays, double threshold, const AlarmConfig& cfg) {
  PrPoint p;
  p.threshold = threshold;
  for (const auto& s : stays) {
    auto alarms = silence(s.times_s, s.scores, threshold, cfg.silence_s);
    p.counts += event_pr(alarms, s.events, cfg.horizon_s);
  }
  p.recall = p.counts.recall();
  p.precision = p.counts.precision();
  return p;
}

std::vector<PrPoint> pr_curve(std::span<const StayScores> stays, std::span<const double> thresholds,
                              const AlarmConfig& cfg, int jobs) {
  std::vector<PrPoint> out(thresholds.size());
  parallel_for(thresholds.size(), jobs, [&](std::size_t i) { out[i] = pr_point(stays, thresholds[i], cfg); });
  return out;
}

std::vector<double> threshold_grid(std::span<const StayScores> stays, std::size_t max_thresholds) {
  std::vector<double> all;
  for (const auto& s : stays) {
    for (double v : s.scores) {
      if (!is_missing(v)) all.push_back(v);
    }
  }
  std::sort(all.begin(), all.end());
  std::vector<double> distinct = all;
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  std::vector<double> out;
  if (distinct.size() <= max_thresholds) {
    out = distinct;
  } else {
    for (std::size_t k = 0; k < max_thresholds; ++k) {
      const double q = static_cast<double>(k) / static_cast<double>(max_thresholds - 1);
      out.push_back(all[static_cast<std::size_t>(std::llround(q * static_cast<double>(all.size() - 1)))]);
    }
    out.erase(std::unique(out.begin(), out.end()), out.end());
  }
  std::reverse(out.begin(), out.end());
  return out;
}

std::vector<double> recall_levels(std::size_t n) {
  std::vector<double> r(n);
  for (std::size_t i = 0; i < n; ++i) r[i] = n == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(n - 1);
  return r;
}

namespace {

// (recall, best precision) sorted by recall, points with missing values dropped.
std::vector<std::pair<double, double>> envelope(std::span<const PrPoint> curve) {
  std::map<double, double> best;
  for (const auto& p : curve) {
    if (is_missing(p.recall) || is_missing(p.precision)) continue;
    auto [it, inserted] = best.emplace(p.recall, p.precision);
    if (!inserted) it->second = std::max(it->second, p.precision);
  }
  return {best.begin(), best.end()};
}

}  // namespace

std::vector<double> interpolate_precision(std::span<const PrPoint> curve, std::span<const double> levels) {
  const auto pts = envelope(curve);
  std::vector<double> out(levels.size(), kMissing);
  if (pts.empty()) return out;
  for (std::size_t i = 0; i < levels.size(); ++i) {
    const double r = levels[i];
    if (r <= pts.front().first) {
      out[i] = pts.front().second;
      continue;
    }
    if (r > pts.back().first) continue;
    auto hi = std::lower_bound(pts.begin(), pts.end(), r, [](const auto& p, double v) { return p.first < v; });
    if (hi->first == r) {
      out[i] = hi->second;
      continue;
    }
    auto lo = hi - 1;
    const double w = (r - lo->first) / (hi->first - lo->first);
    out[i] = lo->second + w * (hi->second - lo->second);
  }
  return out;
}

double auprc(std::span<const PrPoint> curve) {
  const auto pts = envelope(curve);
  if (pts.empty()) return kMissing;
  double area = 0.0;
  double r0 = 0.0, p0 = pts.front().second;
  for (const auto& [r, p] : pts) {
    area += (r - r0) * (p + p0) / 2.0;
    r0 = r;
    p0 = p;
  }
  return area;
}

namespace {

void mean_std(const std::vector<double>& v, double& mean, double& sd) {
  std::vector<double> d;
  for (double x : v) {
    if (!is_missing(x)) d.push_back(x);
  }
  if (d.empty()) {
    mean = sd = kMissing;
    return;
  }
  mean = std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(d.size());
  double ss = 0;
  for (double x : d) ss += (x - mean) * (x - mean);
  sd = std::sqrt(ss / static_cast<double>(d.size()));
}

}  // namespace

AggregatedPr aggregate_pr(const std::vector<std::vector<PrPoint>>& per_split, std::size_t levels) {
  AggregatedPr a;
  a.recall = recall_levels(levels);
  std::vector<std::vector<double>> interp;
  for (const auto& c : per_split) {
    interp.push_back(interpolate_precision(c, a.recall));
    a.auprc_per_split.push_back(auprc(c));
  }
  a.precision_mean.resize(levels);
  a.precision_std.resize(levels);
  for (std::size_t i = 0; i < levels; ++i) {
    std::vector<double> col;
    for (const auto& v : interp) col.push_back(v[i]);
    mean_std(col, a.precision_mean[i], a.precision_std[i]);
  }
  mean_std(a.auprc_per_split, a.auprc_mean, a.auprc_std);
  return a;
}

TimingStats alarm_timing(std::span<const std::int64_t> alarms, std::span<const label::FailureEvent> events,
                         std::int64_t horizon_s) {
  TimingStats t;
  for (const auto& ev : events) {
    auto lo = std::lower_bound(alarms.begin(), alarms.end(), ev.start_s - horizon_s);
    auto hi = std::lower_bound(alarms.begin(), alarms.end(), ev.start_s);
    if (lo == hi) continue;
    t.lead_s.push_back(static_cast<double>(ev.start_s - *lo));
    t.alarms_in_window.push_back(static_cast<std::size_t>(hi - lo));
  }
  finalize_timing(t);
  return t;
}

void merge_timing(TimingStats& into, const TimingStats& other) {
  into.lead_s.insert(into.lead_s.end(), other.lead_s.begin(), other.lead_s.end());
  into.alarms_in_window.insert(into.alarms_in_window.end(), other.alarms_in_window.begin(),
                               other.alarms_in_window.end());
  finalize_timing(into);
}

void finalize_timing(TimingStats& t) {
  if (t.lead_s.empty()) {
    t.median_lead_s = t.mean_alarms_per_caught_event = kMissing;
    return;
  }
  t.median_lead_s = metrics::median(t.lead_s);
  t.mean_alarms_per_caught_event =
      static_cast<double>(std::accumulate(t.alarms_in_window.begin(), t.alarms_in_window.end(), std::size_t{0})) /
      static_cast<double>(t.alarms_in_window.size());
}

RocResult timepoint_roc(std::span<const double> scores, std::span<const int> labels) {
  RocResult r;
  r.points = metrics::roc_curve(scores, labels);
  r.auroc = metrics::trapezoid_auc(r.points);
  return r;
}

double prevalence(std::span<const label::Label> labels) {
  std::size_t defined = 0, pos = 0;
  for (auto l : labels) {
    if (l == label::Label::kUndefined) continue;
    ++defined;
    pos += l == label::Label::kPositive ? 1 : 0;
  }
  return defined == 0 ? kMissing : static_cast<double>(pos) / static_cast<double>(defined);
}

namespace {

constexpr double kW = 640, kH = 420, kL = 60, kR = 20, kT = 40, kB = 50;
const char* const kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#7f7f7f"};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string o;
  for (char c : s) {
    switch (c) {
      case '<': o += "&lt;"; break;
      case '>': o += "&gt;"; break;
      case '&': o += "&amp;"; break;
      default: o += c;
    }
  }
  return o;
}

void frame(std::ostringstream& os, const std::string& title, const std::string& xl, const std::string& yl,
           double x_max, double y_max) {
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH
     << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << kW / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << escape(title)
     << "</text>\n";
  os << "<line x1=\"" << kL << "\" y1=\"" << kH - kB << "\" x2=\"" << kW - kR << "\" y2=\"" << kH - kB
     << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << kL << "\" y1=\"" << kT << "\" x2=\"" << kL << "\" y2=\"" << kH - kB
     << "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 5; ++k) {
    const double fx = kL + (kW - kL - kR) * k / 5.0;
    const double fy = kH - kB - (kH - kT - kB) * k / 5.0;
    os << "<text x=\"" << num(fx) << "\" y=\"" << kH - kB + 16 << "\" text-anchor=\"middle\">"
       << num(x_max * k / 5.0) << "</text>\n";
    os << "<text x=\"" << kL - 6 << "\" y=\"" << num(fy + 4) << "\" text-anchor=\"end\">" << num(y_max * k / 5.0)
       << "</text>\n";
  }
  os << "<text x=\"" << kW / 2 << "\" y=\"" << kH - 12 << "\" text-anchor=\"middle\">" << escape(xl) << "</text>\n";
  os << "<text x=\"16\" y=\"" << kH / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 " << kH / 2
     << ")\">" << escape(yl) << "</text>\n";
}

}  // namespace

std::string line_plot_svg(const std::string& title, const std::string& x_label, const std::string& y_label,
                          const std::vector<PlotSeries>& series, double x_max, double y_max) {
  std::ostringstream os;
  frame(os, title, x_label, y_label, x_max, y_max);
  auto px = [&](double x) { return kL + (kW - kL - kR) * std::clamp(x / x_max, 0.0, 1.0); };
  auto py = [&](double y) { return kH - kB - (kH - kT - kB) * std::clamp(y / y_max, 0.0, 1.0); };
  for (std::size_t s = 0; s < series.size(); ++s) {
    const auto& ser = series[s];
    const char* color = kColors[s % std::size(kColors)];
    if (!ser.band.empty()) {
      std::string upper, lower;
      for (std::size_t i = 0; i < ser.x.size(); ++i) {
        if (is_missing(ser.y[i]) || is_missing(ser.band[i])) continue;
        upper += num(px(ser.x[i])) + "," + num(py(ser.y[i] + ser.band[i])) + " ";
      }
      for (std::size_t i = ser.x.size(); i-- > 0;) {
        if (is_missing(ser.y[i]) || is_missing(ser.band[i])) continue;
        lower += num(px(ser.x[i])) + "," + num(py(ser.y[i] - ser.band[i])) + " ";
      }
      if (!upper.empty()) {
        os << "<polygon points=\"" << upper << lower << "\" fill=\"" << color << "\" fill-opacity=\"0.2\"/>\n";
      }
    }
    std::string pts;
    for (std::size_t i = 0; i < ser.x.size(); ++i) {
      if (is_missing(ser.y[i])) continue;
      pts += num(px(ser.x[i])) + "," + num(py(ser.y[i])) + " ";
    }
    os << "<polyline points=\"" << pts << "\" fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << kW - kR - 150 << "\" y=\"" << kT + 16 * (s + 1) << "\" fill=\"" << color << "\">"
       << escape(ser.name) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

std::string histogram_svg(const std::string& title, const std::string& x_label, std::span<const double> values,
                          double bin_width, double x_max) {
  const auto n_bins = static_cast<std::size_t>(std::ceil(x_max / bin_width));
  std::vector<std::size_t> counts(std::max<std::size_t>(n_bins, 1), 0);
  for (double v : values) {
    if (is_missing(v)) continue;
    auto b = static_cast<std::size_t>(std::clamp(v / bin_width, 0.0, static_cast<double>(counts.size() - 1)));
    ++counts[b];
  }
  const double y_max = std::max<double>(1.0, static_cast<double>(*std::max_element(counts.begin(), counts.end())));
  std::ostringstream os;
  frame(os, title, x_label, "count", x_max, y_max);
  const double bw = (kW - kL - kR) / static_cast<double>(counts.size());
  for (std::size_t b = 0; b < counts.size(); ++b) {
    const double h = (kH - kT - kB) * static_cast<double>(counts[b]) / y_max;
    os << "<rect x=\"" << num(kL + bw * static_cast<double>(b) + 1) << "\" y=\"" << num(kH - kB - h) << "\" width=\""
       << num(bw - 2) << "\" height=\"" << num(h) << "\" fill=\"" << kColors[0] << "\"/>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace ews::alarm
