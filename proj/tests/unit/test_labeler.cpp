#include <gtest/gtest.h>

#include <random>

#include "ews/error.hpp"
#include "ews/labeler.hpp"
#include "../support/oracles.hpp"

using namespace ews;
using namespace ews::label;

namespace {

oracle::LabelParams to_oracle(const LabelerConfig& c) {
  oracle::LabelParams p;
  p.pf_threshold = c.pf_threshold;
  p.peep_threshold = c.peep_threshold;
  p.window_s = c.window_s;
  p.quorum_num = c.quorum_num;
  p.quorum_den = c.quorum_den;
  p.label_truncated = c.label_truncated_windows;
  p.merge_gap_s = c.merge_gap_s;
  p.min_duration_s = c.min_duration_s;
  p.horizon_s = c.horizon_s;
  return p;
}

oxygen::PfTrack random_track(std::mt19937_64& rng, std::size_t n) {
  oxygen::PfTrack t;
  std::normal_distribution<double> step(0.0, 25.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double pf = 150 + 200 * u(rng);
  bool vent = u(rng) < 0.5;
  double peep = u(rng) < 0.2 ? kMissing : 3 + 6 * u(rng);
  for (std::size_t i = 0; i < n; ++i) {
    pf = std::clamp(pf + step(rng), 60.0, 500.0);
    if (u(rng) < 0.03) vent = !vent;
    if (u(rng) < 0.05) peep = u(rng) < 0.2 ? kMissing : std::round(3 + 6 * u(rng));
    t.pf.push_back(u(rng) < 0.15 ? kMissing : pf);
    t.ventilated.push_back(vent);
    t.peep.push_back(peep);
    t.pao2_est.push_back(kMissing);
    t.fio2_est.push_back(kMissing);
    t.pao2_source.push_back(oxygen::Pao2Source::kMissing);
    t.fio2_quality_flag.push_back(0);
  }
  return t;
}

std::vector<std::int8_t> to_condition(std::initializer_list<int> v) {
  return std::vector<std::int8_t>(v.begin(), v.end());
}

}  // namespace

TEST(FailureCondition, Definition) {
  EXPECT_TRUE(failure_condition(199.9, false, kMissing).value);
  EXPECT_FALSE(failure_condition(200.0, false, kMissing).value);
  EXPECT_TRUE(failure_condition(150, true, 5.0).value);
  EXPECT_FALSE(failure_condition(150, true, 4.9).value);
  const auto r = failure_condition(150, true, kMissing);
  EXPECT_FALSE(r.value);
  EXPECT_TRUE(r.data_quality_flag);
  EXPECT_FALSE(failure_condition(kMissing, false, kMissing).value);
}

TEST(AnnotateState, QuorumIsExactTwoThirds) {
  LabelerConfig c;
  c.window_s = 900;  // three points at 5 min
  // 2 of 3 satisfied: flagged. 1 of 2 defined: not flagged.
  auto s = annotate_state(to_condition({1, 1, 0, 1, -1, 0}), 300, c);
  EXPECT_EQ(s[0], 1);  // {1,1,0}
  EXPECT_EQ(s[1], 1);  // {1,0,1}
  EXPECT_EQ(s[2], 0);  // {0,1,-1}: 1 of 2
  EXPECT_EQ(s[3], 0);  // {1,-1,0}: 1 of 2
  EXPECT_EQ(s[4], 0);  // {-1,0}
  EXPECT_EQ(s[5], 0);
}

TEST(AnnotateState, UndefinedWindowIsNotFlagged) {
  LabelerConfig c;
  c.window_s = 600;
  auto s = annotate_state(to_condition({-1, -1, 1}), 300, c);
  EXPECT_EQ(s[0], 0);
  EXPECT_EQ(s[1], 1);
  EXPECT_EQ(s[2], 1);
}

TEST(AnnotateState, TruncatedWindowsCanBeExcluded) {
  LabelerConfig c;
  c.window_s = 900;
  c.label_truncated_windows = false;
  auto s = annotate_state(to_condition({1, 1, 1, 1}), 300, c);
  EXPECT_EQ(s, (std::vector<std::uint8_t>{1, 1, 0, 0}));
}

TEST(AnnotateState, WindowMustBeGridMultiple) {
  LabelerConfig c;
  c.window_s = 1000;
  try {
    annotate_state(to_condition({1}), 300, c);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kConfig);
  }
}

TEST(BuildEvents, MergeGapIsInclusive) {
  LabelerConfig c;
  c.merge_gap_s = 600;
  c.min_duration_s = 0;
  // Runs [0,300] and [900,900]: gap 600 merges. Then [2100,2100] gap 1200 stays apart.
  std::vector<std::uint8_t> st = {1, 1, 0, 1, 0, 0, 0, 1};
  auto ev = build_events(st, 300, c);
  ASSERT_EQ(ev.size(), 1u);  // single-point event [2100,2100] has duration 0, not > 0
  EXPECT_EQ(ev[0], (FailureEvent{0, 900}));
}

TEST(BuildEvents, ShortEventsDropped) {
  LabelerConfig c;  // merge 1 h, min duration 2 h
  std::vector<std::uint8_t> st(100, 0);
  for (int i = 10; i <= 34; ++i) st[i] = 1;  // 24 steps = 2 h exactly: dropped
  for (int i = 60; i <= 85; ++i) st[i] = 1;  // 25 steps: kept
  auto ev = build_events(st, 300, c);
  ASSERT_EQ(ev.size(), 1u);
  EXPECT_EQ(ev[0], (FailureEvent{60 * 300, 85 * 300}));
}

TEST(BuildEvents, MergedShortRunsCanSurvive) {
  LabelerConfig c;
  std::vector<std::uint8_t> st(60, 0);
  for (int i = 0; i <= 14; ++i) st[i] = 1;   // 70 min
  for (int i = 26; i <= 40; ++i) st[i] = 1;  // gap 60 min
  auto ev = build_events(st, 300, c);
  ASSERT_EQ(ev.size(), 1u);
  EXPECT_EQ(ev[0], (FailureEvent{0, 40 * 300}));
}

TEST(MakeLabels, HorizonBoundaries) {
  LabelerConfig c;
  c.horizon_s = 3600;
  std::vector<FailureEvent> ev = {{6000, 9000}};
  auto l = make_labels(ev, 40, 300, c);
  // t = 2400: onset at +3600 -> positive; t = 2100: onset at +3900 -> negative.
  EXPECT_EQ(l[8], Label::kPositive);
  EXPECT_EQ(l[7], Label::kNegative);
  EXPECT_EQ(l[19], Label::kPositive);
  EXPECT_EQ(l[20], Label::kUndefined);  // onset itself
  EXPECT_EQ(l[30], Label::kUndefined);  // end, closed
  EXPECT_EQ(l[31], Label::kNegative);
}

TEST(MakeLabels, BetweenEventsLooksAtNextOnset) {
  LabelerConfig c;
  std::vector<FailureEvent> ev = {{0, 3000}, {12000, 20000}};
  auto l = make_labels(ev, 80, 300, c);
  EXPECT_EQ(l[10], Label::kUndefined);
  EXPECT_EQ(l[11], Label::kPositive);
  EXPECT_EQ(l[67], Label::kNegative);
}

TEST(LabelTrack, MatchesBruteForceOnRandomTracks) {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<std::size_t> len(1, 200);
  std::vector<LabelerConfig> configs(4);
  configs[1].label_truncated_windows = false;
  configs[2].quorum_num = 1;
  configs[2].quorum_den = 2;
  configs[2].window_s = 3600;
  configs[3].merge_gap_s = 0;
  configs[3].min_duration_s = 1800;
  configs[3].horizon_s = 7200;
  for (int trial = 0; trial < 400; ++trial) {
    const auto& cfg = configs[static_cast<std::size_t>(trial) % configs.size()];
    const auto p = to_oracle(cfg);
    const auto track = random_track(rng, len(rng));
    const auto got = label_track(track, 300, cfg);

    std::vector<int> cond;
    for (std::size_t i = 0; i < track.size(); ++i) {
      cond.push_back(oracle::condition(track.pf[i], track.ventilated[i], track.peep[i], p));
    }
    const auto st = oracle::state(cond, 300, p);
    const auto ev = oracle::events(st, 300, p);
    const auto lab = oracle::labels(ev, track.size(), 300, p);

    ASSERT_EQ(std::vector<int>(got.condition.begin(), got.condition.end()), cond) << trial;
    ASSERT_EQ(std::vector<int>(got.state.begin(), got.state.end()), st) << trial;
    ASSERT_EQ(got.events.size(), ev.size()) << trial;
    for (std::size_t k = 0; k < ev.size(); ++k) {
      EXPECT_EQ(got.events[k].start_s, ev[k].start);
      EXPECT_EQ(got.events[k].end_s, ev[k].end);
    }
    for (std::size_t i = 0; i < lab.size(); ++i) ASSERT_EQ(static_cast<int>(got.labels[i]), lab[i]) << trial;
  }
}

TEST(LabelTrack, QualityFlagsCounted) {
  oxygen::PfTrack t;
  t.pf = {150, 150, 250};
  t.ventilated = {1, 1, 1};
  t.peep = {kMissing, 6, kMissing};
  t.pao2_est.assign(3, kMissing);
  t.fio2_est.assign(3, kMissing);
  t.pao2_source.assign(3, oxygen::Pao2Source::kMissing);
  t.fio2_quality_flag.assign(3, 0);
  auto s = label_track(t, 300);
  EXPECT_EQ(s.data_quality_points, 1u);
  EXPECT_EQ(s.condition, (std::vector<std::int8_t>{0, 1, 0}));
}

TEST(LabelIo, RoundTrips) {
  std::vector<Label> l = {Label::kNegative, Label::kPositive, Label::kUndefined};
  EXPECT_EQ(labels_from_csv(labels_to_csv(l, 300)), l);
  std::vector<FailureEvent> ev = {{300, 9000}, {20000, 30000}};
  EXPECT_EQ(events_from_json(events_to_json(ev)), ev);
  EXPECT_THROW(labels_from_csv("time_s,label\n0,2\n"), Error);
  EXPECT_THROW(events_from_json("{}"), Error);
}
