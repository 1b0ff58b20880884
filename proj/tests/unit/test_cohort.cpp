#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "ews/cohort.hpp"
#include "ews/error.hpp"
#include "ews/fio2_pf.hpp"
#include "ews/labeler.hpp"
#include "ews/synthetic.hpp"
#include "ews/util.hpp"

using namespace ews;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  auto d = fs::temp_directory_path() / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST(Resample, LastValueAtOrBeforeGridTime) {
  const std::vector<RawMeasurement> rows = {
      {"spo2", 0, 97}, {"spo2", 650, 95}, {"spo2", 900, 93}, {"spo2", 901, 90}, {"resp_rate", 1200, 20}};
  const auto s = make_stay("x", {}, rows, 300, 1500);
  ASSERT_EQ(s.grid_size(), 6u);
  const auto* c = s.channel("spo2");
  ASSERT_NE(c, nullptr);
  EXPECT_EQ(c->values[0], 97);
  EXPECT_EQ(c->values[1], 97);
  EXPECT_EQ(c->values[2], 97);
  EXPECT_EQ(c->values[3], 93);  // 900 is at the grid time
  EXPECT_EQ(c->values[4], 90);
  EXPECT_EQ(c->is_real, (std::vector<std::uint8_t>{1, 0, 0, 1, 1, 0}));
  const auto* rr = s.channel("resp_rate");
  EXPECT_TRUE(is_missing(rr->values[3]));
  EXPECT_EQ(rr->values[4], 20);
}

TEST(Resample, EqualTimesKeepInputOrder) {
  const std::vector<RawMeasurement> rows = {{"spo2", 300, 91}, {"spo2", 300, 92}};
  const auto s = make_stay("x", {}, rows, 300);
  EXPECT_EQ(s.channel("spo2")->values[1], 92);
}

TEST(CohortIo, WriteLoadRoundTrip) {
  synth::ScenarioConfig sc;
  sc.n_stays = 4;
  sc.length_h = {10, 12};
  const auto cohort = synth::generate_cohort(sc, 3);
  const auto dir = fresh_dir("ews_cohort_rt");
  write_cohort(cohort, dir);
  const auto loaded = load_cohort(dir, 300);
  EXPECT_TRUE(loaded.errors.empty());
  ASSERT_EQ(loaded.cohort.stays.size(), 4u);
  for (const auto& s : cohort.stays) {
    const auto* b = loaded.cohort.find(s.stay_id);
    ASSERT_NE(b, nullptr);
    EXPECT_EQ(b->length_s, s.length_s);
    EXPECT_EQ(b->statics, s.statics);
    ASSERT_EQ(b->raw.size(), s.raw.size());
    for (const auto& [id, samples] : s.raw) {
      const auto& other = b->raw.at(id);
      ASSERT_EQ(other.size(), samples.size()) << id;
      for (std::size_t i = 0; i < samples.size(); ++i) {
        EXPECT_EQ(other[i].time_s, samples[i].time_s);
        EXPECT_EQ(other[i].value, samples[i].value) << id;
      }
    }
    EXPECT_EQ(b->planted.size(), s.planted.size());
  }
  fs::remove_all(dir);
}

TEST(CohortIo, ReportsMalformedRowsWithLineNumbers) {
  const auto dir = fresh_dir("ews_cohort_bad");
  {
    std::ofstream f(dir / "s1.csv");
    f << "time_s,variable_id,value\n0,spo2,97\nabc,spo2,96\n300,spo2\n600,mystery,1\n900,spo2,inf\n1200,spo2,95\n";
  }
  const auto r = load_cohort(dir, 300);
  ASSERT_EQ(r.cohort.stays.size(), 1u);
  std::set<std::size_t> bad_lines;
  for (const auto& e : r.errors) bad_lines.insert(e.line);
  EXPECT_EQ(bad_lines, (std::set<std::size_t>{3, 4, 6}));
  ASSERT_EQ(r.warnings.size(), 1u);
  EXPECT_EQ(r.warnings[0].line, 5u);
  const auto& s = r.cohort.stays[0];
  EXPECT_EQ(s.raw.at("spo2").size(), 2u);
  EXPECT_TRUE(s.raw.count("mystery"));
  fs::remove_all(dir);
}

TEST(CohortIo, MissingDirectoryIsNotFound) {
  try {
    load_cohort("/nonexistent/ews_dir", 300);
    FAIL();
  } catch (const Error& e) {
    EXPECT_TRUE(e.code() == ErrorCode::kNotFound || e.code() == ErrorCode::kIo);
  }
}

TEST(Splits, DisjointCoveringAndSeeded) {
  std::vector<std::string> ids;
  for (int i = 0; i < 103; ++i) ids.push_back("stay" + std::to_string(i));
  const auto splits = make_splits(ids, 5, 0.6, 0.2, 9);
  ASSERT_EQ(splits.size(), 5u);
  for (const auto& sp : splits) {
    std::set<std::string> all;
    all.insert(sp.train.begin(), sp.train.end());
    all.insert(sp.validation.begin(), sp.validation.end());
    all.insert(sp.test.begin(), sp.test.end());
    EXPECT_EQ(all.size(), ids.size());
    EXPECT_EQ(sp.train.size(), 62u);
    EXPECT_EQ(sp.validation.size(), 21u);
    EXPECT_EQ(sp.test.size(), 20u);
  }
  EXPECT_NE(splits[0].test, splits[1].test);
  const auto again = make_splits(ids, 5, 0.6, 0.2, 9);
  EXPECT_EQ(again[3].train, splits[3].train);
  EXPECT_THROW(make_splits(ids, 5, 0.9, 0.2, 9), Error);
}

TEST(Synthetic, DeterministicAcrossJobCounts) {
  synth::ScenarioConfig sc;
  sc.n_stays = 6;
  sc.length_h = {24, 30};
  const auto a = synth::generate_cohort(sc, 11, 1);
  const auto b = synth::generate_cohort(sc, 11, 3);
  const auto da = fresh_dir("ews_synth_a"), db = fresh_dir("ews_synth_b");
  write_cohort(a, da);
  write_cohort(b, db);
  for (const auto& s : a.stays) {
    EXPECT_EQ(slurp(da / (s.stay_id + ".csv")), slurp(db / (s.stay_id + ".csv")));
    EXPECT_EQ(slurp(da / (s.stay_id + ".json")), slurp(db / (s.stay_id + ".json")));
  }
  const auto c = synth::generate_cohort(sc, 12, 1);
  auto spo2_values = [](const GriddedStay& s) {
    std::vector<double> v;
    for (const auto& tv : s.raw.at("spo2")) v.push_back(tv.value);
    return v;
  };
  EXPECT_NE(spo2_values(c.stays[0]), spo2_values(a.stays[0]));
  fs::remove_all(da);
  fs::remove_all(db);
}

TEST(Synthetic, PlantedEpisodesAreDetectedByTheLabeler) {
  synth::ScenarioConfig sc;
  sc.n_stays = 20;
  sc.length_h = {48, 72};
  sc.failure_fraction = 1.0;
  sc.confounder_rate_per_day = 0.0;
  const auto cohort = synth::generate_cohort(sc, 5);
  std::size_t planted = 0, detected = 0;
  for (const auto& s0 : cohort.stays) {
    auto s = s0;
    oxygen::add_fio2_channel(s);
    const auto track = oxygen::pf_track(s, {});
    const auto lab = label::label_track(track, s.grid_step_s);
    for (const auto& p : s.planted) {
      ++planted;
      for (const auto& e : lab.events) {
        if (e.start_s <= p.end_s && p.start_s <= e.end_s) {
          ++detected;
          break;
        }
      }
    }
  }
  ASSERT_GT(planted, 0u);
  EXPECT_GE(static_cast<double>(detected), 0.8 * static_cast<double>(planted));
}

TEST(Util, Iso8601RoundTrip) {
  EXPECT_EQ(iso8601(0), "1970-01-01T00:00:00Z");
  EXPECT_EQ(iso8601(1577836800), "2020-01-01T00:00:00Z");
  EXPECT_EQ(parse_iso8601("2020-01-01T00:05:00Z"), 1577837100);
  EXPECT_THROW(parse_iso8601("yesterday"), Error);
  double d = 0;
  EXPECT_FALSE(parse_double("1.5x", d));
  EXPECT_FALSE(parse_double("nan", d));
  EXPECT_TRUE(parse_double("-2e3", d));
  EXPECT_EQ(d, -2000);
}
