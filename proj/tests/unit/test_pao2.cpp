#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <map>
#include <set>

#include "ews/abga.hpp"
#include "ews/error.hpp"
#include "ews/oxygen_curve.hpp"
#include "ews/pao2.hpp"

using namespace ews;
using namespace ews::oxygen;

namespace {

Pao2Example example(std::string group, double pao2, double sao2, double age_s = 3600) {
  Pao2Example e;
  e.group_id = std::move(group);
  e.target_pao2 = pao2;
  e.last_abga_age_s = age_s;
  e.set(AbgaField::kSao2, sao2);
  e.set(AbgaField::kSpo2, sao2);
  return e;
}

}  // namespace

TEST(Pao2Config, PublishedHyperparameters) {
  const auto spo2 = default_train_config(EstimatorKind::kSpo2Nn).hp;
  EXPECT_EQ(spo2.batch_size, 50);
  EXPECT_EQ(spo2.hidden_layers, (std::vector<int>{64, 128, 64}));
  EXPECT_FALSE(spo2.gamma.has_value());
  EXPECT_DOUBLE_EQ(spo2.learning_rate, 1e-4);
  EXPECT_DOUBLE_EQ(spo2.dropout_rate, 0.5);

  const auto full = default_train_config(EstimatorKind::kFullNn).hp;
  EXPECT_EQ(full.batch_size, 50);
  EXPECT_EQ(full.hidden_layers, (std::vector<int>{8, 8}));
  ASSERT_TRUE(full.gamma.has_value());
  EXPECT_DOUBLE_EQ(*full.gamma, 0.2);
  EXPECT_DOUBLE_EQ(full.learning_rate, 1e-3);
  EXPECT_DOUBLE_EQ(full.dropout_rate, 0.0);
}

TEST(Pao2Config, PublishedSearchSpace) {
  const auto s = default_search_space();
  EXPECT_EQ(s.batch_sizes, (std::vector<int>{30, 50, 100, 300, 500}));
  const std::vector<std::vector<int>> layers = {{8, 8},        {16, 16},        {32, 32},       {64, 64},
                                                {128, 128},    {256, 256},      {64, 128},      {128, 64},
                                                {64, 64, 64},  {64, 128, 64},   {128, 128, 128},
                                                {128, 256, 128}, {256, 512, 256}};
  EXPECT_EQ(s.hidden_layers, layers);
  ASSERT_EQ(s.gammas.size(), 6u);
  EXPECT_FALSE(s.gammas[0].has_value());
  EXPECT_DOUBLE_EQ(*s.gammas[3], 0.33);
  EXPECT_DOUBLE_EQ(*s.gammas[5], 1.0);
  ASSERT_EQ(s.learning_rates.size(), 10u);
  EXPECT_DOUBLE_EQ(s.learning_rates.front(), 1e-4);
  EXPECT_LT(s.learning_rates.back(), 1e-1);
  for (std::size_t i = 1; i < s.learning_rates.size(); ++i) {
    EXPECT_NEAR(s.learning_rates[i] / s.learning_rates[i - 1], s.learning_rates[1] / s.learning_rates[0], 1e-9);
  }
  ASSERT_EQ(s.dropout_rates.size(), 10u);
  EXPECT_DOUBLE_EQ(s.dropout_rates.front(), 0.0);
  EXPECT_LT(s.dropout_rates.back(), 0.5);
  EXPECT_EQ(s.points().size(), 5u * 13 * 6 * 10 * 10);
}

TEST(Pao2Config, PinnedSpaceHasOnePoint) {
  const auto hp = default_train_config(EstimatorKind::kFullNn).hp;
  const auto pts = pinned_space(hp).points();
  ASSERT_EQ(pts.size(), 1u);
  EXPECT_EQ(pts[0], hp);
}

TEST(Pao2Config, EstimatorNames) {
  for (auto k : {EstimatorKind::kPnl, EstimatorKind::kSpo2Nn, EstimatorKind::kFullNn}) {
    EXPECT_EQ(estimator_from_name(estimator_name(k)), k);
  }
  EXPECT_THROW(estimator_from_name("nope"), Error);
}

TEST(AbgaFilter, InclusiveBoundsAndCounting) {
  std::vector<Pao2Example> xs = {example("a", 40.0, 0.7),  example("a", 250.0, 0.99),
                                 example("a", 39.9, 0.7),  example("b", 250.1, 0.99),
                                 example("b", 90.0, 0.97, 24 * 3600.0),
                                 example("b", 90.0, 0.97, 24 * 3600.0 + 1),
                                 example("c", 20.0, 0.3, 48 * 3600.0)};
  AbgaFilterReport rep;
  const auto kept = filter_abga_dataset(xs, {}, &rep);
  EXPECT_EQ(kept.size(), 3u);
  EXPECT_EQ(rep.kept, 3u);
  EXPECT_EQ(rep.removed_pao2_range, 3u);  // includes the sample failing both rules
  EXPECT_EQ(rep.removed_abga_age, 1u);
}

TEST(ExampleWeights, MatchBruteForceCounts) {
  auto data = generate_abga_dataset(3, 600);
  for (std::optional<double> gamma : {std::optional<double>{}, std::optional<double>{0.33},
                                      std::optional<double>{1.0}}) {
    auto copy = data;
    assign_example_weights(copy, gamma);
    for (std::size_t i = 0; i < copy.size(); i += 17) {
      int c = 0;
      const auto key = saturation_key(copy[i].get(AbgaField::kSao2));
      for (const auto& e : copy) c += saturation_key(e.get(AbgaField::kSao2)) == key;
      const double expected = gamma ? 1.0 / std::pow(c, *gamma) : 1.0;
      EXPECT_DOUBLE_EQ(copy[i].weight, expected);
      EXPECT_DOUBLE_EQ(example_weight(copy[i].get(AbgaField::kSao2), copy, gamma), expected);
    }
  }
}

TEST(AbgaSynth, DeterministicAndPhysiological) {
  const auto a = generate_abga_dataset(5, 400);
  const auto b = generate_abga_dataset(5, 400);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].group_id, b[i].group_id);
    EXPECT_EQ(a[i].target_pao2, b[i].target_pao2);
    EXPECT_EQ(a[i].get(AbgaField::kSpo2), b[i].get(AbgaField::kSpo2));
  }
  int hypox = 0;
  for (const auto& e : a) {
    const double s = e.get(AbgaField::kSao2);
    ASSERT_GT(s, 0.0);
    ASSERT_LT(s, 1.0);
    const double spo2 = e.get(AbgaField::kSpo2);
    EXPECT_DOUBLE_EQ(spo2 * 100, std::round(spo2 * 100));  // whole percent
    hypox += s < 0.9;
  }
  EXPECT_GT(hypox, 0);
}

TEST(Folds, GroupsNeverSplit) {
  const auto data = generate_abga_dataset(9, 800);
  const auto folds = assign_folds(data, 5, 1);
  ASSERT_EQ(folds.size(), data.size());
  std::map<std::string, int> seen;
  std::set<int> used;
  for (std::size_t i = 0; i < data.size(); ++i) {
    ASSERT_GE(folds[i], 0);
    ASSERT_LT(folds[i], 5);
    used.insert(folds[i]);
    auto [it, fresh] = seen.emplace(data[i].group_id, folds[i]);
    if (!fresh) EXPECT_EQ(it->second, folds[i]) << data[i].group_id;
  }
  EXPECT_EQ(used.size(), 5u);
  EXPECT_EQ(assign_folds(data, 5, 1), folds);
}

TEST(Buckets, HalfOpenExceptTop) {
  SaturationBucket b{"90-96", 90, 96};
  EXPECT_TRUE(b.contains(90));
  EXPECT_TRUE(b.contains(95.9));
  EXPECT_FALSE(b.contains(96));
  SaturationBucket top{"96-100", 96, 100};
  EXPECT_TRUE(top.contains(100));
}

TEST(Pao2Evaluation, PerfectPredictorHasZeroError) {
  const auto test = generate_abga_dataset(12, 500);
  NamedPredictor oracle{"oracle", [](const Pao2Example& e) { return e.target_pao2; }};
  std::vector<NamedPredictor> preds = {oracle, pnl_predictor()};
  const auto rep = evaluate_pao2_models(preds, test);
  ASSERT_EQ(rep.estimators.size(), 2u);
  const auto& overall = rep.estimators[0].buckets[0];
  EXPECT_EQ(overall.n, test.size());
  EXPECT_DOUBLE_EQ(overall.median_abs_error, 0.0);
  EXPECT_GT(rep.estimators[1].buckets[0].median_abs_error, 0.0);
  EXPECT_NE(rep.to_csv().find("oracle"), std::string::npos);
}

TEST(Pao2Evaluation, PnlReadsSpo2) {
  Pao2Example e = example("g", 80, 0.95);
  e.set(AbgaField::kSpo2, 0.90);
  EXPECT_DOUBLE_EQ(pnl_predictor().predict(e), ellis_pao2(0.90));
}

TEST(Pao2Model, SaveLoadRoundTrip) {
  auto data = generate_abga_dataset(2, 400);
  auto cfg = default_train_config(EstimatorKind::kSpo2Nn);
  cfg.hp.hidden_layers = {8};
  cfg.hp.dropout_rate = 0.0;
  cfg.hp.learning_rate = 3e-3;
  cfg.max_epochs = 3;
  std::span<const Pao2Example> all(data);
  const auto m = train_pao2_model(EstimatorKind::kSpo2Nn, all.subspan(0, 300), all.subspan(300), cfg, 1);
  const auto p = std::filesystem::temp_directory_path() / "ews_pao2_model.json";
  m.save(p);
  const auto back = Pao2Model::load(p);
  std::filesystem::remove(p);
  EXPECT_EQ(back.kind, m.kind);
  for (std::size_t i = 300; i < 320; ++i) EXPECT_DOUBLE_EQ(back.predict(data[i]), m.predict(data[i]));
}
