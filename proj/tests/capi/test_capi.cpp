#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <json.hpp>
#include <string>
#include <vector>

#include <unistd.h>

#include "ews/ews.h"

namespace fs = std::filesystem;

namespace {

std::string take(char* s) {
  std::string out = s ? s : "";
  ews_string_free(s);
  return out;
}

}  // namespace

TEST(CApi, VersionAndStatusNames) {
  EXPECT_STRNE(ews_version(), "");
  EXPECT_STREQ(ews_status_name(EWS_OK), "ok");
  EXPECT_STRNE(ews_status_name(EWS_ERR_STALE_ARTIFACT), ews_status_name(EWS_ERR_MISSING_ARTIFACT));
}

TEST(CApi, OxygenCurve) {
  double s = 0, p = 0;
  ASSERT_EQ(ews_severinghaus_sao2(80.0, &s), EWS_OK);
  ASSERT_EQ(ews_ellis_pao2(s, &p), EWS_OK);
  EXPECT_NEAR(p, 80.0, 1e-9);
  EXPECT_EQ(ews_severinghaus_sao2(-1.0, &s), EWS_ERR_DOMAIN);
  EXPECT_NE(std::string(ews_last_error()).find("pao2"), std::string::npos);
  EXPECT_EQ(ews_ellis_pao2(0.5, nullptr), EWS_ERR_INVALID_ARGUMENT);
}

TEST(CApi, Fio2Lookup) {
  double f = 0;
  ASSERT_EQ(ews_fio2_from_supplemental(nullptr, 4.0, &f), EWS_OK);
  EXPECT_EQ(f, 0.45);
  const auto table = (fs::path(EWS_DATA_DIR) / "fio2_supplemental_table.csv").string();
  ASSERT_EQ(ews_fio2_from_supplemental(table.c_str(), 20.0, &f), EWS_OK);
  EXPECT_EQ(f, 0.75);
  EXPECT_EQ(ews_fio2_from_supplemental("/nonexistent.csv", 1.0, &f), EWS_ERR_IO);
}

TEST(CApi, LabelSeries) {
  const std::size_t n = 120;
  std::vector<double> pf(n, 300.0), peep(n, NAN);
  std::vector<std::uint8_t> vent(n, 0);
  for (std::size_t i = 40; i < 80; ++i) pf[i] = 150.0;
  std::vector<std::int8_t> labels(n);
  char* events = nullptr;
  ASSERT_EQ(ews_label_series(pf.data(), vent.data(), peep.data(), n, 300, nullptr, labels.data(), &events), EWS_OK)
      << ews_last_error();
  const auto ev = nlohmann::json::parse(take(events));
  ASSERT_EQ(ev.size(), 1u);
  // The forward window flags points up to 2/3 of a window before the run.
  const auto start = ev[0]["start_s"].get<std::int64_t>();
  EXPECT_LE(start, 40 * 300);
  EXPECT_EQ(labels[static_cast<std::size_t>(start / 300)], -1);
  EXPECT_EQ(labels[static_cast<std::size_t>(start / 300) - 1], 1);
  EXPECT_EQ(labels[0], 1);  // onset within 8 h
  EXPECT_EQ(labels[n - 1], 0);

  ASSERT_EQ(ews_label_series(pf.data(), vent.data(), peep.data(), n, 300, R"({"horizon_s": 600})", labels.data(),
                             nullptr),
            EWS_OK);
  EXPECT_EQ(labels[static_cast<std::size_t>(start / 300) - 3], 0);
  EXPECT_EQ(ews_label_series(pf.data(), vent.data(), peep.data(), n, 300, "{bad", labels.data(), nullptr),
            EWS_ERR_PARSE);
  EXPECT_EQ(ews_label_series(pf.data(), vent.data(), peep.data(), n, 300, R"({"nope": 1})", labels.data(), nullptr),
            EWS_ERR_CONFIG);
}

TEST(CApi, Silence) {
  std::vector<std::int64_t> t;
  std::vector<double> s;
  for (int i = 0; i < 20; ++i) {
    t.push_back(i * 300);
    s.push_back(1.0);
  }
  std::vector<std::int64_t> alarms(t.size());
  std::size_t n = 0;
  ASSERT_EQ(ews_silence(t.data(), s.data(), t.size(), 0.5, 1800, alarms.data(), &n), EWS_OK);
  EXPECT_EQ(n, 4u);
  EXPECT_EQ(alarms[1], 1800);
}

TEST(CApi, PipelineAndModel) {
  const auto dir = fs::temp_directory_path() / ("ews_capi_run_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  ews_pipeline* p = nullptr;
  ASSERT_EQ(ews_pipeline_open(nullptr, dir.c_str(), &p), EWS_OK) << ews_last_error();
  EXPECT_EQ(ews_pipeline_set(p, "scenario.n_stays", "8"), EWS_OK);
  EXPECT_EQ(ews_pipeline_set(p, "scenario.length_h", "[24,30]"), EWS_OK);
  EXPECT_EQ(ews_pipeline_set(p, "gbdt.max_trees", "10"), EWS_OK);
  EXPECT_EQ(ews_pipeline_set(p, "gbdt.max_bins", "16"), EWS_OK);
  EXPECT_EQ(ews_pipeline_set(p, "gbdt.nope", "1"), EWS_ERR_CONFIG);

  char* summary = nullptr;
  EXPECT_EQ(ews_pipeline_run(p, "evaluate", &summary), EWS_ERR_MISSING_ARTIFACT);
  EXPECT_NE(std::string(ews_last_error()).find("train-ews"), std::string::npos);
  EXPECT_EQ(ews_pipeline_run(p, "bogus", &summary), EWS_ERR_CONFIG);
  for (const char* stage : {"synth", "label", "featurize", "train-ews"}) {
    ASSERT_EQ(ews_pipeline_run(p, stage, &summary), EWS_OK) << stage << ": " << ews_last_error();
    EXPECT_TRUE(nlohmann::json::parse(take(summary)).is_object());
  }
  char* cfg = nullptr;
  ASSERT_EQ(ews_pipeline_config_json(p, &cfg), EWS_OK);
  EXPECT_EQ(nlohmann::json::parse(take(cfg))["scenario"]["n_stays"], 8);
  ews_pipeline_close(p);

  ews_model* m = nullptr;
  ASSERT_EQ(ews_model_load((dir / "models/split_0/ews.json").c_str(), &m), EWS_OK) << ews_last_error();
  const std::size_t k = ews_model_num_features(m);
  EXPECT_EQ(k, 319u);
  EXPECT_STREQ(ews_model_feature_name(m, 0), "fio2__current");
  EXPECT_EQ(ews_model_feature_name(m, k), nullptr);
  std::vector<double> row(k, NAN);
  double prob = -1;
  ASSERT_EQ(ews_model_predict(m, row.data(), k, &prob), EWS_OK);
  EXPECT_GT(prob, 0.0);
  EXPECT_LT(prob, 1.0);
  EXPECT_NE(ews_model_predict(m, row.data(), k - 1, &prob), EWS_OK);
  ews_model_free(m);
  EXPECT_EQ(ews_model_load("/nonexistent/model.json", &m), EWS_ERR_MISSING_ARTIFACT);
  fs::remove_all(dir);
}

TEST(CApi, ServiceLifecycle) {
  const auto dir = fs::temp_directory_path() / ("ews_capi_svc_" + std::to_string(::getpid()));
  fs::create_directories(dir / "cohort");
  ews_service* s = nullptr;
  ASSERT_EQ(ews_service_create(dir.c_str(), "127.0.0.1", 0, nullptr, nullptr, nullptr, &s), EWS_OK)
      << ews_last_error();
  int port = 0;
  ASSERT_EQ(ews_service_start(s, &port), EWS_OK) << ews_last_error();
  EXPECT_GT(port, 0);
  ews_service_stop(s);
  ews_service_free(s);
  EXPECT_EQ(ews_service_create("/nonexistent/dir", nullptr, 0, nullptr, nullptr, nullptr, &s), EWS_ERR_IO);
  fs::remove_all(dir);
}
