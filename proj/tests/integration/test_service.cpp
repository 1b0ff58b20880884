#include <gtest/gtest.h>

#include <filesystem>

#include "ews/service.hpp"
#include "tiny_run.hpp"
// httplib after the ews headers: resolv.h defines a macro that clashes with Eigen.
#include <httplib.h>

using namespace ews;
using namespace ews::service;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

class ServiceTest : public ::testing::Test {
 protected:
  void SetUp() override {
    store_ = fs::temp_directory_path() / ("ews_svc_store_" + std::to_string(::getpid()));
    fs::remove_all(store_);
    start();
  }
  void TearDown() override {
    stop();
    fs::remove_all(store_);
  }

  void start() {
    ServiceConfig cfg;
    cfg.data_dir = testing_support::tiny_run();
    cfg.port = 0;
    cfg.annotation_store = store_;
    cfg.threads = 2;
    svc_ = std::make_unique<MonitorService>(cfg);
    port_ = svc_->start();
    client_ = std::make_unique<httplib::Client>("127.0.0.1", port_);
  }
  void stop() {
    client_.reset();
    if (svc_) svc_->stop();
    svc_.reset();
  }

  std::pair<int, json> get(const std::string& path) {
    auto r = client_->Get(path);
    if (!r) return {0, json()};
    return {r->status, r->body.empty() ? json() : json::parse(r->body)};
  }
  std::pair<int, json> send(const std::string& method, const std::string& path, const json& body) {
    httplib::Result r = method == "POST" ? client_->Post(path, body.dump(), "application/json")
                                         : client_->Put(path, body.dump(), "application/json");
    if (!r) return {0, json()};
    return {r->status, r->body.empty() ? json() : json::parse(r->body)};
  }
  int del(const std::string& path) {
    auto r = client_->Delete(path);
    return r ? r->status : 0;
  }

  std::string first_stay() {
    auto [status, body] = get("/api/patients");
    return body.at(0).at("stay_id").get<std::string>();
  }

  fs::path store_;
  std::unique_ptr<MonitorService> svc_;
  std::unique_ptr<httplib::Client> client_;
  int port_ = 0;
};

json review(std::int64_t start, std::int64_t end) {
  return {{"type", "failure_review"}, {"start_s", start}, {"end_s", end}, {"label", "reviewed"},
          {"metadata", {{"verdict", "uncertain"}}}};
}

}  // namespace

TEST_F(ServiceTest, ListsPatientsWithChannels) {
  auto [status, body] = get("/api/patients");
  ASSERT_EQ(status, 200);
  ASSERT_EQ(body.size(), 16u);
  const auto& p = body[0];
  EXPECT_TRUE(p.contains("length_s"));
  EXPECT_TRUE(p["has_predictions"].get<bool>());
  bool has_spo2 = false, has_pf = false;
  for (const auto& c : p["channels"]) {
    has_spo2 |= c["id"] == "spo2";
    has_pf |= c["id"] == "pf";
  }
  EXPECT_TRUE(has_spo2);
  EXPECT_TRUE(has_pf);
  auto [s2, one] = get("/api/patients/" + p["stay_id"].get<std::string>());
  EXPECT_EQ(s2, 200);
  EXPECT_EQ(one["stay_id"], p["stay_id"]);
}

TEST_F(ServiceTest, UnknownStayIs404) {
  auto [status, body] = get("/api/patients/no_such_stay");
  EXPECT_EQ(status, 404);
  EXPECT_EQ(body["error"]["status"], 404);
  EXPECT_FALSE(body["error"]["message"].get<std::string>().empty());
  EXPECT_EQ(get("/api/patients/no_such_stay/series").first, 404);
  EXPECT_EQ(get("/api/annotations/ann-000000000000").first, 404);
  EXPECT_EQ(send("POST", "/api/patients/no_such_stay/annotations", review(0, 10)).first, 404);
}

TEST_F(ServiceTest, SeriesWindowAndDecimation) {
  const auto id = first_stay();
  auto [status, full] = get("/api/patients/" + id + "/series?channels=spo2,pf");
  ASSERT_EQ(status, 200);
  ASSERT_EQ(full["series"].size(), 2u);
  const auto& spo2 = full["series"][0];
  EXPECT_EQ(spo2["channel"], "spo2");
  EXPECT_EQ(spo2["time_s"].size(), spo2["value"].size());
  EXPECT_EQ(spo2["time"].size(), spo2["value"].size());

  auto [s2, dec] = get("/api/patients/" + id + "/series?channels=spo2&max_points=50");
  ASSERT_EQ(s2, 200);
  const auto& d = dec["series"][0];
  EXPECT_LE(d["value"].size(), 50u);
  EXPECT_TRUE(d["decimated"].get<bool>());
  EXPECT_EQ(d["n_total"], spo2["n_total"]);
  double vmax = -1e9, dmax = -1e9;
  for (const auto& v : spo2["value"]) vmax = std::max(vmax, v.get<double>());
  for (const auto& v : d["value"]) dmax = std::max(dmax, v.get<double>());
  EXPECT_EQ(vmax, dmax);

  auto [s3, win] = get("/api/patients/" + id + "/series?channels=spo2&from_s=3600&to_s=7200");
  ASSERT_EQ(s3, 200);
  for (const auto& t : win["series"][0]["time_s"]) {
    EXPECT_GE(t.get<std::int64_t>(), 3600);
    EXPECT_LE(t.get<std::int64_t>(), 7200);
  }
  EXPECT_EQ(get("/api/patients/" + id + "/series?channels=nope").first, 404);
  EXPECT_EQ(get("/api/patients/" + id + "/series?from_s=10&to_s=5").first, 400);
}

TEST_F(ServiceTest, PredictionGapsCoverEventsExactly) {
  auto [status, patients] = get("/api/patients");
  std::size_t with_events = 0;
  for (const auto& p : patients) {
    const auto id = p["stay_id"].get<std::string>();
    auto [s1, pred] = get("/api/patients/" + id + "/predictions");
    auto [s2, ev] = get("/api/patients/" + id + "/events");
    ASSERT_EQ(s1, 200);
    ASSERT_EQ(s2, 200);
    ASSERT_EQ(pred["gaps"].size(), ev["events"].size()) << id;
    for (std::size_t k = 0; k < ev["events"].size(); ++k) {
      EXPECT_EQ(pred["gaps"][k]["start_s"], ev["events"][k]["start_s"]);
      EXPECT_EQ(pred["gaps"][k]["end_s"], ev["events"][k]["end_s"]);
    }
    std::size_t nulls = 0;
    for (const auto& s : pred["score"]) nulls += s.is_null();
    std::size_t covered = 0;
    for (const auto& e : ev["events"]) covered += (e["end_s"].get<std::int64_t>() - e["start_s"].get<std::int64_t>()) / 300 + 1;
    EXPECT_EQ(nulls, covered);
    with_events += !ev["events"].empty();
  }
  EXPECT_GT(with_events, 0u);
}

TEST_F(ServiceTest, AnnotationCrudRoundTrip) {
  const auto id = first_stay();
  auto [s1, created] = send("POST", "/api/patients/" + id + "/annotations", review(600, 3600));
  ASSERT_EQ(s1, 201) << created.dump();
  const auto aid = created["annotation_id"].get<std::string>();
  EXPECT_EQ(created["version"], 1);
  EXPECT_EQ(created["start"], "2020-01-01T00:10:00Z");

  auto [s2, fetched] = get("/api/annotations/" + aid);
  EXPECT_EQ(s2, 200);
  EXPECT_EQ(fetched, created);

  auto [s3, updated] = send("PUT", "/api/annotations/" + aid, {{"version", 1}, {"end_s", 4200}});
  ASSERT_EQ(s3, 200) << updated.dump();
  EXPECT_EQ(updated["version"], 2);
  EXPECT_EQ(updated["end_s"], 4200);
  EXPECT_EQ(updated["metadata"], created["metadata"]);

  auto [s4, listed] = get("/api/patients/" + id + "/annotations");
  ASSERT_EQ(listed.size(), 1u);
  EXPECT_EQ(listed[0], updated);

  EXPECT_EQ(del("/api/annotations/" + aid + "?version=1"), 409);
  EXPECT_EQ(del("/api/annotations/" + aid + "?version=2"), 204);
  EXPECT_EQ(get("/api/annotations/" + aid).first, 404);
}

TEST_F(ServiceTest, StaleUpdateIs409) {
  const auto id = first_stay();
  auto [s1, a] = send("POST", "/api/patients/" + id + "/annotations", review(0, 300));
  const auto path = "/api/annotations/" + a["annotation_id"].get<std::string>();
  EXPECT_EQ(send("PUT", path, {{"version", 1}, {"label", "first"}}).first, 200);
  auto [s2, err] = send("PUT", path, {{"version", 1}, {"label", "second"}});
  EXPECT_EQ(s2, 409);
  EXPECT_EQ(err["error"]["status"], 409);
  EXPECT_EQ(get(path).second["label"], "first");
}

TEST_F(ServiceTest, InvalidPayloadIs422WithFields) {
  const auto id = first_stay();
  auto [s1, err] = send("POST", "/api/patients/" + id + "/annotations", review(3600, 600));
  ASSERT_EQ(s1, 422);
  ASSERT_EQ(err["error"]["fields"].size(), 1u);
  EXPECT_EQ(err["error"]["fields"][0]["field"], "end_s");

  auto bad = review(0, 10);
  bad["metadata"] = {{"verdict", "true_failure"}, {"extra", 1}};
  auto [s2, err2] = send("POST", "/api/patients/" + id + "/annotations", bad);
  EXPECT_EQ(s2, 422);
  EXPECT_EQ(err2["error"]["fields"][0]["field"], "metadata.extra");

  auto r = client_->Post("/api/patients/" + id + "/annotations", "{not json", "application/json");
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 400);
  EXPECT_EQ(get("/api/patients/" + id + "/annotations").second.size(), 0u);
}

TEST_F(ServiceTest, ExportSortedByStayThenStart) {
  auto [status, patients] = get("/api/patients");
  const auto a = patients[0]["stay_id"].get<std::string>();
  const auto b = patients[1]["stay_id"].get<std::string>();
  send("POST", "/api/patients/" + b + "/annotations", review(100, 200));
  send("POST", "/api/patients/" + a + "/annotations", review(900, 1000));
  send("POST", "/api/patients/" + a + "/annotations", review(50, 60));
  auto [s, ex] = get("/api/export/annotations");
  ASSERT_EQ(s, 200);
  EXPECT_EQ(ex["format"], "ews-annotations");
  const auto& anns = ex["annotations"];
  ASSERT_EQ(anns.size(), 3u);
  for (std::size_t i = 1; i < anns.size(); ++i) {
    const auto ka = std::make_pair(anns[i - 1]["stay_id"].get<std::string>(), anns[i - 1]["start_s"].get<std::int64_t>());
    const auto kb = std::make_pair(anns[i]["stay_id"].get<std::string>(), anns[i]["start_s"].get<std::int64_t>());
    EXPECT_LE(ka, kb);
  }
}

TEST_F(ServiceTest, AnnotationsSurviveRestart) {
  const auto id = first_stay();
  auto [s1, a] = send("POST", "/api/patients/" + id + "/annotations",
                      {{"type", "note"}, {"start_s", 5}, {"end_s", 5}, {"metadata", {{"author", "r. lee"}, {"k", true}}}});
  ASSERT_EQ(s1, 201) << a.dump();
  stop();
  start();
  auto [s2, back] = get("/api/annotations/" + a["annotation_id"].get<std::string>());
  EXPECT_EQ(s2, 200);
  EXPECT_EQ(back, a);
}

TEST_F(ServiceTest, AnnotationTypesServed) {
  auto [status, types] = get("/api/annotation-types");
  ASSERT_EQ(status, 200);
  std::vector<std::string> names;
  for (const auto& t : types) names.push_back(t["name"]);
  EXPECT_EQ(names, (std::vector<std::string>{"failure_review", "artifact", "intervention", "note"}));
}

TEST_F(ServiceTest, RejectsPathTraversalIds) {
  const auto st = get("/api/patients/..%2F..%2Fetc").first;
  EXPECT_TRUE(st == 400 || st == 404) << st;
}

TEST(ServiceStartup, BusyPortAndMissingDirectory) {
  ServiceConfig bad;
  bad.data_dir = "/nonexistent/ews";
  EXPECT_THROW(MonitorService{bad}, Error);

  const auto store = fs::temp_directory_path() / ("ews_svc_busy_" + std::to_string(::getpid()));
  ServiceConfig cfg;
  cfg.data_dir = testing_support::tiny_run();
  cfg.annotation_store = store;
  cfg.port = 0;
  MonitorService first(cfg);
  const int port = first.start();
  cfg.port = port;
  MonitorService second(cfg);
  try {
    second.bind();
    ADD_FAILURE();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kIo);
  }
  first.stop();
  fs::remove_all(store);
}
