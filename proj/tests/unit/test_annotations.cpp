#include <gtest/gtest.h>

#include <filesystem>
#include <random>
#include <thread>

#include <unistd.h>

#include "ews/json_schema.hpp"
#include "ews/service.hpp"

using namespace ews;
using namespace ews::service;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::vector<std::string> fields_of(const std::vector<schema::FieldError>& errs) {
  std::vector<std::string> out;
  for (const auto& e : errs) out.push_back(e.field);
  return out;
}

class StoreTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("ews_store_" + std::to_string(::getpid()) + "_" +
                                        ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir_);
    types_ = load_annotation_types(fs::path(EWS_DATA_DIR) / "annotation_types.json");
  }
  void TearDown() override { fs::remove_all(dir_); }

  fs::path dir_;
  std::vector<AnnotationTypeDef> types_;
};

json review(std::int64_t start, std::int64_t end) {
  return {{"type", "failure_review"}, {"start_s", start}, {"end_s", end}, {"label", "x"},
          {"metadata", {{"verdict", "true_failure"}, {"confidence", 4}}}};
}

}  // namespace

TEST(JsonSchema, TypesAndBounds) {
  const json s = {{"type", "object"},
                  {"properties",
                   {{"n", {{"type", "integer"}, {"minimum", 1}, {"exclusiveMaximum", 5}}},
                    {"x", {{"type", "number"}}},
                    {"s", {{"type", "string"}, {"minLength", 2}, {"maxLength", 3}, {"pattern", "^[a-z]+$"}}},
                    {"e", {{"enum", {"a", "b"}}}},
                    {"c", {{"const", 7}}},
                    {"t", {{"type", "array"}, {"items", {{"type", "string"}}}, {"maxItems", 2}}}}},
                  {"required", {"n"}},
                  {"additionalProperties", false}};
  EXPECT_TRUE(schema::validate(s, {{"n", 4}, {"x", 1.5}, {"s", "ab"}, {"e", "a"}, {"c", 7}, {"t", {"q"}}}).empty());
  EXPECT_TRUE(schema::validate(s, {{"n", 4.0}}).empty());  // integral number counts as integer
  EXPECT_EQ(fields_of(schema::validate(s, {{"n", 5}})), std::vector<std::string>{"n"});
  EXPECT_EQ(fields_of(schema::validate(s, {{"n", 1.5}})), std::vector<std::string>{"n"});
  EXPECT_EQ(fields_of(schema::validate(s, json::object())), std::vector<std::string>{"n"});
  EXPECT_EQ(fields_of(schema::validate(s, {{"n", 2}, {"s", "ABC"}})), std::vector<std::string>{"s"});
  EXPECT_EQ(fields_of(schema::validate(s, {{"n", 2}, {"s", "abcd"}})), std::vector<std::string>{"s"});
  EXPECT_EQ(fields_of(schema::validate(s, {{"n", 2}, {"e", "z"}})), std::vector<std::string>{"e"});
  EXPECT_EQ(fields_of(schema::validate(s, {{"n", 2}, {"c", 8}})), std::vector<std::string>{"c"});
  EXPECT_EQ(fields_of(schema::validate(s, {{"n", 2}, {"t", {"a", 1}}})), std::vector<std::string>{"t[1]"});
  EXPECT_EQ(fields_of(schema::validate(s, {{"n", 2}, {"t", {"a", "b", "c"}}})), std::vector<std::string>{"t"});
  EXPECT_EQ(fields_of(schema::validate(s, {{"n", 2}, {"zz", 1}})), std::vector<std::string>{"zz"});
  EXPECT_EQ(fields_of(schema::validate(s, {{"n", true}})), std::vector<std::string>{"n"});
  EXPECT_EQ(fields_of(schema::validate(s, {{"n", 2}}, "metadata"))
                .size(), 0u);
  EXPECT_EQ(fields_of(schema::validate(s, {{"n", 9}}, "metadata")), std::vector<std::string>{"metadata.n"});
}

TEST(JsonSchema, StringLengthCountsCodePoints) {
  const json s = {{"type", "string"}, {"maxLength", 3}};
  EXPECT_TRUE(schema::validate(s, "\xC3\xA4\xC3\xB6\xC3\xBC").empty());  // three umlauts, six bytes
  EXPECT_FALSE(schema::validate(s, "abcd").empty());
}

TEST(JsonSchema, CheckSchemaRejectsUnsupported) {
  EXPECT_TRUE(schema::check_schema({{"type", "object"}, {"title", "t"}}).empty());
  EXPECT_FALSE(schema::check_schema({{"type", "object"}, {"oneOf", json::array()}}).empty());
  EXPECT_FALSE(schema::check_schema({{"type", "wat"}}).empty());
  EXPECT_FALSE(schema::check_schema({{"minimum", "3"}}).empty());
  EXPECT_FALSE(schema::check_schema({{"pattern", "("}}).empty());
}

TEST(AnnotationTypes, RejectsDuplicatesAndBadSchemas) {
  const json dup = json::array({{{"name", "a"}, {"schema", {{"type", "object"}}}},
                                {{"name", "a"}, {"schema", {{"type", "object"}}}}});
  EXPECT_THROW(parse_annotation_types(dup), Error);
  const json bad = json::array({{{"name", "a"}, {"schema", {{"allOf", json::array()}}}}});
  EXPECT_THROW(parse_annotation_types(bad), Error);
}

TEST(Decimation, KeepsExtremaInOrder) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g(0, 1);
  std::vector<double> v(10000);
  for (auto& x : v) x = g(rng);
  v[4321] = 50;
  v[777] = -50;
  const auto idx = decimate_min_max(v, 200);
  EXPECT_LE(idx.size(), 200u);
  EXPECT_TRUE(std::is_sorted(idx.begin(), idx.end()));
  EXPECT_NE(std::find(idx.begin(), idx.end(), 4321u), idx.end());
  EXPECT_NE(std::find(idx.begin(), idx.end(), 777u), idx.end());
  // Every group's extrema survive.
  const std::size_t groups = 100;
  for (std::size_t gi = 0; gi < groups; ++gi) {
    const std::size_t lo = gi * v.size() / groups, hi = (gi + 1) * v.size() / groups;
    const auto mx = static_cast<std::size_t>(std::max_element(v.begin() + lo, v.begin() + hi) - v.begin());
    EXPECT_NE(std::find(idx.begin(), idx.end(), mx), idx.end()) << gi;
  }
  EXPECT_EQ(decimate_min_max({1, 2, 3}, 10).size(), 3u);
}

TEST_F(StoreTest, CreateGetListRoundTrip) {
  AnnotationStore store(dir_, types_);
  const auto a = store.create("s1", review(600, 1200));
  EXPECT_EQ(a.annotation_id.rfind("ann-", 0), 0u);
  EXPECT_EQ(a.version, 1);
  EXPECT_EQ(a.stay_id, "s1");
  const auto got = store.get(a.annotation_id);
  ASSERT_TRUE(got.has_value());
  EXPECT_EQ(got->to_json(), a.to_json());
  store.create("s1", review(0, 300));
  store.create("s2", review(100, 200));
  AnnotationQuery q;
  q.stay_id = "s1";
  const auto l = store.list(q);
  ASSERT_EQ(l.size(), 2u);
  EXPECT_EQ(l[0].start_s, 0);
  q.sort = "-start_s";
  EXPECT_EQ(store.list(q)[0].start_s, 600);
  q.from_s = 1000;
  q.to_s = 5000;
  EXPECT_EQ(store.list(q).size(), 1u);
}

TEST_F(StoreTest, ValidationErrorsNameFields) {
  AnnotationStore store(dir_, types_);
  auto expect_fields = [&](const json& payload, std::vector<std::string> want) {
    try {
      store.create("s1", payload);
      ADD_FAILURE() << payload.dump();
    } catch (const ValidationError& e) {
      EXPECT_EQ(e.code(), ErrorCode::kSchema);
      EXPECT_EQ(fields_of(e.fields()), want) << payload.dump();
    }
  };
  expect_fields(review(1200, 600), {"end_s"});
  auto p = review(0, 60);
  p["metadata"]["verdict"] = "maybe";
  expect_fields(p, {"metadata.verdict"});
  p = review(0, 60);
  p["metadata"]["confidence"] = 9;
  expect_fields(p, {"metadata.confidence"});
  p = review(0, 60);
  p["type"] = "unknown_type";
  expect_fields(p, {"type"});
  p = review(0, 60);
  p.erase("start_s");
  expect_fields(p, {"start_s"});
  p = review(0, 60);
  p["bogus"] = 1;
  expect_fields(p, {"bogus"});
  json art = {{"type", "artifact"}, {"start_s", 0}, {"end_s", 10}, {"metadata", {{"channels", {"spo2", ""}}}}};
  expect_fields(art, {"metadata.channels[1]"});
}

TEST_F(StoreTest, OptimisticConcurrency) {
  AnnotationStore store(dir_, types_);
  const auto a = store.create("s1", review(0, 600));
  const auto b = store.update(a.annotation_id, {{"version", 1}, {"label", "edited"}});
  EXPECT_EQ(b.version, 2);
  EXPECT_EQ(b.label, "edited");
  EXPECT_EQ(b.start_s, 0);
  EXPECT_EQ(b.created_at, a.created_at);
  try {
    store.update(a.annotation_id, {{"version", 1}, {"label", "stale"}});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kConflict);
  }
  EXPECT_THROW(store.update(a.annotation_id, {{"label", "no version"}}), ValidationError);
  EXPECT_THROW(store.remove(a.annotation_id, 1), Error);
  store.remove(a.annotation_id, 2);
  EXPECT_FALSE(store.get(a.annotation_id).has_value());
  try {
    store.remove(a.annotation_id);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNotFound);
  }
}

TEST_F(StoreTest, PersistsAcrossReopen) {
  std::string id;
  {
    AnnotationStore store(dir_, types_);
    id = store.create("s9", review(300, 900)).annotation_id;
    store.create("s3", {{"type", "note"}, {"start_s", 5}, {"end_s", 5}, {"metadata", {{"author", "kim"}, {"x", 1}}}});
    store.update(id, {{"version", 1}, {"metadata", {{"verdict", "false_alarm"}}}});
  }
  AnnotationStore reopened(dir_, types_);
  const auto a = reopened.get(id);
  ASSERT_TRUE(a.has_value());
  EXPECT_EQ(a->version, 2);
  EXPECT_EQ(a->metadata, (json{{"verdict", "false_alarm"}}));
  const auto all = reopened.export_all();
  ASSERT_EQ(all.size(), 2u);
  EXPECT_EQ(all[0].stay_id, "s3");
  EXPECT_EQ(all[1].stay_id, "s9");
  // A new annotation after reopening never reuses an id.
  EXPECT_NE(reopened.create("s9", review(0, 1)).annotation_id, id);
}

TEST_F(StoreTest, ConcurrentWritersKeepEverything) {
  AnnotationStore store(dir_, types_);
  std::vector<std::thread> threads;
  for (int t = 0; t < 4; ++t) {
    threads.emplace_back([&, t] {
      for (int i = 0; i < 25; ++i) store.create("s" + std::to_string(t % 2), review(i * 60, i * 60 + 30));
    });
  }
  for (auto& th : threads) th.join();
  EXPECT_EQ(store.export_all().size(), 100u);
  AnnotationStore reopened(dir_, types_);
  EXPECT_EQ(reopened.export_all().size(), 100u);
}
