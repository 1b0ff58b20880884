#include "ews/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "ews/abga.hpp"
#include "ews/alarm_eval.hpp"
#include "ews/cohort.hpp"
#include "ews/error.hpp"
#include "ews/features.hpp"
#include "ews/fio2_pf.hpp"
#include "ews/gbdt.hpp"
#include "ews/labeler.hpp"
#include "ews/pao2.hpp"
#include "ews/synthetic.hpp"
#include "ews/util.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace ews::pipeline {

std::string_view stage_name(Stage s) {
  switch (s) {
    case Stage::kSynth: return "synth";
    case Stage::kTrainPao2: return "train-pao2";
    case Stage::kLabel: return "label";
    case Stage::kFeaturize: return "featurize";
    case Stage::kTrainEws: return "train-ews";
    case Stage::kEvaluate: return "evaluate";
  }
  return "synth";
}

const std::vector<Stage>& all_stages() {
  static const std::vector<Stage> s = {Stage::kSynth,     Stage::kTrainPao2, Stage::kLabel,
                                       Stage::kFeaturize, Stage::kTrainEws,  Stage::kEvaluate};
  return s;
}

std::optional<Stage> stage_from_name(std::string_view name) {
  for (auto s : all_stages()) {
    if (stage_name(s) == name) return s;
  }
  return std::nullopt;
}

json default_config() {
  label::LabelerConfig lc;
  json s_thresholds = json::array();
  for (int v = 80; v <= 101; ++v) s_thresholds.push_back(v);
  return json{
      {"seed", 1},
      {"jobs", 1},
      {"grid_step_s", 300},
      {"scenario", synth::ScenarioConfig{}.to_json()},
      {"fio2_table", ""},
      {"pao2",
       {{"estimator", "pnl"},
        {"freshness_s", 1800},
        {"n_samples", 20000},
        {"max_epochs", 40},
        {"patience", 8},
        {"loss", "mae"},
        {"search", {{"dropout_rates", {0.0, 0.25, 0.5}}}},
        {"search_folds", 3},
        {"search_max_epochs", 15}}},
      {"labeler",
       {{"pf_threshold", lc.pf_threshold},
        {"peep_threshold", lc.peep_threshold},
        {"window_s", lc.window_s},
        {"quorum", {lc.quorum_num, lc.quorum_den}},
        {"label_truncated_windows", lc.label_truncated_windows},
        {"merge_gap_s", lc.merge_gap_s},
        {"min_duration_s", lc.min_duration_s},
        {"horizon_s", lc.horizon_s}}},
      {"features", {{"variables", ""}, {"train_row_stride", 6}}},
      {"splits", {{"n_splits", 5}, {"train_frac", 0.6}, {"valid_frac", 0.2}}},
      {"gbdt", gbdt::GbdtParams{}.to_json()},
      {"baselines", {{"c_max_leaves", 32}, {"c_min_child_samples", 20}, {"s_thresholds", s_thresholds}}},
      {"evaluation",
       {{"silence_s", 1800},
        {"horizon_s", 28800},
        {"max_thresholds", 200},
        {"target_recall", 0.8},
        {"recall_levels", 101},
        {"plots", true},
        {"permutation_rows", 0}}},
      {"service", {{"host", "127.0.0.1"}, {"port", 8080}, {"epoch", "2020-01-01T00:00:00Z"}}},
  };
}

namespace {

void merge_into(json& base, const json& patch, const std::string& where) {
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    if (!base.contains(it.key())) {
      fail(ErrorCode::kConfig, "unknown config key '" + where + it.key() + "'");
    }
    if (base[it.key()].is_object() && it->is_object()) {
      merge_into(base[it.key()], *it, where + it.key() + ".");
    } else {
      base[it.key()] = *it;
    }
  }
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot read " + p.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_atomic(const fs::path& p, const std::string& text) {
  fs::create_directories(p.parent_path());
  fs::path tmp = p;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::kIo, "cannot write " + tmp.string());
    out << text;
    out.flush();
    if (!out) fail(ErrorCode::kIo, "write failed: " + tmp.string());
  }
  fs::rename(tmp, p);
}

json read_json(const fs::path& p) {
  try {
    return json::parse(read_text(p));
  } catch (const json::parse_error& e) {
    fail(ErrorCode::kParse, p.string() + ": " + e.what());
  }
}

std::string hash_json(const json& j) { return hex64(fnv1a64(j.dump())); }

}  // namespace

PipelineConfig::PipelineConfig() : doc_(default_config()), base_dir_(fs::current_path()) {}

PipelineConfig PipelineConfig::from_json(const json& doc, fs::path base_dir) {
  PipelineConfig c;
  if (!doc.is_object()) fail(ErrorCode::kConfig, "pipeline config must be a JSON object");
  merge_into(c.doc_, doc, "");
  c.base_dir_ = std::move(base_dir);
  c.validate();
  return c;
}

PipelineConfig PipelineConfig::load(const fs::path& path) {
  if (!fs::exists(path)) fail(ErrorCode::kConfig, "config file not found: " + path.string());
  return from_json(read_json(path), fs::absolute(path).parent_path());
}

void PipelineConfig::set_override(const std::string& key_path, const std::string& json_value) {
  json value;
  try {
    value = json::parse(json_value);
  } catch (const json::parse_error&) {
    value = json_value;  // bare strings
  }
  auto keys = split(key_path, '.');
  const json previous = doc_;
  json* node = &doc_;
  for (std::size_t i = 0; i < keys.size(); ++i) {
    if (keys[i].empty()) fail(ErrorCode::kConfig, "bad override key '" + key_path + "'");
    if (!node->is_object() || !node->contains(keys[i])) {
      fail(ErrorCode::kConfig, "unknown config key '" + key_path + "'");
    }
    node = &(*node)[keys[i]];
  }
  *node = value;
  try {
    validate();
  } catch (...) {
    doc_ = previous;
    throw;
  }
}

json PipelineConfig::section(const std::string& name) const {
  if (!doc_.contains(name)) fail(ErrorCode::kConfig, "missing config section '" + name + "'");
  return doc_.at(name);
}

std::uint64_t PipelineConfig::seed() const { return doc_.at("seed").get<std::uint64_t>(); }
int PipelineConfig::jobs() const { return std::max(1, doc_.at("jobs").get<int>()); }
std::int64_t PipelineConfig::grid_step_s() const { return doc_.at("grid_step_s").get<std::int64_t>(); }

fs::path PipelineConfig::resolve(const std::string& path) const {
  fs::path p(path);
  if (p.is_absolute()) return p;
  fs::path local = base_dir_ / p;
  if (fs::exists(local)) return local;
  fs::path data = fs::path(EWS_DATA_DIR) / p;
  if (fs::exists(data)) return data;
  return local;
}

void PipelineConfig::validate() const {
  try {
    if (!doc_.at("seed").is_number_unsigned() && !(doc_.at("seed").is_number_integer() && doc_.at("seed").get<long long>() >= 0)) {
      fail(ErrorCode::kConfig, "seed must be a non-negative integer");
    }
    if (grid_step_s() <= 0) fail(ErrorCode::kConfig, "grid_step_s must be positive");
    synth::ScenarioConfig::from_json(section("scenario"));
    gbdt::GbdtParams::from_json(section("gbdt"));
    oxygen::estimator_from_name(section("pao2").at("estimator").get<std::string>());
    const auto lab = section("labeler");
    for (const char* k : {"window_s", "merge_gap_s", "horizon_s"}) {
      if (lab.at(k).get<std::int64_t>() <= 0) fail(ErrorCode::kConfig, std::string("labeler.") + k + " must be positive");
    }
    const auto q = lab.at("quorum");
    if (q.size() != 2 || q[0].get<int>() <= 0 || q[1].get<int>() < q[0].get<int>()) {
      fail(ErrorCode::kConfig, "labeler.quorum must be [num, den] with 0 < num <= den");
    }
    const auto ev = section("evaluation");
    if (ev.at("silence_s").get<std::int64_t>() < 0 || ev.at("horizon_s").get<std::int64_t>() <= 0) {
      fail(ErrorCode::kConfig, "evaluation.silence_s / horizon_s must be positive");
    }
    const auto sp = section("splits");
    const double tf = sp.at("train_frac").get<double>(), vf = sp.at("valid_frac").get<double>();
    if (sp.at("n_splits").get<int>() < 1 || !(tf > 0 && vf > 0 && tf + vf < 1)) {
      fail(ErrorCode::kConfig, "splits: need n_splits >= 1 and positive fractions summing below 1");
    }
    if (section("features").at("train_row_stride").get<int>() < 1) {
      fail(ErrorCode::kConfig, "features.train_row_stride must be >= 1");
    }
    for (const char* k : {"fio2_table"}) {
      const auto p = doc_.at(k).get<std::string>();
      if (!p.empty() && !fs::exists(resolve(p))) fail(ErrorCode::kConfig, std::string(k) + " file not found: " + p);
    }
    const auto vp = section("features").at("variables").get<std::string>();
    if (!vp.empty() && !fs::exists(resolve(vp))) fail(ErrorCode::kConfig, "features.variables file not found: " + vp);
  } catch (const json::exception& e) {
    fail(ErrorCode::kConfig, std::string("pipeline config: ") + e.what());
  }
}

namespace {

label::LabelerConfig labeler_config(const json& j) {
  label::LabelerConfig c;
  c.pf_threshold = j.at("pf_threshold").get<double>();
  c.peep_threshold = j.at("peep_threshold").get<double>();
  c.window_s = j.at("window_s").get<std::int64_t>();
  c.quorum_num = j.at("quorum").at(0).get<int>();
  c.quorum_den = j.at("quorum").at(1).get<int>();
  c.label_truncated_windows = j.at("label_truncated_windows").get<bool>();
  c.merge_gap_s = j.at("merge_gap_s").get<std::int64_t>();
  c.min_duration_s = j.at("min_duration_s").get<std::int64_t>();
  c.horizon_s = j.at("horizon_s").get<std::int64_t>();
  return c;
}

oxygen::Fio2Table fio2_table(const PipelineConfig& c) {
  const auto p = c.doc().at("fio2_table").get<std::string>();
  return p.empty() ? oxygen::Fio2Table::builtin() : oxygen::Fio2Table::load(c.resolve(p));
}

json fio2_table_json(const oxygen::Fio2Table& t) {
  json rows = json::array();
  for (const auto& r : t.rows()) rows.push_back({r.liters, r.fio2});
  return json{{"rows", rows}, {"overflow", t.overflow_fio2()}};
}

feat::FeatureConfig feature_config(const PipelineConfig& c) {
  const auto p = c.section("features").at("variables").get<std::string>();
  return p.empty() ? feat::FeatureConfig::defaults() : feat::FeatureConfig::load(c.resolve(p));
}

std::uint64_t stage_seed(const PipelineConfig& c, Stage s) { return derive_seed(c.seed(), stage_name(s)); }

struct LoadedStay {
  GriddedStay stay;
  std::vector<label::Label> labels;
  std::vector<label::FailureEvent> events;
};

Cohort load_cohort_checked(const fs::path& dir, std::int64_t step) {
  if (!fs::is_directory(dir)) fail(ErrorCode::kMissingArtifact, "missing artifact: cohort directory " + dir.string());
  auto r = load_cohort(dir, step);
  if (!r.errors.empty()) {
    const auto& e = r.errors.front();
    fail(ErrorCode::kParse, "cohort " + e.file + ":" + std::to_string(e.line) + ": " + e.message + " (" +
                                std::to_string(r.errors.size()) + " errors)");
  }
  return std::move(r.cohort);
}

std::vector<LoadedStay> load_labeled(const fs::path& run, const PipelineConfig& c) {
  Cohort cohort = load_cohort_checked(run / layout::kCohort, c.grid_step_s());
  const auto table = fio2_table(c);
  std::vector<LoadedStay> out(cohort.stays.size());
  parallel_for(out.size(), c.jobs(), [&](std::size_t i) {
    auto& s = out[i];
    s.stay = std::move(cohort.stays[i]);
    oxygen::add_fio2_channel(s.stay, table);
    const fs::path lp = run / layout::kLabels / (s.stay.stay_id + ".labels.csv");
    const fs::path ep = run / layout::kLabels / (s.stay.stay_id + ".events.json");
    if (!fs::exists(lp) || !fs::exists(ep)) {
      fail(ErrorCode::kMissingArtifact, "missing artifact: labels for stay " + s.stay.stay_id + " (" + lp.string() + ")");
    }
    s.labels = label::labels_from_csv(read_text(lp));
    s.events = label::events_from_json(read_text(ep));
    if (s.labels.size() != s.stay.grid_size()) {
      fail(ErrorCode::kStaleArtifact, "labels for stay " + s.stay.stay_id + " do not match its grid; re-run `label`");
    }
  });
  return out;
}

std::vector<CohortSplit> splits_from_json(const json& j) {
  std::vector<CohortSplit> out;
  for (const auto& s : j.at("splits")) {
    CohortSplit c;
    c.split_id = s.at("split_id").get<int>();
    c.train = s.at("train").get<std::vector<std::string>>();
    c.validation = s.at("validation").get<std::vector<std::string>>();
    c.test = s.at("test").get<std::vector<std::string>>();
    out.push_back(std::move(c));
  }
  return out;
}

json splits_to_json(const std::vector<CohortSplit>& splits) {
  json arr = json::array();
  for (const auto& s : splits) {
    arr.push_back({{"split_id", s.split_id}, {"train", s.train}, {"validation", s.validation}, {"test", s.test}});
  }
  return json{{"splits", arr}};
}

feat::FeatureMatrix rows_for(const feat::FeatureMatrix& m, const std::vector<std::string>& stays) {
  std::set<std::string> keep(stays.begin(), stays.end());
  feat::FeatureMatrix out;
  out.columns = m.columns;
  for (std::size_t r = 0; r < m.rows(); ++r) {
    if (!keep.count(m.stay_ids[r])) continue;
    auto row = m.row(r);
    out.values.insert(out.values.end(), row.begin(), row.end());
    out.labels.push_back(m.labels[r]);
    out.stay_ids.push_back(m.stay_ids[r]);
    out.times_s.push_back(m.times_s[r]);
  }
  return out;
}

fs::path split_dir(const fs::path& run, int k) { return run / layout::kModels / ("split_" + std::to_string(k)); }

}  // namespace

Pipeline::Pipeline(PipelineConfig config, fs::path run_dir) : config_(std::move(config)), run_dir_(std::move(run_dir)) {
  fs::create_directories(run_dir_);
}

std::vector<Stage> Pipeline::upstream(Stage s) const {
  switch (s) {
    case Stage::kSynth:
    case Stage::kTrainPao2: return {};
    case Stage::kLabel: {
      const auto est = config_.section("pao2").at("estimator").get<std::string>();
      if (est == "pnl") return {Stage::kSynth};
      return {Stage::kSynth, Stage::kTrainPao2};
    }
    case Stage::kFeaturize: return {Stage::kLabel};
    case Stage::kTrainEws: return {Stage::kFeaturize};
    case Stage::kEvaluate: return {Stage::kTrainEws};
  }
  return {};
}

std::string Pipeline::expected_hash(Stage s) const {
  json own;
  const auto& c = config_;
  switch (s) {
    case Stage::kSynth:
      own = {{"scenario", c.section("scenario")}, {"seed", stage_seed(c, s)}, {"grid_step_s", c.grid_step_s()}};
      break;
    case Stage::kTrainPao2: {
      json p = c.section("pao2");
      p.erase("estimator");
      p.erase("freshness_s");
      own = {{"pao2", p}, {"seed", stage_seed(c, s)}};
      break;
    }
    case Stage::kLabel:
      own = {{"labeler", c.section("labeler")},
             {"estimator", c.section("pao2").at("estimator")},
             {"freshness_s", c.section("pao2").at("freshness_s")},
             {"fio2_table", fio2_table_json(fio2_table(c))}};
      break;
    case Stage::kFeaturize:
      own = {{"features", feature_config(c).to_json()},
             {"train_row_stride", c.section("features").at("train_row_stride")},
             {"splits", c.section("splits")},
             {"seed", stage_seed(c, s)}};
      break;
    case Stage::kTrainEws:
      own = {{"gbdt", c.section("gbdt")}, {"baselines", c.section("baselines")}, {"seed", stage_seed(c, s)}};
      break;
    case Stage::kEvaluate:
      own = {{"evaluation", c.section("evaluation")}, {"seed", stage_seed(c, s)}};
      break;
  }
  json up = json::array();
  for (auto u : upstream(s)) up.push_back(expected_hash(u));
  return hash_json(json{{"stage", stage_name(s)}, {"config", own}, {"upstream", up}});
}

json Pipeline::manifest() const {
  const fs::path p = run_dir_ / layout::kManifest;
  if (!fs::exists(p)) return json{{"format", "ews-run"}, {"version", 1}, {"stages", json::object()}};
  return read_json(p);
}

void Pipeline::check_upstream(Stage s) const {
  const json m = manifest();
  for (auto u : upstream(s)) {
    const std::string name(stage_name(u));
    if (!m["stages"].contains(name) || !m["stages"][name].value("complete", false)) {
      fail(ErrorCode::kMissingArtifact,
           "missing artifact: output of stage '" + name + "' in " + run_dir_.string() + "; run `" + name + "` first");
    }
    if (m["stages"][name].value("config_hash", "") != expected_hash(u)) {
      fail(ErrorCode::kStaleArtifact, "stale artifact: stage '" + name +
                                          "' was produced under a different configuration; re-run `" + name + "`");
    }
  }
}

void Pipeline::mark(Stage s, const std::string& hash, bool complete, const StageResult* result) {
  json m = manifest();
  json entry{{"config_hash", hash}, {"complete", complete}};
  json up = json::object();
  for (auto u : upstream(s)) up[std::string(stage_name(u))] = expected_hash(u);
  entry["upstream"] = up;
  if (result) {
    entry["outputs"] = result->outputs;
    entry["summary"] = result->summary;
  }
  m["stages"][std::string(stage_name(s))] = entry;
  write_atomic(run_dir_ / layout::kManifest, m.dump(2) + "\n");
}

StageResult Pipeline::run(Stage s) {
  check_upstream(s);
  const std::string hash = expected_hash(s);
  mark(s, hash, false, nullptr);
  StageResult r;
  switch (s) {
    case Stage::kSynth: r = synth(); break;
    case Stage::kTrainPao2: r = train_pao2(); break;
    case Stage::kLabel: r = label(); break;
    case Stage::kFeaturize: r = featurize(); break;
    case Stage::kTrainEws: r = train_ews(); break;
    case Stage::kEvaluate: r = evaluate(); break;
  }
  r.stage = s;
  r.config_hash = hash;
  mark(s, hash, true, &r);
  return r;
}

std::vector<StageResult> Pipeline::run_all() {
  std::vector<StageResult> out;
  const bool need_pao2 = config_.section("pao2").at("estimator").get<std::string>() != "pnl";
  for (auto s : all_stages()) {
    if (s == Stage::kTrainPao2 && !need_pao2) continue;
    out.push_back(run(s));
  }
  return out;
}

StageResult Pipeline::synth() {
  const auto cfg = synth::ScenarioConfig::from_json(config_.section("scenario"));
  auto sc = cfg;
  sc.grid_step_s = config_.grid_step_s();
  Cohort cohort = synth::generate_cohort(sc, stage_seed(config_, Stage::kSynth), config_.jobs());
  const fs::path dir = run_dir_ / layout::kCohort;
  fs::remove_all(dir);
  write_cohort(cohort, dir);
  std::size_t failing = 0, episodes = 0;
  for (const auto& s : cohort.stays) {
    failing += s.planted.empty() ? 0 : 1;
    episodes += s.planted.size();
  }
  StageResult r;
  r.outputs = {layout::kCohort};
  r.summary = {{"stays", cohort.stays.size()}, {"stays_with_planted_failure", failing}, {"planted_episodes", episodes}};
  return r;
}

StageResult Pipeline::train_pao2() {
  using namespace oxygen;
  const auto pc = config_.section("pao2");
  const std::uint64_t seed = stage_seed(config_, Stage::kTrainPao2);
  const auto n = pc.at("n_samples").get<std::size_t>();
  auto raw = generate_abga_dataset(derive_seed(seed, "data"), n);
  AbgaFilterReport filter_report;
  auto data = filter_abga_dataset(raw, {}, &filter_report);
  // Group-wise 60/15/25 train/validation/test partition.
  auto folds = assign_folds(data, 20, derive_seed(seed, "partition"));
  std::vector<Pao2Example> train, valid, test;
  for (std::size_t i = 0; i < data.size(); ++i) {
    (folds[i] < 5 ? test : folds[i] < 8 ? valid : train).push_back(data[i]);
  }
  const auto loss_name = pc.at("loss").get<std::string>();
  if (loss_name != "mae" && loss_name != "mse") fail(ErrorCode::kConfig, "pao2.loss must be 'mae' or 'mse'");
  const nn::LossKind loss = loss_name == "mae" ? nn::LossKind::kAbsolute : nn::LossKind::kSquared;

  const fs::path dir = run_dir_ / layout::kPao2;
  fs::create_directories(dir);
  json summary{{"samples", data.size()},
               {"removed_pao2_range", filter_report.removed_pao2_range},
               {"removed_abga_age", filter_report.removed_abga_age},
               {"train", train.size()},
               {"validation", valid.size()},
               {"test", test.size()}};
  std::vector<Pao2Model> models;
  for (auto kind : {EstimatorKind::kSpo2Nn, EstimatorKind::kFullNn}) {
    auto tc = default_train_config(kind);
    tc.loss = loss;
    tc.max_epochs = pc.at("max_epochs").get<int>();
    tc.patience = pc.at("patience").get<int>();
    const std::string name(estimator_name(kind));
    auto space = oxygen::pinned_space(tc.hp);
    const json& sj = pc.at("search");
    for (auto it = sj.begin(); it != sj.end(); ++it) {
      const auto& k = it.key();
      if (k == "batch_sizes") space.batch_sizes = it->get<std::vector<int>>();
      else if (k == "hidden_layers") space.hidden_layers = it->get<std::vector<std::vector<int>>>();
      else if (k == "learning_rates") space.learning_rates = it->get<std::vector<double>>();
      else if (k == "dropout_rates") space.dropout_rates = it->get<std::vector<double>>();
      else if (k == "gammas") {
        space.gammas.clear();
        for (const auto& g : *it) space.gammas.push_back(g.is_null() ? std::nullopt : std::optional<double>(g.get<double>()));
      } else {
        fail(ErrorCode::kConfig, "unknown pao2.search dimension '" + k + "'");
      }
    }
    const auto points = space.points();
    if (points.size() > 1) {
      CvConfig cv;
      cv.folds = pc.at("search_folds").get<int>();
      cv.max_epochs = pc.at("search_max_epochs").get<int>();
      cv.loss = loss;
      cv.seed = derive_seed(seed, "cv-" + name);
      cv.jobs = config_.jobs();
      auto gs = grid_search(train, tc.inputs, points, cv);
      tc.hp = gs.best;
      json tried = json::array();
      for (const auto& [hp, score] : gs.scores) tried.push_back({{"point", nn::describe(hp)}, {"cv_region_mae", score}});
      summary["search"][name] = {{"best", nn::describe(gs.best)}, {"cv_region_mae", gs.best_score}, {"points", tried}};
    }
    auto model = train_pao2_model(kind, train, valid, tc, derive_seed(seed, name));
    model.save(dir / (name + ".json"));
    models.push_back(std::move(model));
  }
  std::vector<NamedPredictor> preds = {pnl_predictor(), model_predictor("spo2nn", models[0]),
                                       model_predictor("fullnn", models[1])};
  auto report = evaluate_pao2_models(preds, test);
  write_atomic(dir / "report.csv", report.to_csv());
  json rj = json::array();
  for (const auto& e : report.estimators) {
    json b = json::array();
    for (std::size_t k = 0; k < report.buckets.size(); ++k) {
      b.push_back({{"range", report.buckets[k].label},
                   {"n", e.buckets[k].n},
                   {"median_abs_error", e.buckets[k].median_abs_error},
                   {"iqr", e.buckets[k].iqr_abs_error}});
    }
    rj.push_back({{"estimator", e.name}, {"auroc_pf_le_200", e.auroc}, {"buckets", b}});
  }
  write_atomic(dir / "report.json", json{{"estimators", rj}}.dump(2) + "\n");
  summary["overall_median_abs_error"] = {{"pnl", report.estimators[0].buckets[0].median_abs_error},
                                         {"spo2nn", report.estimators[1].buckets[0].median_abs_error},
                                         {"fullnn", report.estimators[2].buckets[0].median_abs_error}};
  StageResult r;
  r.outputs = {"pao2/spo2nn.json", "pao2/fullnn.json", "pao2/report.csv", "pao2/report.json"};
  r.summary = summary;
  return r;
}

StageResult Pipeline::label() {
  const auto lc = labeler_config(config_.section("labeler"));
  const auto pc = config_.section("pao2");
  const auto kind = oxygen::estimator_from_name(pc.at("estimator").get<std::string>());
  std::optional<oxygen::Pao2Model> model;
  if (kind != oxygen::EstimatorKind::kPnl) {
    const fs::path mp = run_dir_ / layout::kPao2 / (std::string(oxygen::estimator_name(kind)) + ".json");
    model = oxygen::Pao2Model::load(mp);
  }
  oxygen::Pao2TrackOptions opts;
  opts.estimator = kind;
  opts.model = model ? &*model : nullptr;
  opts.freshness_s = pc.at("freshness_s").get<std::int64_t>();
  const auto table = fio2_table(config_);
  Cohort cohort = load_cohort_checked(run_dir_ / layout::kCohort, config_.grid_step_s());
  const fs::path dir = run_dir_ / layout::kLabels;
  fs::remove_all(dir);
  fs::create_directories(dir);

  struct Counts {
    std::size_t events = 0, pos = 0, neg = 0, undef = 0, dq = 0, planted = 0, planted_found = 0;
  };
  std::vector<Counts> counts(cohort.stays.size());
  parallel_for(cohort.stays.size(), config_.jobs(), [&](std::size_t i) {
    auto& stay = cohort.stays[i];
    oxygen::add_fio2_channel(stay, table);
    const auto track = oxygen::pf_track(stay, opts, table);
    const auto res = label::label_track(track, stay.grid_step_s, lc);
    write_atomic(dir / (stay.stay_id + ".labels.csv"), label::labels_to_csv(res.labels, stay.grid_step_s));
    write_atomic(dir / (stay.stay_id + ".events.json"), label::events_to_json(res.events) + "\n");
    std::ostringstream pf;
    pf << "time_s,pao2_est,pao2_source,fio2_est,pf\n";
    for (std::size_t k = 0; k < track.size(); ++k) {
      const char* src = track.pao2_source[k] == oxygen::Pao2Source::kMeasured    ? "measured"
                        : track.pao2_source[k] == oxygen::Pao2Source::kEstimated ? "estimated"
                                                                                  : "";
      pf << stay.grid_time(k) << ',' << format_double(track.pao2_est[k]) << ',' << src << ','
         << format_double(track.fio2_est[k]) << ',' << format_double(track.pf[k]) << '\n';
    }
    write_atomic(dir / (stay.stay_id + ".pf.csv"), pf.str());
    auto& c = counts[i];
    c.events = res.events.size();
    c.dq = res.data_quality_points;
    for (auto l : res.labels) {
      (l == label::Label::kPositive ? c.pos : l == label::Label::kNegative ? c.neg : c.undef)++;
    }
    for (const auto& p : stay.planted) {
      ++c.planted;
      for (const auto& e : res.events) {
        if (e.start_s <= p.end_s && p.start_s <= e.end_s) {
          ++c.planted_found;
          break;
        }
      }
    }
  });
  Counts t;
  for (const auto& c : counts) {
    t.events += c.events;
    t.pos += c.pos;
    t.neg += c.neg;
    t.undef += c.undef;
    t.dq += c.dq;
    t.planted += c.planted;
    t.planted_found += c.planted_found;
  }
  StageResult r;
  r.outputs = {layout::kLabels};
  r.summary = {{"stays", cohort.stays.size()},
               {"events", t.events},
               {"positive_points", t.pos},
               {"negative_points", t.neg},
               {"undefined_points", t.undef},
               {"data_quality_points", t.dq},
               {"planted_episodes", t.planted},
               {"planted_episodes_detected", t.planted_found}};
  return r;
}

StageResult Pipeline::featurize() {
  const auto fc = feature_config(config_);
  const auto stride = config_.section("features").at("train_row_stride").get<std::size_t>();
  auto stays = load_labeled(run_dir_, config_);
  std::vector<feat::FeatureMatrix> parts(stays.size());
  parallel_for(stays.size(), config_.jobs(), [&](std::size_t i) {
    parts[i] = feat::build_matrix(stays[i].stay, stays[i].labels, fc, {stride, 0});
  });
  feat::FeatureMatrix m;
  m.columns = feat::column_names(fc);
  for (const auto& p : parts) m.append(p);
  std::vector<std::string> ids;
  for (const auto& s : stays) ids.push_back(s.stay.stay_id);
  const auto sp = config_.section("splits");
  auto splits = make_splits(ids, sp.at("n_splits").get<int>(), sp.at("train_frac").get<double>(),
                            sp.at("valid_frac").get<double>(), derive_seed(stage_seed(config_, Stage::kFeaturize), "splits"));
  const fs::path dir = run_dir_ / layout::kFeatures;
  fs::remove_all(dir);
  fs::create_directories(dir);
  m.write_csv(dir / "matrix.csv");
  write_atomic(dir / "schema.json", feat::schema_json(fc).dump(2) + "\n");
  write_atomic(dir / "variables.json", fc.to_json().dump(2) + "\n");
  write_atomic(dir / "splits.json", splits_to_json(splits).dump(1) + "\n");
  StageResult r;
  r.outputs = {"features/matrix.csv", "features/schema.json", "features/variables.json", "features/splits.json"};
  r.summary = {{"rows", m.rows()},
               {"columns", m.cols()},
               {"positive_rows", std::accumulate(m.labels.begin(), m.labels.end(), 0)},
               {"splits", splits.size()},
               {"schema_hash", fc.hash()}};
  return r;
}

StageResult Pipeline::train_ews() {
  const fs::path fdir = run_dir_ / layout::kFeatures;
  const auto m = feat::FeatureMatrix::read_csv(fdir / "matrix.csv");
  const auto schema = read_json(fdir / "schema.json");
  const auto splits = splits_from_json(read_json(fdir / "splits.json"));
  auto params = gbdt::GbdtParams::from_json(config_.section("gbdt"));
  params.jobs = config_.jobs();
  const auto bc = config_.section("baselines");
  const std::uint64_t seed = stage_seed(config_, Stage::kTrainEws);
  fs::remove_all(run_dir_ / layout::kModels);
  json per_split = json::array();
  StageResult r;
  for (const auto& sp : splits) {
    const auto train = rows_for(m, sp.train);
    const auto valid = rows_for(m, sp.validation);
    const auto model = gbdt::train_gbdt(train, &valid, params, derive_seed(seed, static_cast<std::uint64_t>(sp.split_id)),
                                        schema.at("config_hash").get<std::string>());
    const auto c = gbdt::train_baseline_c(train, bc.at("c_max_leaves").get<int>(), bc.at("c_min_child_samples").get<int>());
    const fs::path dir = split_dir(run_dir_, sp.split_id);
    fs::create_directories(dir);
    model.save(dir / "ews.json");
    c.save(dir / "baseline_c.json");
    json imp = json::array();
    auto gi = gbdt::gain_importance(model);
    for (std::size_t k = 0; k < gi.size() && k < 30; ++k) imp.push_back({{"feature", gi[k].feature}, {"gain", gi[k].score}});
    json importance{{"gain", imp}};
    const auto perm_rows = config_.section("evaluation").at("permutation_rows").get<std::size_t>();
    if (perm_rows > 0) {
      json pj = json::array();
      auto pi = gbdt::permutation_importance(model, valid, derive_seed(seed, "perm"), perm_rows, config_.jobs());
      for (std::size_t k = 0; k < pi.size() && k < 30; ++k) pj.push_back({{"feature", pi[k].feature}, {"delta_log_loss", pi[k].score}});
      importance["permutation"] = pj;
    }
    write_atomic(dir / "importance.json", importance.dump(2) + "\n");
    per_split.push_back({{"split_id", sp.split_id},
                         {"train_rows", train.rows()},
                         {"valid_rows", valid.rows()},
                         {"trees", model.trees.size()},
                         {"best_iteration", model.best_iteration},
                         {"best_valid_loss", model.valid_loss.empty() ? kMissing : model.valid_loss[static_cast<std::size_t>(model.best_iteration)]},
                         {"baseline_c_leaves", c.tree.num_leaves()}});
    r.outputs.push_back("models/split_" + std::to_string(sp.split_id) + "/ews.json");
    r.outputs.push_back("models/split_" + std::to_string(sp.split_id) + "/baseline_c.json");
  }
  r.summary = {{"splits", per_split}};
  return r;
}

namespace {

struct ModelScores {
  std::vector<alarm::StayScores> ews, c, random;
  std::vector<std::vector<double>> spo2;  // per stay, NaN at undefined points
};

alarm::StayScores empty_scores(const LoadedStay& s) {
  alarm::StayScores out;
  out.stay_id = s.stay.stay_id;
  out.times_s.resize(s.stay.grid_size());
  for (std::size_t i = 0; i < out.times_s.size(); ++i) out.times_s[i] = s.stay.grid_time(i);
  out.scores.assign(out.times_s.size(), kMissing);
  out.events = s.events;
  return out;
}

struct Operating {
  double threshold = kMissing;
  double recall = kMissing;
  double precision = kMissing;
};

// Highest threshold reaching the target recall (thresholds descending), or
// the most permissive one.
Operating operating_point(const std::vector<alarm::PrPoint>& curve, double target) {
  Operating o;
  for (const auto& p : curve) {
    o = {p.threshold, p.recall, p.precision};
    if (!is_missing(p.recall) && p.recall >= target) break;
  }
  return o;
}

json pr_json(const std::vector<alarm::PrPoint>& c) {
  json a = json::array();
  for (const auto& p : c) {
    a.push_back({{"threshold", p.threshold},
                 {"recall", p.recall},
                 {"precision", p.precision},
                 {"alarms", p.counts.alarms},
                 {"true_alarms", p.counts.true_alarms},
                 {"events", p.counts.events},
                 {"caught_events", p.counts.caught_events}});
  }
  return a;
}

}  // namespace

StageResult Pipeline::evaluate() {
  const auto splits = splits_from_json(read_json(run_dir_ / layout::kFeatures / "splits.json"));
  for (const auto& sp : splits) {
    for (const char* f : {"ews.json", "baseline_c.json"}) {
      const fs::path p = split_dir(run_dir_, sp.split_id) / f;
      if (!fs::exists(p)) fail(ErrorCode::kMissingArtifact, "missing artifact: trained model " + p.string() + "; run `train-ews` first");
    }
  }
  const auto ev = config_.section("evaluation");
  alarm::AlarmConfig ac;
  ac.silence_s = ev.at("silence_s").get<std::int64_t>();
  ac.horizon_s = ev.at("horizon_s").get<std::int64_t>();
  const auto max_thr = ev.at("max_thresholds").get<std::size_t>();
  const double target = ev.at("target_recall").get<double>();
  const auto levels = ev.at("recall_levels").get<std::size_t>();
  const auto s_thresholds = config_.section("baselines").at("s_thresholds").get<std::vector<double>>();
  const std::uint64_t seed = stage_seed(config_, Stage::kEvaluate);
  const auto fc = feat::FeatureConfig::from_json(read_json(run_dir_ / layout::kFeatures / "variables.json"));
  const auto stays = load_labeled(run_dir_, config_);
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < stays.size(); ++i) index[stays[i].stay.stay_id] = i;
  const int jobs = config_.jobs();

  const std::vector<std::string> names = {"ews", "baseline_c", "baseline_s", "random"};
  std::map<std::string, std::vector<std::vector<alarm::PrPoint>>> curves;
  std::map<std::string, alarm::TimingStats> timing;
  std::map<std::string, std::vector<double>> roc_auc;
  std::map<std::string, std::vector<Operating>> operating;
  std::vector<double> prevalence;
  std::vector<std::vector<double>> predictions(stays.size());
  std::vector<int> prediction_split(stays.size(), -1);

  auto score_stays = [&](const gbdt::Ensemble& ews, const gbdt::SingleTreeModel& c, const std::vector<std::size_t>& ids,
                         std::uint64_t random_seed) {
    ModelScores ms;
    ms.ews.resize(ids.size());
    ms.c.resize(ids.size());
    ms.random.resize(ids.size());
    ms.spo2.resize(ids.size());
    parallel_for(ids.size(), jobs, [&](std::size_t k) {
      const auto& s = stays[ids[k]];
      ms.ews[k] = ms.c[k] = ms.random[k] = empty_scores(s);
      ms.spo2[k].assign(s.stay.grid_size(), kMissing);
      const auto m = feat::build_matrix(s.stay, s.labels, fc);
      const auto pe = ews.predict(m);
      const auto pc = c.predict(m);
      const auto spo2_col = m.column_index(gbdt::kBaselineSpo2Column);
      std::mt19937_64 rng(derive_seed(random_seed, s.stay.stay_id));
      std::uniform_real_distribution<double> u(0.0, 1.0);
      for (std::size_t r = 0; r < m.rows(); ++r) {
        const auto gi = static_cast<std::size_t>(m.times_s[r] / s.stay.grid_step_s);
        ms.ews[k].scores[gi] = pe[r];
        ms.c[k].scores[gi] = pc[r];
        ms.random[k].scores[gi] = u(rng);
        ms.spo2[k][gi] = m.at(r, spo2_col);
      }
    });
    return ms;
  };

  for (const auto& sp : splits) {
    const auto ews = gbdt::Ensemble::load(split_dir(run_dir_, sp.split_id) / "ews.json");
    const auto c = gbdt::SingleTreeModel::load(split_dir(run_dir_, sp.split_id) / "baseline_c.json");
    std::vector<std::size_t> ids;
    for (const auto& id : sp.test) {
      auto it = index.find(id);
      if (it == index.end()) fail(ErrorCode::kStaleArtifact, "split lists unknown stay " + id + "; re-run `featurize`");
      ids.push_back(it->second);
    }
    const auto ms = score_stays(ews, c, ids, derive_seed(seed, static_cast<std::uint64_t>(sp.split_id)));
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (prediction_split[ids[k]] < 0) {
        prediction_split[ids[k]] = sp.split_id;
        predictions[ids[k]] = ms.ews[k].scores;
      }
    }
    std::map<std::string, const std::vector<alarm::StayScores>*> scored = {
        {"ews", &ms.ews}, {"baseline_c", &ms.c}, {"random", &ms.random}};
    std::map<std::string, std::vector<alarm::StayScores>> s_scores;  // keyed by threshold, built lazily
    for (const auto& [name, sc] : scored) {
      const auto thr = alarm::threshold_grid(*sc, max_thr);
      curves[name].push_back(alarm::pr_curve(*sc, thr, ac, jobs));
    }
    {
      std::vector<double> desc = s_thresholds;
      std::sort(desc.begin(), desc.end());  // low SpO2 cut first = fewest alarms
      std::vector<alarm::PrPoint> curve(desc.size());
      parallel_for(desc.size(), jobs, [&](std::size_t t) {
        std::vector<alarm::StayScores> sc = ms.ews;
        for (std::size_t k = 0; k < sc.size(); ++k) {
          for (std::size_t i = 0; i < sc[k].scores.size(); ++i) {
            if (is_missing(sc[k].scores[i])) continue;
            sc[k].scores[i] = gbdt::baseline_s(ms.spo2[k][i], desc[t]);
          }
        }
        curve[t] = alarm::pr_point(sc, 1.0, ac);
        curve[t].threshold = desc[t];
      });
      curves["baseline_s"].push_back(curve);
    }
    // Operating points, timing and time-point ROC.
    std::size_t pos = 0, defined = 0;
    for (auto i : ids) {
      for (auto l : stays[i].labels) {
        if (l == label::Label::kUndefined) continue;
        ++defined;
        pos += l == label::Label::kPositive ? 1 : 0;
      }
    }
    prevalence.push_back(defined == 0 ? kMissing : static_cast<double>(pos) / static_cast<double>(defined));
    for (const auto& name : names) {
      const auto op = operating_point(curves[name].back(), target);
      operating[name].push_back(op);
      std::vector<double> roc_scores;
      std::vector<int> roc_labels;
      for (std::size_t k = 0; k < ids.size(); ++k) {
        const auto& lab = stays[ids[k]].labels;
        std::vector<double> sc;
        if (name == "baseline_s") {
          sc.assign(lab.size(), kMissing);
          for (std::size_t i = 0; i < lab.size(); ++i) {
            if (lab[i] == label::Label::kUndefined) continue;
            sc[i] = is_missing(ms.spo2[k][i]) ? 0.0 : gbdt::baseline_s(ms.spo2[k][i], op.threshold);
          }
        } else {
          sc = (name == "ews" ? ms.ews : name == "baseline_c" ? ms.c : ms.random)[k].scores;
        }
        const auto alarms = alarm::silence(ms.ews[k].times_s, sc, name == "baseline_s" ? 1.0 : op.threshold, ac.silence_s);
        alarm::merge_timing(timing[name], alarm::alarm_timing(alarms, stays[ids[k]].events, ac.horizon_s));
        for (std::size_t i = 0; i < lab.size(); ++i) {
          if (lab[i] == label::Label::kUndefined) continue;
          double v;
          if (name == "baseline_s") v = is_missing(ms.spo2[k][i]) ? -1000.0 : -ms.spo2[k][i];
          else v = (name == "ews" ? ms.ews : name == "baseline_c" ? ms.c : ms.random)[k].scores[i];
          roc_scores.push_back(v);
          roc_labels.push_back(lab[i] == label::Label::kPositive ? 1 : 0);
        }
      }
      double auc = kMissing;
      const bool both = std::count(roc_labels.begin(), roc_labels.end(), 1) > 0 &&
                        std::count(roc_labels.begin(), roc_labels.end(), 0) > 0;
      if (both) auc = alarm::timepoint_roc(roc_scores, roc_labels).auroc;
      roc_auc[name].push_back(auc);
    }
  }

  // Stays never in a test set are scored in-sample with the first split's model.
  {
    std::vector<std::size_t> rest;
    for (std::size_t i = 0; i < stays.size(); ++i) {
      if (prediction_split[i] < 0) rest.push_back(i);
    }
    if (!rest.empty() && !splits.empty()) {
      const auto ews = gbdt::Ensemble::load(split_dir(run_dir_, splits[0].split_id) / "ews.json");
      const auto c = gbdt::SingleTreeModel::load(split_dir(run_dir_, splits[0].split_id) / "baseline_c.json");
      const auto ms = score_stays(ews, c, rest, seed);
      for (std::size_t k = 0; k < rest.size(); ++k) predictions[rest[k]] = ms.ews[k].scores;
    }
  }
  const fs::path pdir = run_dir_ / layout::kPredictions;
  fs::remove_all(pdir);
  fs::create_directories(pdir);
  for (std::size_t i = 0; i < stays.size(); ++i) {
    std::ostringstream os;
    os << "time_s,score\n";
    for (std::size_t k = 0; k < predictions[i].size(); ++k) {
      os << stays[i].stay.grid_time(k) << ',' << format_double(predictions[i][k]) << '\n';
    }
    write_atomic(pdir / (stays[i].stay.stay_id + ".csv"), os.str());
  }

  // Reports.
  const fs::path edir = run_dir_ / layout::kEval;
  fs::remove_all(edir);
  fs::create_directories(edir);
  json models = json::object();
  std::map<std::string, alarm::AggregatedPr> agg;
  for (const auto& name : names) {
    agg[name] = alarm::aggregate_pr(curves[name], levels);
    auto& t = timing[name];
    alarm::finalize_timing(t);
    json ops = json::array();
    for (const auto& o : operating[name]) ops.push_back({{"threshold", o.threshold}, {"recall", o.recall}, {"precision", o.precision}});
    json per_split = json::array();
    for (const auto& c : curves[name]) per_split.push_back(pr_json(c));
    double roc_mean = 0;
    std::size_t roc_n = 0;
    for (double v : roc_auc[name]) {
      if (!is_missing(v)) {
        roc_mean += v;
        ++roc_n;
      }
    }
    models[name] = {{"auprc_mean", agg[name].auprc_mean},
                    {"auprc_std", agg[name].auprc_std},
                    {"auprc_per_split", agg[name].auprc_per_split},
                    {"timepoint_auroc_per_split", roc_auc[name]},
                    {"timepoint_auroc_mean", roc_n ? roc_mean / static_cast<double>(roc_n) : kMissing},
                    {"operating_points", ops},
                    {"timing",
                     {{"target_recall", target},
                      {"caught_events", t.lead_s.size()},
                      {"median_first_alarm_lead_h", is_missing(t.median_lead_s) ? kMissing : t.median_lead_s / 3600.0},
                      {"mean_alarms_per_caught_event", t.mean_alarms_per_caught_event}}},
                    {"pr_curves", per_split}};
  }
  double prev_mean = 0;
  for (double p : prevalence) prev_mean += p;
  prev_mean /= std::max<std::size_t>(prevalence.size(), 1);
  json report{{"format", "ews-evaluation"},
              {"version", 1},
              {"splits", splits.size()},
              {"prevalence", {{"per_split", prevalence}, {"mean", prev_mean}}},
              {"silence_s", ac.silence_s},
              {"horizon_s", ac.horizon_s},
              {"models", models}};
  // JSON has no NaN; nlohmann writes null for it.
  write_atomic(edir / "report.json", report.dump(2) + "\n");

  std::ostringstream pr;
  pr << "recall";
  for (const auto& n : names) pr << ',' << n << "_precision_mean," << n << "_precision_std";
  pr << '\n';
  const auto rl = alarm::recall_levels(levels);
  for (std::size_t i = 0; i < rl.size(); ++i) {
    pr << format_double(rl[i]);
    for (const auto& n : names) pr << ',' << format_double(agg[n].precision_mean[i]) << ',' << format_double(agg[n].precision_std[i]);
    pr << '\n';
  }
  write_atomic(edir / "pr_curve.csv", pr.str());
  std::ostringstream summary_csv;
  summary_csv << "model,auprc_mean,auprc_std,timepoint_auroc_mean,median_first_alarm_lead_h,mean_alarms_per_caught_event\n";
  for (const auto& n : names) {
    const auto& mj = models[n];
    auto val = [](const json& v) { return v.is_number() ? format_double(v.get<double>()) : std::string(); };
    summary_csv << n << ',' << val(mj["auprc_mean"]) << ',' << val(mj["auprc_std"]) << ',' << val(mj["timepoint_auroc_mean"])
                << ',' << val(mj["timing"]["median_first_alarm_lead_h"]) << ','
                << val(mj["timing"]["mean_alarms_per_caught_event"]) << '\n';
  }
  write_atomic(edir / "summary.csv", summary_csv.str());
  std::ostringstream leads;
  leads << "lead_h\n";
  for (double v : timing["ews"].lead_s) leads << format_double(v / 3600.0) << '\n';
  write_atomic(edir / "ews_alarm_leads.csv", leads.str());

  StageResult r;
  r.outputs = {"eval/report.json", "eval/pr_curve.csv", "eval/summary.csv", "eval/ews_alarm_leads.csv", "predictions"};
  if (ev.at("plots").get<bool>()) {
    std::vector<alarm::PlotSeries> series;
    for (const auto& n : names) {
      series.push_back({n + " (AUPRC " + format_double(std::round(agg[n].auprc_mean * 1000) / 1000) + ")", rl,
                        agg[n].precision_mean, agg[n].precision_std});
    }
    write_atomic(edir / "pr_curve.svg", alarm::line_plot_svg("Event-based precision-recall", "event recall",
                                                             "alarm precision", series));
    std::vector<double> lead_h;
    for (double v : timing["ews"].lead_s) lead_h.push_back(v / 3600.0);
    write_atomic(edir / "alarm_lead.svg",
                 alarm::histogram_svg("First true alarm before event onset (EWS)", "hours before onset", lead_h, 0.5,
                                      static_cast<double>(ac.horizon_s) / 3600.0));
    r.outputs.push_back("eval/pr_curve.svg");
    r.outputs.push_back("eval/alarm_lead.svg");
  }
  json sum = json::object();
  for (const auto& n : names) sum[n] = {{"auprc_mean", agg[n].auprc_mean}, {"auprc_std", agg[n].auprc_std}};
  sum["prevalence"] = prev_mean;
  r.summary = sum;
  return r;
}

}  // namespace ews::pipeline
