#include "ews/pao2.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include "ews/error.hpp"
#include "ews/metrics.hpp"
#include "ews/oxygen_curve.hpp"

namespace ews::oxygen {

using nlohmann::json;

std::string_view estimator_name(EstimatorKind k) {
  switch (k) {
    case EstimatorKind::kPnl: return "pnl";
    case EstimatorKind::kSpo2Nn: return "spo2nn";
    case EstimatorKind::kFullNn: return "fullnn";
  }
  return "pnl";
}

EstimatorKind estimator_from_name(std::string_view name) {
  if (name == "pnl") return EstimatorKind::kPnl;
  if (name == "spo2nn") return EstimatorKind::kSpo2Nn;
  if (name == "fullnn") return EstimatorKind::kFullNn;
  fail(ErrorCode::kConfig, "unknown estimator '" + std::string(name) + "' (expected pnl, spo2nn or fullnn)");
}

double pnl_estimate(double saturation_fraction) {
  if (is_missing(saturation_fraction)) return kMissing;
  return ellis_pao2(std::clamp(saturation_fraction, kMinInvertibleSaturation, kMaxInvertibleSaturation));
}

namespace {

double input_value(const Pao2Example& ex, const std::string& name, SaturationSource source) {
  if (name == "sao2") {
    return source == SaturationSource::kSpo2 ? ex.get(AbgaField::kSpo2) : ex.get(AbgaField::kSao2);
  }
  auto f = field_from_name(name);
  if (!f) fail(ErrorCode::kConfig, "unknown PaO2 model input '" + name + "'");
  return ex.get(*f);
}

}  // namespace

double Pao2Model::predict(const Pao2Example& ex, SaturationSource source) const {
  Eigen::VectorXd x(static_cast<Eigen::Index>(net.input_names.size()));
  for (std::size_t i = 0; i < net.input_names.size(); ++i) {
    const double v = input_value(ex, net.input_names[i], source);
    if (is_missing(v)) return kMissing;
    x(static_cast<Eigen::Index>(i)) = v;
  }
  return net.predict_one(x);
}

std::vector<double> Pao2Model::predict(std::span<const Pao2Example> examples, SaturationSource source) const {
  const auto d = static_cast<Eigen::Index>(net.input_names.size());
  std::vector<double> out(examples.size(), kMissing);
  std::vector<std::size_t> rows;
  Eigen::MatrixXd x(static_cast<Eigen::Index>(examples.size()), d);
  for (std::size_t i = 0; i < examples.size(); ++i) {
    bool ok = true;
    for (Eigen::Index c = 0; c < d; ++c) {
      const double v = input_value(examples[i], net.input_names[static_cast<std::size_t>(c)], source);
      if (is_missing(v)) { ok = false; break; }
      x(static_cast<Eigen::Index>(rows.size()), c) = v;
    }
    if (ok) rows.push_back(i);
  }
  if (rows.empty()) return out;
  Eigen::VectorXd pred = net.predict(x.topRows(static_cast<Eigen::Index>(rows.size())));
  for (std::size_t k = 0; k < rows.size(); ++k) out[rows[k]] = pred(static_cast<Eigen::Index>(k));
  return out;
}

namespace {

json hp_to_json(const nn::HyperparamPoint& hp) {
  return json{{"batch_size", hp.batch_size},
              {"hidden_layers", hp.hidden_layers},
              {"gamma", hp.gamma ? json(*hp.gamma) : json(nullptr)},
              {"learning_rate", hp.learning_rate},
              {"dropout_rate", hp.dropout_rate}};
}

nn::HyperparamPoint hp_from_json(const json& j) {
  nn::HyperparamPoint hp;
  hp.batch_size = j.at("batch_size").get<int>();
  hp.hidden_layers = j.at("hidden_layers").get<std::vector<int>>();
  if (j.contains("gamma") && j["gamma"].is_number()) hp.gamma = j["gamma"].get<double>();
  hp.learning_rate = j.at("learning_rate").get<double>();
  hp.dropout_rate = j.at("dropout_rate").get<double>();
  return hp;
}

}  // namespace

void Pao2Model::save(const std::filesystem::path& path) const {
  json doc = net.to_json();
  doc["estimator"] = std::string(estimator_name(kind));
  doc["hyperparameters"] = hp_to_json(hp);
  std::ofstream out(path);
  if (!out) fail(ErrorCode::kIo, "cannot write " + path.string());
  out << doc.dump(1) << '\n';
}

Pao2Model Pao2Model::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kMissingArtifact, "PaO2 model not found: " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    fail(ErrorCode::kParse, path.string() + ": " + e.what());
  }
  Pao2Model m;
  m.net = nn::MlpModel::from_json(doc);
  m.kind = estimator_from_name(doc.value("estimator", "spo2nn"));
  if (doc.contains("hyperparameters")) m.hp = hp_from_json(doc["hyperparameters"]);
  return m;
}

nn::MlpDataset make_dataset(std::span<const Pao2Example> examples, const std::vector<std::string>& input_names,
                            SaturationSource source) {
  nn::MlpDataset ds;
  ds.input_names = input_names;
  const auto d = static_cast<Eigen::Index>(input_names.size());
  ds.x.resize(static_cast<Eigen::Index>(examples.size()), d);
  ds.y.resize(static_cast<Eigen::Index>(examples.size()));
  ds.w.resize(static_cast<Eigen::Index>(examples.size()));
  Eigen::Index n = 0;
  for (const auto& ex : examples) {
    if (is_missing(ex.target_pao2)) continue;
    bool ok = true;
    for (Eigen::Index c = 0; c < d; ++c) {
      const double v = input_value(ex, input_names[static_cast<std::size_t>(c)], source);
      if (is_missing(v)) { ok = false; break; }
      ds.x(n, c) = v;
    }
    if (!ok) continue;
    ds.y(n) = ex.target_pao2;
    ds.w(n) = ex.weight;
    ++n;
  }
  ds.x.conservativeResize(n, d);
  ds.y.conservativeResize(n);
  ds.w.conservativeResize(n);
  return ds;
}

Pao2TrainConfig default_train_config(EstimatorKind kind) {
  Pao2TrainConfig c;
  if (kind == EstimatorKind::kFullNn) {
    c.hp = {50, {8, 8}, 0.2, 1e-3, 0.0};
    c.inputs = full_nn_default_inputs();
  } else {
    c.hp = {50, {64, 128, 64}, std::nullopt, 1e-4, 0.5};
    c.inputs = spo2_nn_inputs();
  }
  return c;
}

Pao2Model train_pao2_model(EstimatorKind kind, std::span<const Pao2Example> train,
                           std::span<const Pao2Example> valid, const Pao2TrainConfig& config,
                           std::uint64_t seed, nn::MlpTrainTrace* trace) {
  if (kind == EstimatorKind::kPnl) fail(ErrorCode::kConfig, "the pnl-baseline has no trainable parameters");
  std::vector<std::string> inputs = config.inputs;
  if (inputs.empty()) inputs = default_train_config(kind).inputs;

  std::vector<Pao2Example> weighted(train.begin(), train.end());
  assign_example_weights(weighted, config.hp.gamma);
  nn::MlpDataset tr = make_dataset(weighted, inputs, SaturationSource::kSao2);
  if (tr.size() == 0) fail(ErrorCode::kTraining, "no usable training examples for " + std::string(estimator_name(kind)));
  nn::MlpDataset va = make_dataset(valid, inputs, SaturationSource::kSao2);

  nn::MlpTrainOptions opts;
  opts.hp = config.hp;
  opts.loss = config.loss;
  opts.max_epochs = config.max_epochs;
  opts.patience = config.patience;
  Pao2Model model;
  model.kind = kind;
  model.hp = config.hp;
  model.net = nn::train_mlp(tr, va.size() > 0 ? &va : nullptr, opts, seed, trace);
  return model;
}

std::vector<int> assign_folds(std::span<const Pao2Example> examples, int folds, std::uint64_t seed) {
  if (folds < 2) fail(ErrorCode::kConfig, "cross-validation needs at least 2 folds");
  std::vector<std::string> groups;
  for (const auto& ex : examples) groups.push_back(ex.group_id);
  std::sort(groups.begin(), groups.end());
  groups.erase(std::unique(groups.begin(), groups.end()), groups.end());
  std::mt19937_64 rng(seed);
  std::shuffle(groups.begin(), groups.end(), rng);
  std::map<std::string, int> fold_of;
  for (std::size_t i = 0; i < groups.size(); ++i) fold_of[groups[i]] = static_cast<int>(i % static_cast<std::size_t>(folds));
  std::vector<int> out;
  out.reserve(examples.size());
  for (const auto& ex : examples) out.push_back(fold_of[ex.group_id]);
  return out;
}

std::vector<nn::HyperparamPoint> SearchSpace::points() const {
  std::vector<nn::HyperparamPoint> out;
  for (int b : batch_sizes)
    for (const auto& h : hidden_layers)
      for (const auto& g : gammas)
        for (double lr : learning_rates)
          for (double d : dropout_rates) out.push_back({b, h, g, lr, d});
  return out;
}

SearchSpace default_search_space() {
  SearchSpace s;
  s.batch_sizes = {30, 50, 100, 300, 500};
  s.hidden_layers = {{8, 8},      {16, 16},     {32, 32},        {64, 64},        {128, 128},
                     {256, 256},  {64, 128},    {128, 64},       {64, 64, 64},    {64, 128, 64},
                     {128, 128, 128}, {128, 256, 128}, {256, 512, 256}};
  s.gammas = {std::nullopt, 0.1, 0.2, 0.33, 0.5, 1.0};
  // Ten log-spaced points covering [1e-4, 1e-1).
  for (int k = 0; k < 10; ++k) s.learning_rates.push_back(std::pow(10.0, -4.0 + 0.3 * k));
  // Ten evenly spaced points covering [0, 0.5).
  for (int k = 0; k < 10; ++k) s.dropout_rates.push_back(0.05 * k);
  return s;
}

SearchSpace pinned_space(const nn::HyperparamPoint& base) {
  SearchSpace s;
  s.batch_sizes = {base.batch_size};
  s.hidden_layers = {base.hidden_layers};
  s.gammas = {base.gamma};
  s.learning_rates = {base.learning_rate};
  s.dropout_rates = {base.dropout_rate};
  return s;
}

double cv_region_mae(std::span<const Pao2Example> data, const std::vector<std::string>& inputs,
                     const nn::HyperparamPoint& hp, const CvConfig& cv, const SelectionRegion& region) {
  const auto folds = assign_folds(data, cv.folds, cv.seed);
  std::vector<std::vector<double>> errors(static_cast<std::size_t>(cv.folds));
  parallel_for(static_cast<std::size_t>(cv.folds), cv.jobs, [&](std::size_t k) {
    std::vector<Pao2Example> train, held;
    for (std::size_t i = 0; i < data.size(); ++i) {
      (folds[i] == static_cast<int>(k) ? held : train).push_back(data[i]);
    }
    if (train.empty() || held.empty()) return;
    assign_example_weights(train, hp.gamma);
    nn::MlpDataset tr = make_dataset(train, inputs, SaturationSource::kSao2);
    if (tr.size() == 0) return;
    nn::MlpTrainOptions opts;
    opts.hp = hp;
    opts.loss = cv.loss;
    opts.max_epochs = cv.max_epochs;
    nn::MlpModel net = nn::train_mlp(tr, nullptr, opts, derive_seed(cv.seed, k));
    Pao2Model model;
    model.net = std::move(net);
    for (const auto& ex : held) {
      const double sat = ex.get(AbgaField::kSao2);
      if (!(sat < region.max_sao2)) continue;
      const double pred = model.predict(ex, SaturationSource::kSao2);
      if (is_missing(pred) || is_missing(ex.target_pao2)) continue;
      errors[k].push_back(std::abs(pred - ex.target_pao2));
    }
  });
  double total = 0;
  std::size_t n = 0;
  for (const auto& e : errors) {
    total += std::accumulate(e.begin(), e.end(), 0.0);
    n += e.size();
  }
  return n == 0 ? std::numeric_limits<double>::infinity() : total / static_cast<double>(n);
}

namespace {

std::size_t weight_count(const nn::HyperparamPoint& hp, std::size_t inputs) {
  std::size_t n = 0, prev = inputs;
  for (int h : hp.hidden_layers) {
    n += prev * static_cast<std::size_t>(h) + static_cast<std::size_t>(h);
    prev = static_cast<std::size_t>(h);
  }
  return n + prev + 1;
}

bool lexicographically_less(const nn::HyperparamPoint& a, const nn::HyperparamPoint& b) {
  auto gamma_key = [](const std::optional<double>& g) { return g ? *g : -1.0; };
  return std::tie(a.batch_size, a.hidden_layers, a.learning_rate, a.dropout_rate) <
             std::tie(b.batch_size, b.hidden_layers, b.learning_rate, b.dropout_rate) ||
         (std::tie(a.batch_size, a.hidden_layers, a.learning_rate, a.dropout_rate) ==
              std::tie(b.batch_size, b.hidden_layers, b.learning_rate, b.dropout_rate) &&
          gamma_key(a.gamma) < gamma_key(b.gamma));
}

}  // namespace

GridSearchResult grid_search(std::span<const Pao2Example> data, const std::vector<std::string>& inputs,
                             const std::vector<nn::HyperparamPoint>& space, const CvConfig& cv,
                             const SelectionRegion& region) {
  if (space.empty()) fail(ErrorCode::kConfig, "empty hyperparameter search space");
  std::vector<double> scores(space.size());
  CvConfig inner = cv;
  inner.jobs = 1;
  parallel_for(space.size(), cv.jobs, [&](std::size_t i) {
    scores[i] = cv_region_mae(data, inputs, space[i], inner, region);
  });
  GridSearchResult result;
  std::size_t best = 0;
  for (std::size_t i = 0; i < space.size(); ++i) {
    result.scores.emplace_back(space[i], scores[i]);
    if (i == 0) continue;
    const bool better = scores[i] < scores[best];
    const bool tie = scores[i] == scores[best];
    const auto wi = weight_count(space[i], inputs.size());
    const auto wb = weight_count(space[best], inputs.size());
    if (better || (tie && (wi < wb || (wi == wb && lexicographically_less(space[i], space[best]))))) best = i;
  }
  result.best = space[best];
  result.best_score = scores[best];
  return result;
}

BackwardSelectionResult backward_select(std::span<const Pao2Example> data, std::vector<std::string> initial_inputs,
                                        const nn::HyperparamPoint& hp, const CvConfig& cv,
                                        const SelectionRegion& region) {
  BackwardSelectionResult result;
  std::vector<std::string> current = std::move(initial_inputs);
  double current_error = cv_region_mae(data, current, hp, cv, region);
  while (current.size() > 1) {
    std::vector<double> errs(current.size());
    CvConfig inner = cv;
    inner.jobs = 1;
    parallel_for(current.size(), cv.jobs, [&](std::size_t i) {
      std::vector<std::string> reduced = current;
      reduced.erase(reduced.begin() + static_cast<std::ptrdiff_t>(i));
      errs[i] = cv_region_mae(data, reduced, hp, inner, region);
    });
    const auto best = static_cast<std::size_t>(std::min_element(errs.begin(), errs.end()) - errs.begin());
    BackwardSelectionStep step;
    step.candidates = current;
    step.error_before = current_error;
    step.error_after = errs[best];
    if (!(errs[best] < current_error)) {
      result.trace.push_back(step);
      break;
    }
    step.removed = current[best];
    result.trace.push_back(step);
    current.erase(current.begin() + static_cast<std::ptrdiff_t>(best));
    current_error = errs[best];
  }
  result.retained = current;
  return result;
}

bool SaturationBucket::contains(double spo2_pct) const {
  if (is_missing(spo2_pct)) return false;
  if (hi_pct >= 100.0) return spo2_pct >= lo_pct && spo2_pct <= hi_pct;
  return spo2_pct >= lo_pct && spo2_pct < hi_pct;
}

std::vector<SaturationBucket> default_buckets() {
  return {{"0-100", 0, 100}, {"0-96", 0, 96},  {"96-100", 96, 100}, {"90-96", 90, 96},
          {"85-90", 85, 90}, {"80-90", 80, 90}, {"80-85", 80, 85},  {"75-80", 75, 80},
          {"70-80", 70, 80}, {"60-75", 60, 75}};
}

Pao2Report evaluate_pao2_models(std::span<const NamedPredictor> predictors, std::span<const Pao2Example> test,
                                const std::vector<SaturationBucket>& buckets) {
  Pao2Report report;
  report.buckets = buckets;
  for (const auto& p : predictors) {
    EstimatorEvaluation ev;
    ev.name = p.name;
    std::vector<std::vector<double>> errs(buckets.size());
    std::vector<double> scores;
    std::vector<int> labels;
    for (const auto& ex : test) {
      const double spo2 = ex.get(AbgaField::kSpo2);
      if (is_missing(spo2) || is_missing(ex.target_pao2)) continue;
      const double pred = p.predict(ex);
      if (is_missing(pred)) continue;
      const double err = std::abs(pred - ex.target_pao2);
      for (std::size_t b = 0; b < buckets.size(); ++b) {
        if (buckets[b].contains(spo2 * 100.0)) errs[b].push_back(err);
      }
      if (!is_missing(ex.fio2) && ex.fio2 > 0) {
        labels.push_back(ex.target_pao2 / ex.fio2 <= 200.0 ? 1 : 0);
        scores.push_back(-pred / ex.fio2);  // lower estimated P/F = more likely failure
      }
    }
    for (auto& e : errs) {
      BucketStats st;
      st.n = e.size();
      if (!e.empty()) {
        st.median_abs_error = metrics::median(e);
        st.iqr_abs_error = metrics::quantile(e, 0.75) - metrics::quantile(e, 0.25);
      }
      ev.buckets.push_back(st);
    }
    bool both = std::find(labels.begin(), labels.end(), 1) != labels.end() &&
                std::find(labels.begin(), labels.end(), 0) != labels.end();
    if (both) ev.auroc = metrics::auroc(scores, labels);
    report.auroc_n = std::max(report.auroc_n, labels.size());
    report.estimators.push_back(std::move(ev));
  }
  return report;
}

std::string Pao2Report::to_csv() const {
  std::ostringstream os;
  os << "range_spo2_pct,n";
  for (const auto& e : estimators) os << ',' << e.name << ',' << e.name << "_iqr";
  os << '\n';
  for (std::size_t b = 0; b < buckets.size(); ++b) {
    const std::size_t n = estimators.empty() ? 0 : estimators.front().buckets[b].n;
    os << buckets[b].label << ',' << n;
    for (const auto& e : estimators) {
      os << ',' << format_double(e.buckets[b].median_abs_error) << ','
         << format_double(e.buckets[b].iqr_abs_error);
    }
    os << '\n';
  }
  os << "auroc," << auroc_n;
  for (const auto& e : estimators) os << ',' << format_double(e.auroc) << ',';
  os << '\n';
  return os.str();
}

NamedPredictor pnl_predictor() {
  return {"pnl-baseline", [](const Pao2Example& ex) { return pnl_estimate(ex.get(AbgaField::kSpo2)); }};
}

NamedPredictor model_predictor(std::string name, const Pao2Model& model) {
  return {std::move(name), [&model](const Pao2Example& ex) { return model.predict(ex, SaturationSource::kSpo2); }};
}

}  // namespace ews::oxygen
