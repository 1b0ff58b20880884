#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ews/abga.hpp"
#include "ews/mlp.hpp"

namespace ews::oxygen {

enum class EstimatorKind { kPnl, kSpo2Nn, kFullNn };

std::string_view estimator_name(EstimatorKind k);
EstimatorKind estimator_from_name(std::string_view name);  // "pnl" | "spo2nn" | "fullnn"

// Where the "sao2" input is read from. Training and cross-validation use
// the ABGA SaO2; deployment and test evaluation use SpO2.
enum class SaturationSource { kSao2, kSpo2 };

// Saturations above this are clamped before inversion: the curve carries no
// information at full saturation.
inline constexpr double kMaxInvertibleSaturation = 0.99;
inline constexpr double kMinInvertibleSaturation = 0.01;

double pnl_estimate(double saturation_fraction);

// Trained PaO2 estimator: a network plus the named inputs it consumes.
struct Pao2Model {
  EstimatorKind kind = EstimatorKind::kSpo2Nn;
  nn::MlpModel net;
  nn::HyperparamPoint hp;

  // NaN when an input is unavailable.
  double predict(const Pao2Example& ex, SaturationSource source = SaturationSource::kSpo2) const;
  std::vector<double> predict(std::span<const Pao2Example> examples,
                              SaturationSource source = SaturationSource::kSpo2) const;

  void save(const std::filesystem::path& path) const;
  static Pao2Model load(const std::filesystem::path& path);
};

// Rows whose listed inputs are all present. Weights come from Pao2Example.
nn::MlpDataset make_dataset(std::span<const Pao2Example> examples,
                            const std::vector<std::string>& input_names,
                            SaturationSource source = SaturationSource::kSao2);

struct Pao2TrainConfig {
  nn::HyperparamPoint hp;
  nn::LossKind loss = nn::LossKind::kAbsolute;
  int max_epochs = 40;
  int patience = 8;
  std::vector<std::string> inputs;  // empty: variant default
};

Pao2TrainConfig default_train_config(EstimatorKind kind);

// Assigns 1/c^gamma weights to `train` (copy) and fits the network.
Pao2Model train_pao2_model(EstimatorKind kind, std::span<const Pao2Example> train,
                           std::span<const Pao2Example> valid, const Pao2TrainConfig& config,
                           std::uint64_t seed, nn::MlpTrainTrace* trace = nullptr);

// Group-aware fold assignment: every example of a group lands in one fold.
std::vector<int> assign_folds(std::span<const Pao2Example> examples, int folds, std::uint64_t seed);

struct SearchSpace {
  std::vector<int> batch_sizes;
  std::vector<std::vector<int>> hidden_layers;
  std::vector<std::optional<double>> gammas;
  std::vector<double> learning_rates;
  std::vector<double> dropout_rates;

  std::vector<nn::HyperparamPoint> points() const;
};

// The full search grid used for both networks.
SearchSpace default_search_space();
// Single-point space at `base`; callers widen individual dimensions.
SearchSpace pinned_space(const nn::HyperparamPoint& base);

struct SelectionRegion {
  double max_sao2 = 0.96;  // exclusive
};

struct GridSearchResult {
  nn::HyperparamPoint best;
  double best_score = 0.0;
  std::vector<std::pair<nn::HyperparamPoint, double>> scores;  // in evaluation order
};

struct CvConfig {
  int folds = 3;
  int max_epochs = 40;
  nn::LossKind loss = nn::LossKind::kAbsolute;
  std::uint64_t seed = 1;
  int jobs = 1;
};

// Cross-validated MAE restricted to held-out samples with SaO2 in the region.
double cv_region_mae(std::span<const Pao2Example> data, const std::vector<std::string>& inputs,
                     const nn::HyperparamPoint& hp, const CvConfig& cv,
                     const SelectionRegion& region = {});

// Argmin of cv_region_mae over the space; ties go to the model with fewer
// weights, then to the lexicographically smaller point.
GridSearchResult grid_search(std::span<const Pao2Example> data, const std::vector<std::string>& inputs,
                             const std::vector<nn::HyperparamPoint>& space, const CvConfig& cv,
                             const SelectionRegion& region = {});

struct BackwardSelectionStep {
  std::vector<std::string> candidates;  // inputs before this step
  std::string removed;                  // empty when nothing improved
  double error_before = 0.0;
  double error_after = 0.0;
};

struct BackwardSelectionResult {
  std::vector<std::string> retained;
  std::vector<BackwardSelectionStep> trace;
};

// Greedy backward elimination: at each step drop the input whose removal
// gives the lowest cross-validated error, while that error beats the current
// one. Never removes the last input.
BackwardSelectionResult backward_select(std::span<const Pao2Example> data,
                                        std::vector<std::string> initial_inputs,
                                        const nn::HyperparamPoint& hp, const CvConfig& cv,
                                        const SelectionRegion& region = {});

// SpO2 interval [lo_pct, hi_pct) in percent; hi_pct == 100 is inclusive.
struct SaturationBucket {
  std::string label;
  double lo_pct = 0;
  double hi_pct = 100;

  bool contains(double spo2_pct) const;
};

std::vector<SaturationBucket> default_buckets();

struct BucketStats {
  std::size_t n = 0;
  double median_abs_error = kMissing;
  double iqr_abs_error = kMissing;
};

struct EstimatorEvaluation {
  std::string name;
  std::vector<BucketStats> buckets;  // aligned with Pao2Report::buckets
  double auroc = kMissing;           // detecting true P/F <= 200
};

struct Pao2Report {
  std::vector<SaturationBucket> buckets;
  std::vector<EstimatorEvaluation> estimators;
  std::size_t auroc_n = 0;

  std::string to_csv() const;
};

using Pao2Predictor = std::function<double(const Pao2Example&)>;

struct NamedPredictor {
  std::string name;
  Pao2Predictor predict;
};

// Bucketed median absolute error / IQR by SpO2 plus AUROC for P/F <= 200.
// Predictors must read SpO2, never the ABGA SaO2, for the current saturation.
Pao2Report evaluate_pao2_models(std::span<const NamedPredictor> predictors,
                                std::span<const Pao2Example> test,
                                const std::vector<SaturationBucket>& buckets = default_buckets());

// pnl-baseline, and the trained networks in deployment mode (SpO2 input).
NamedPredictor pnl_predictor();
NamedPredictor model_predictor(std::string name, const Pao2Model& model);

}  // namespace ews::oxygen
