#pragma once

#include <cstdint>
#include <filesystem>
#include <json.hpp>
#include <span>
#include <string>
#include <vector>

#include "ews/features.hpp"

namespace ews::gbdt {

// Flat binary tree. A node with feature < 0 is a leaf. Rows go left when
// value <= threshold; missing values follow default_left.
struct Node {
  int feature = -1;
  double threshold = 0.0;
  bool default_left = true;
  int left = -1;
  int right = -1;
  double value = 0.0;  // leaf output
  double gain = 0.0;   // split gain (internal nodes)
  std::uint32_t count = 0;
};

struct Tree {
  std::vector<Node> nodes;  // root at 0

  int leaf_index(std::span<const double> row) const;
  double predict(std::span<const double> row) const { return nodes[static_cast<std::size_t>(leaf_index(row))].value; }
  int num_leaves() const;
};

struct GbdtParams {
  int max_trees = 5000;
  double learning_rate = 0.05;
  int max_leaves = 64;
  int min_child_samples = 20;
  double lambda = 1.0;
  int patience = 50;  // boosting rounds without validation improvement; 0 disables
  int max_bins = 0;   // 0: exact split search over all distinct values
  int jobs = 1;

  nlohmann::json to_json() const;
  static GbdtParams from_json(const nlohmann::json& j);
};

struct Ensemble {
  std::vector<std::string> feature_names;
  std::string schema_hash;
  double base_score = 0.0;  // log-odds
  double learning_rate = 0.05;
  std::vector<Tree> trees;
  int best_iteration = 0;  // number of trees used for prediction
  GbdtParams params;
  std::uint64_t seed = 0;
  std::vector<double> train_loss;  // after 0, 1, 2, ... trees
  std::vector<double> valid_loss;

  double raw_score(std::span<const double> row) const;
  double raw_score(std::span<const double> row, std::size_t n_trees) const;
  double predict(std::span<const double> row) const;
  std::vector<double> predict(const feat::FeatureMatrix& m) const;

  nlohmann::json to_json() const;
  std::string serialize() const { return to_json().dump(1); }
  static Ensemble from_json(const nlohmann::json& doc);
  void save(const std::filesystem::path& path) const;
  static Ensemble load(const std::filesystem::path& path);
};

double sigmoid(double x);
double log_loss(std::span<const double> probabilities, std::span<const std::int8_t> labels);

// Binary log-loss boosting with Newton leaf values -G / (H + lambda) scaled by
// the learning rate. Leaf-wise growth up to max_leaves. With a validation
// matrix, best_iteration is the argmin of validation log-loss.
Ensemble train_gbdt(const feat::FeatureMatrix& train, const feat::FeatureMatrix* valid, const GbdtParams& params,
                    std::uint64_t seed = 0, const std::string& schema_hash = {});

// Single tree over two features whose leaf scores are smoothed positive
// fractions (pos + 1) / (n + 2).
struct SingleTreeModel {
  std::vector<std::string> feature_names;
  Tree tree;

  double predict(std::span<const double> row) const { return tree.predict(row); }
  std::vector<double> predict(const feat::FeatureMatrix& m) const;
  nlohmann::json to_json() const;
  static SingleTreeModel from_json(const nlohmann::json& doc);
  void save(const std::filesystem::path& path) const;
  static SingleTreeModel load(const std::filesystem::path& path);
};

inline constexpr const char* kBaselineSpo2Column = "spo2__current";
inline constexpr const char* kBaselineFio2Column = "fio2_est__current";

SingleTreeModel train_baseline_c(const feat::FeatureMatrix& train, int max_leaves = 32, int min_child_samples = 20);

// 1 iff current SpO2 (%) is below the threshold; missing SpO2 scores 0.
double baseline_s(double spo2_current, double threshold);

struct Importance {
  std::string feature;
  double score = 0.0;
};

// Total split gain per feature over the trees used for prediction, descending.
std::vector<Importance> gain_importance(const Ensemble& model);

// Increase of validation log-loss when one column is shuffled, descending.
// At most max_rows rows are used (0: all).
std::vector<Importance> permutation_importance(const Ensemble& model, const feat::FeatureMatrix& valid,
                                               std::uint64_t seed, std::size_t max_rows = 0, int jobs = 1);

}  // namespace ews::gbdt
