#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <json.hpp>
#include <optional>
#include <string>
#include <vector>

namespace ews::nn {

enum class LossKind { kAbsolute, kSquared };

struct HyperparamPoint {
  int batch_size = 50;
  std::vector<int> hidden_layers{64, 128, 64};
  std::optional<double> gamma;  // example-weight correction; nullopt = none
  double learning_rate = 1e-4;
  double dropout_rate = 0.0;

  bool operator==(const HyperparamPoint&) const = default;
};

std::string describe(const HyperparamPoint& hp);

// Fully connected regression network: ReLU hidden layers, affine scalar
// output. Inputs are z-scored and the target is scaled with training-set
// statistics stored alongside the weights.
struct MlpModel {
  std::vector<int> layer_sizes;            // input, hidden..., 1
  std::vector<Eigen::MatrixXd> weights;    // layer l: out x in
  std::vector<Eigen::VectorXd> biases;
  double dropout_rate = 0.0;
  std::vector<std::string> input_names;
  Eigen::VectorXd input_mean;
  Eigen::VectorXd input_scale;
  double target_mean = 0.0;
  double target_scale = 1.0;
  double validation_error = std::numeric_limits<double>::quiet_NaN();
  int epochs_trained = 0;

  std::size_t num_inputs() const { return input_names.size(); }
  std::size_t num_parameters() const;

  // Rows are samples in raw (unnormalised) input units.
  Eigen::VectorXd predict(const Eigen::MatrixXd& x) const;
  double predict_one(const Eigen::VectorXd& x) const;

  nlohmann::json to_json() const;
  static MlpModel from_json(const nlohmann::json& doc);
};

// Training data in raw units; weights multiply each example's cost.
struct MlpDataset {
  Eigen::MatrixXd x;
  Eigen::VectorXd y;
  Eigen::VectorXd w;
  std::vector<std::string> input_names;

  Eigen::Index size() const { return y.size(); }
};

struct MlpTrainOptions {
  HyperparamPoint hp;
  LossKind loss = LossKind::kAbsolute;
  int max_epochs = 50;
  int patience = 0;  // epochs without validation improvement; 0 disables
};

struct MlpTrainTrace {
  std::vector<double> epoch_train_loss;  // evaluation-mode loss after each epoch
  std::vector<double> epoch_valid_mae;
};

// Fresh network for the given data statistics: He-normal hidden weights,
// zero output weights, zero biases.
MlpModel init_mlp(const MlpDataset& train, const HyperparamPoint& hp, std::uint64_t seed);

// Mini-batch Adam on the weighted loss. Dropout is active in training
// passes only. Deterministic for a given seed. With patience > 0 the
// weights of the best validation epoch are returned.
MlpModel train_mlp(const MlpDataset& train, const MlpDataset* valid, const MlpTrainOptions& options,
                   std::uint64_t seed, MlpTrainTrace* trace = nullptr);

// Per-layer keep masks (already scaled by 1/(1-rate)); one matrix per hidden
// layer, sized hidden_units x batch.
using DropoutMasks = std::vector<Eigen::MatrixXd>;

struct MlpGradients {
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> biases;
};

// Weighted loss in normalised target units over raw-unit inputs x.
double mlp_loss(const MlpModel& model, const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                const Eigen::VectorXd& w, LossKind loss, const DropoutMasks* masks = nullptr);

// Analytic gradient of mlp_loss by backpropagation.
double mlp_loss_and_gradient(const MlpModel& model, const Eigen::MatrixXd& x,
                             const Eigen::VectorXd& y, const Eigen::VectorXd& w, LossKind loss,
                             const DropoutMasks* masks, MlpGradients& grad);

// Flat parameter access for optimisers and finite-difference checks.
std::size_t parameter_count(const MlpModel& model);
double& parameter_at(MlpModel& model, std::size_t index);
double gradient_at(const MlpGradients& grad, std::size_t index);

}  // namespace ews::nn
