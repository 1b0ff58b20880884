#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "ews/mlp.hpp"

using namespace ews::nn;

namespace {

MlpDataset random_dataset(int n, int d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  MlpDataset ds;
  ds.x.resize(n, d);
  ds.y.resize(n);
  ds.w = Eigen::VectorXd::Ones(n);
  for (int j = 0; j < d; ++j) ds.input_names.push_back("x" + std::to_string(j));
  for (int i = 0; i < n; ++i) {
    double s = 0;
    for (int j = 0; j < d; ++j) {
      ds.x(i, j) = 3.0 * g(rng) + j;
      s += std::sin(ds.x(i, j));
    }
    ds.y(i) = 10.0 * s + 50.0;
  }
  return ds;
}

void jitter_parameters(MlpModel& m, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 0.3);
  for (std::size_t i = 0; i < parameter_count(m); ++i) parameter_at(m, i) += g(rng);
}

double relative_error(double a, double b) {
  const double denom = std::max(std::abs(a) + std::abs(b), 1e-8);
  return std::abs(a - b) / denom;
}

}  // namespace

class MlpGradient : public ::testing::TestWithParam<LossKind> {};

TEST_P(MlpGradient, MatchesCentralDifferences) {
  const auto ds = random_dataset(5, 3, 11);
  HyperparamPoint hp;
  hp.hidden_layers = {6, 4};
  auto model = init_mlp(ds, hp, 3);
  jitter_parameters(model, 4);

  MlpGradients grad;
  mlp_loss_and_gradient(model, ds.x, ds.y, ds.w, GetParam(), nullptr, grad);

  std::mt19937_64 rng(5);
  std::uniform_int_distribution<std::size_t> pick(0, parameter_count(model) - 1);
  const double h = 1e-6;
  for (int k = 0; k < 10; ++k) {
    const auto idx = pick(rng);
    double& p = parameter_at(model, idx);
    const double orig = p;
    p = orig + h;
    const double up = mlp_loss(model, ds.x, ds.y, ds.w, GetParam());
    p = orig - h;
    const double down = mlp_loss(model, ds.x, ds.y, ds.w, GetParam());
    p = orig;
    const double numeric = (up - down) / (2 * h);
    EXPECT_LT(relative_error(gradient_at(grad, idx), numeric), 1e-4)
        << "param " << idx << " analytic " << gradient_at(grad, idx) << " numeric " << numeric;
  }
}

INSTANTIATE_TEST_SUITE_P(Losses, MlpGradient, ::testing::Values(LossKind::kSquared, LossKind::kAbsolute),
                         [](const auto& info) { return info.param == LossKind::kSquared ? "Squared" : "Absolute"; });

TEST(MlpGradientDropout, MatchesCentralDifferencesUnderFixedMasks) {
  const auto ds = random_dataset(5, 2, 21);
  HyperparamPoint hp;
  hp.hidden_layers = {8, 8};
  hp.dropout_rate = 0.5;
  auto model = init_mlp(ds, hp, 1);
  jitter_parameters(model, 2);

  std::mt19937_64 rng(9);
  std::bernoulli_distribution keep(0.5);
  DropoutMasks masks;
  for (int units : hp.hidden_layers) {
    Eigen::MatrixXd m(units, ds.size());
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = keep(rng) ? 2.0 : 0.0;
    masks.push_back(m);
  }
  MlpGradients grad;
  mlp_loss_and_gradient(model, ds.x, ds.y, ds.w, LossKind::kSquared, &masks, grad);
  const double h = 1e-6;
  for (std::size_t idx = 0; idx < parameter_count(model); idx += 7) {
    double& p = parameter_at(model, idx);
    const double orig = p;
    p = orig + h;
    const double up = mlp_loss(model, ds.x, ds.y, ds.w, LossKind::kSquared, &masks);
    p = orig - h;
    const double down = mlp_loss(model, ds.x, ds.y, ds.w, LossKind::kSquared, &masks);
    p = orig;
    EXPECT_LT(relative_error(gradient_at(grad, idx), (up - down) / (2 * h)), 1e-4) << idx;
  }
}

TEST(Mlp, FreshNetworkPredictsTrainingMean) {
  const auto ds = random_dataset(40, 2, 1);
  const auto model = init_mlp(ds, HyperparamPoint{}, 1);
  const auto pred = model.predict(ds.x);
  for (Eigen::Index i = 0; i < pred.size(); ++i) EXPECT_NEAR(pred(i), ds.y.mean(), 1e-9);
}

TEST(Mlp, LearnsSmoothFunction) {
  const auto train = random_dataset(600, 1, 2);
  const auto valid = random_dataset(200, 1, 3);
  MlpTrainOptions opt;
  opt.hp.hidden_layers = {32, 32};
  opt.hp.learning_rate = 3e-3;
  opt.hp.batch_size = 32;
  opt.loss = LossKind::kSquared;
  opt.max_epochs = 80;
  MlpTrainTrace trace;
  const auto model = train_mlp(train, &valid, opt, 7, &trace);
  const auto pred = model.predict(valid.x);
  const double mae = (pred - valid.y).cwiseAbs().mean();
  const double spread = (valid.y.array() - valid.y.mean()).abs().mean();
  EXPECT_LT(mae, 0.2 * spread);
  ASSERT_FALSE(trace.epoch_train_loss.empty());
  EXPECT_LT(trace.epoch_train_loss.back(), trace.epoch_train_loss.front());
}

TEST(Mlp, TrainingIsDeterministicPerSeed) {
  const auto train = random_dataset(120, 2, 4);
  MlpTrainOptions opt;
  opt.hp.hidden_layers = {8};
  opt.hp.dropout_rate = 0.25;
  opt.max_epochs = 5;
  const auto a = train_mlp(train, nullptr, opt, 99);
  const auto b = train_mlp(train, nullptr, opt, 99);
  const auto c = train_mlp(train, nullptr, opt, 100);
  EXPECT_EQ(a.to_json().dump(), b.to_json().dump());
  EXPECT_NE(a.to_json().dump(), c.to_json().dump());
}

TEST(Mlp, DropoutInactiveAtPrediction) {
  const auto train = random_dataset(60, 2, 5);
  MlpTrainOptions opt;
  opt.hp.hidden_layers = {16};
  opt.hp.dropout_rate = 0.5;
  opt.max_epochs = 3;
  const auto m = train_mlp(train, nullptr, opt, 1);
  EXPECT_EQ(m.predict(train.x), m.predict(train.x));
}

TEST(Mlp, JsonRoundTripPreservesPredictions) {
  const auto train = random_dataset(80, 3, 6);
  MlpTrainOptions opt;
  opt.hp.hidden_layers = {5, 7};
  opt.max_epochs = 3;
  const auto m = train_mlp(train, nullptr, opt, 1);
  const auto back = MlpModel::from_json(nlohmann::json::parse(m.to_json().dump()));
  EXPECT_EQ(back.layer_sizes, m.layer_sizes);
  EXPECT_EQ(back.input_names, m.input_names);
  const auto p1 = m.predict(train.x);
  const auto p2 = back.predict(train.x);
  for (Eigen::Index i = 0; i < p1.size(); ++i) EXPECT_DOUBLE_EQ(p1(i), p2(i));
}

TEST(Mlp, WeightsScaleExampleCost) {
  auto ds = random_dataset(6, 2, 8);
  HyperparamPoint hp;
  hp.hidden_layers = {4};
  auto m = init_mlp(ds, hp, 1);
  jitter_parameters(m, 1);
  const double base = mlp_loss(m, ds.x, ds.y, ds.w, LossKind::kSquared);
  // Weighted mean: a common factor on the weights cancels.
  const Eigen::VectorXd w2 = 2.0 * ds.w;
  EXPECT_NEAR(mlp_loss(m, ds.x, ds.y, w2, LossKind::kSquared), base, 1e-12);
  // Zero weight removes an example.
  Eigen::VectorXd w0 = ds.w;
  w0(0) = 0.0;
  Eigen::MatrixXd x_rest = ds.x.bottomRows(5);
  Eigen::VectorXd y_rest = ds.y.tail(5);
  Eigen::VectorXd w_rest = ds.w.tail(5);
  const double without = mlp_loss(m, x_rest, y_rest, w_rest, LossKind::kSquared);
  const double zeroed = mlp_loss(m, ds.x, ds.y, w0, LossKind::kSquared);
  EXPECT_NEAR(zeroed, without, 1e-12);
}
