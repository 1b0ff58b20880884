#include "ews/mlp.hpp"

#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "ews/error.hpp"

namespace ews::nn {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using nlohmann::json;

std::string describe(const HyperparamPoint& hp) {
  std::ostringstream os;
  os << "batch=" << hp.batch_size << " layers=(";
  for (std::size_t i = 0; i < hp.hidden_layers.size(); ++i) os << (i ? "," : "") << hp.hidden_layers[i];
  os << ") gamma=";
  if (hp.gamma) os << *hp.gamma; else os << "none";
  os << " lr=" << hp.learning_rate << " dropout=" << hp.dropout_rate;
  return os.str();
}

std::size_t MlpModel::num_parameters() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l < weights.size(); ++l) n += weights[l].size() + biases[l].size();
  return n;
}

namespace {

MatrixXd normalize_inputs(const MlpModel& m, const MatrixXd& x) {
  // Result is features x samples.
  MatrixXd a = x.transpose();
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    a.row(r).array() = (a.row(r).array() - m.input_mean(r)) / m.input_scale(r);
  }
  return a;
}

struct ForwardCache {
  std::vector<MatrixXd> pre;   // z per layer
  std::vector<MatrixXd> post;  // activations; post[0] is the input
};

MatrixXd forward(const MlpModel& m, const MatrixXd& input, const DropoutMasks* masks,
                 ForwardCache* cache) {
  MatrixXd a = input;
  if (cache) cache->post.push_back(a);
  const std::size_t n_layers = m.weights.size();
  for (std::size_t l = 0; l < n_layers; ++l) {
    MatrixXd z = m.weights[l] * a;
    z.colwise() += m.biases[l];
    if (l + 1 == n_layers) {
      if (cache) cache->pre.push_back(z);
      return z;
    }
    if (cache) cache->pre.push_back(z);
    a = z.cwiseMax(0.0);
    if (masks) a = a.cwiseProduct((*masks)[l]);
    if (cache) cache->post.push_back(a);
  }
  return a;
}

double residual_loss(double r, LossKind loss) { return loss == LossKind::kSquared ? r * r : std::abs(r); }

double residual_slope(double r, LossKind loss) {
  if (loss == LossKind::kSquared) return 2.0 * r;
  return r > 0 ? 1.0 : (r < 0 ? -1.0 : 0.0);
}

}  // namespace

VectorXd MlpModel::predict(const MatrixXd& x) const {
  MatrixXd out = forward(*this, normalize_inputs(*this, x), nullptr, nullptr);
  VectorXd y = out.row(0).transpose();
  return (y.array() * target_scale + target_mean).matrix();
}

double MlpModel::predict_one(const VectorXd& x) const {
  MatrixXd row = x.transpose();
  return predict(row)(0);
}

double mlp_loss(const MlpModel& model, const MatrixXd& x, const VectorXd& y, const VectorXd& w,
                LossKind loss, const DropoutMasks* masks) {
  MatrixXd out = forward(model, normalize_inputs(model, x), masks, nullptr);
  double total = 0, wsum = 0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    const double r = out(0, i) - (y(i) - model.target_mean) / model.target_scale;
    total += w(i) * residual_loss(r, loss);
    wsum += w(i);
  }
  return total / wsum;
}

double mlp_loss_and_gradient(const MlpModel& model, const MatrixXd& x, const VectorXd& y,
                             const VectorXd& w, LossKind loss, const DropoutMasks* masks,
                             MlpGradients& grad) {
  ForwardCache cache;
  MatrixXd out = forward(model, normalize_inputs(model, x), masks, &cache);
  const double wsum = w.sum();
  MatrixXd delta(1, y.size());
  double total = 0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    const double r = out(0, i) - (y(i) - model.target_mean) / model.target_scale;
    total += w(i) * residual_loss(r, loss);
    delta(0, i) = w(i) * residual_slope(r, loss) / wsum;
  }
  const std::size_t n_layers = model.weights.size();
  grad.weights.resize(n_layers);
  grad.biases.resize(n_layers);
  for (std::size_t l = n_layers; l-- > 0;) {
    grad.weights[l] = delta * cache.post[l].transpose();
    grad.biases[l] = delta.rowwise().sum();
    if (l == 0) break;
    MatrixXd back = model.weights[l].transpose() * delta;
    const MatrixXd& z = cache.pre[l - 1];
    back = back.cwiseProduct((z.array() > 0.0).cast<double>().matrix());
    if (masks) back = back.cwiseProduct((*masks)[l - 1]);
    delta = std::move(back);
  }
  return total / wsum;
}

std::size_t parameter_count(const MlpModel& model) { return model.num_parameters(); }

double& parameter_at(MlpModel& model, std::size_t index) {
  for (std::size_t l = 0; l < model.weights.size(); ++l) {
    auto& w = model.weights[l];
    const auto nw = static_cast<std::size_t>(w.size());
    if (index < nw) return w(static_cast<Eigen::Index>(index / w.cols()), static_cast<Eigen::Index>(index % w.cols()));
    index -= nw;
    auto& b = model.biases[l];
    if (index < static_cast<std::size_t>(b.size())) return b(static_cast<Eigen::Index>(index));
    index -= static_cast<std::size_t>(b.size());
  }
  fail(ErrorCode::kConfig, "parameter index out of range");
}

double gradient_at(const MlpGradients& grad, std::size_t index) {
  for (std::size_t l = 0; l < grad.weights.size(); ++l) {
    const auto& w = grad.weights[l];
    const auto nw = static_cast<std::size_t>(w.size());
    if (index < nw) return w(static_cast<Eigen::Index>(index / w.cols()), static_cast<Eigen::Index>(index % w.cols()));
    index -= nw;
    const auto& b = grad.biases[l];
    if (index < static_cast<std::size_t>(b.size())) return b(static_cast<Eigen::Index>(index));
    index -= static_cast<std::size_t>(b.size());
  }
  fail(ErrorCode::kConfig, "gradient index out of range");
}

MlpModel init_mlp(const MlpDataset& train, const HyperparamPoint& hp, std::uint64_t seed) {
  if (train.size() == 0) fail(ErrorCode::kTraining, "empty training set");
  const auto d = train.x.cols();
  if (static_cast<std::size_t>(d) != train.input_names.size()) {
    fail(ErrorCode::kConfig, "input_names do not match the input width");
  }
  MlpModel m;
  m.input_names = train.input_names;
  m.dropout_rate = hp.dropout_rate;
  m.layer_sizes.push_back(static_cast<int>(d));
  for (int h : hp.hidden_layers) {
    if (h <= 0) fail(ErrorCode::kConfig, "hidden layer sizes must be positive");
    m.layer_sizes.push_back(h);
  }
  m.layer_sizes.push_back(1);

  const double n = static_cast<double>(train.size());
  m.input_mean = train.x.colwise().mean().transpose();
  m.input_scale.resize(d);
  for (Eigen::Index c = 0; c < d; ++c) {
    const double var = (train.x.col(c).array() - m.input_mean(c)).square().sum() / n;
    m.input_scale(c) = var > 1e-24 ? std::sqrt(var) : 1.0;
  }
  m.target_mean = train.y.mean();
  const double tvar = (train.y.array() - m.target_mean).square().sum() / n;
  m.target_scale = tvar > 1e-24 ? std::sqrt(tvar) : 1.0;

  std::mt19937_64 rng(seed);
  for (std::size_t l = 0; l + 1 < m.layer_sizes.size(); ++l) {
    const int fan_in = m.layer_sizes[l];
    const int fan_out = m.layer_sizes[l + 1];
    MatrixXd w = MatrixXd::Zero(fan_out, fan_in);
    if (l + 2 < m.layer_sizes.size()) {
      std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
      for (Eigen::Index r = 0; r < w.rows(); ++r)
        for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = dist(rng);
    }
    m.weights.push_back(std::move(w));
    m.biases.push_back(VectorXd::Zero(fan_out));
  }
  return m;
}

namespace {

double mean_absolute_error(const MlpModel& m, const MlpDataset& data) {
  VectorXd pred = m.predict(data.x);
  return (pred - data.y).cwiseAbs().mean();
}

}  // namespace

MlpModel train_mlp(const MlpDataset& train, const MlpDataset* valid, const MlpTrainOptions& options,
                   std::uint64_t seed, MlpTrainTrace* trace) {
  const auto& hp = options.hp;
  if (hp.batch_size <= 0) fail(ErrorCode::kConfig, "batch_size must be positive");
  if (!(hp.learning_rate > 0)) fail(ErrorCode::kConfig, "learning_rate must be positive");
  if (!(hp.dropout_rate >= 0 && hp.dropout_rate < 1)) fail(ErrorCode::kConfig, "dropout_rate must lie in [0,1)");
  MlpModel model = init_mlp(train, hp, seed);
  std::mt19937_64 rng(seed ^ 0xA5A5A5A5DEADBEEFULL);

  const std::size_t n_layers = model.weights.size();
  std::vector<MatrixXd> mw(n_layers), vw(n_layers);
  std::vector<VectorXd> mb(n_layers), vb(n_layers);
  for (std::size_t l = 0; l < n_layers; ++l) {
    mw[l] = vw[l] = MatrixXd::Zero(model.weights[l].rows(), model.weights[l].cols());
    mb[l] = vb[l] = VectorXd::Zero(model.biases[l].size());
  }
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  long step = 0;

  const auto n = static_cast<std::size_t>(train.size());
  std::vector<Eigen::Index> order(n);
  std::iota(order.begin(), order.end(), 0);
  const std::size_t batch = std::min<std::size_t>(static_cast<std::size_t>(hp.batch_size), n);
  const double keep = 1.0 - hp.dropout_rate;
  std::bernoulli_distribution keep_draw(keep);

  MlpModel best = model;
  double best_valid = std::numeric_limits<double>::infinity();
  int since_best = 0;
  MlpGradients grad;
  MatrixXd bx;
  VectorXd by, bw;

  for (int epoch = 0; epoch < options.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < n; start += batch) {
      const std::size_t len = std::min(batch, n - start);
      bx.resize(static_cast<Eigen::Index>(len), train.x.cols());
      by.resize(static_cast<Eigen::Index>(len));
      bw.resize(static_cast<Eigen::Index>(len));
      for (std::size_t i = 0; i < len; ++i) {
        const auto src = order[start + i];
        bx.row(static_cast<Eigen::Index>(i)) = train.x.row(src);
        by(static_cast<Eigen::Index>(i)) = train.y(src);
        bw(static_cast<Eigen::Index>(i)) = train.w(src);
      }
      DropoutMasks masks;
      const DropoutMasks* mask_ptr = nullptr;
      if (hp.dropout_rate > 0) {
        for (std::size_t l = 0; l + 1 < n_layers; ++l) {
          MatrixXd mk(model.weights[l].rows(), static_cast<Eigen::Index>(len));
          for (Eigen::Index c = 0; c < mk.cols(); ++c)
            for (Eigen::Index r = 0; r < mk.rows(); ++r) mk(r, c) = keep_draw(rng) ? 1.0 / keep : 0.0;
          masks.push_back(std::move(mk));
        }
        mask_ptr = &masks;
      }
      const double loss = mlp_loss_and_gradient(model, bx, by, bw, options.loss, mask_ptr, grad);
      if (!std::isfinite(loss)) {
        std::ostringstream os;
        os << "non-finite training loss at epoch " << epoch << ", batch offset " << start << " ("
           << describe(hp) << ")";
        fail(ErrorCode::kTraining, os.str());
      }
      ++step;
      const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(step));
      const double lr = hp.learning_rate;
      for (std::size_t l = 0; l < n_layers; ++l) {
        mw[l] = kBeta1 * mw[l] + (1 - kBeta1) * grad.weights[l];
        vw[l] = kBeta2 * vw[l] + (1 - kBeta2) * grad.weights[l].cwiseProduct(grad.weights[l]);
        model.weights[l].array() -=
            lr * (mw[l].array() / c1) / ((vw[l].array() / c2).sqrt() + kEps);
        mb[l] = kBeta1 * mb[l] + (1 - kBeta1) * grad.biases[l];
        vb[l] = kBeta2 * vb[l] + (1 - kBeta2) * grad.biases[l].cwiseProduct(grad.biases[l]);
        model.biases[l].array() -=
            lr * (mb[l].array() / c1) / ((vb[l].array() / c2).sqrt() + kEps);
      }
    }
    model.epochs_trained = epoch + 1;
    if (trace) trace->epoch_train_loss.push_back(mlp_loss(model, train.x, train.y, train.w, options.loss));
    if (valid && valid->size() > 0) {
      const double mae = mean_absolute_error(model, *valid);
      if (trace) trace->epoch_valid_mae.push_back(mae);
      if (mae < best_valid) {
        best_valid = mae;
        best = model;
        since_best = 0;
      } else if (options.patience > 0 && ++since_best >= options.patience) {
        break;
      }
    }
  }
  if (valid && valid->size() > 0) {
    if (options.patience > 0 && std::isfinite(best_valid)) model = best;
    model.validation_error = mean_absolute_error(model, *valid);
  }
  return model;
}

json MlpModel::to_json() const {
  json doc;
  doc["format"] = "ews-mlp";
  doc["format_version"] = 1;
  doc["layer_sizes"] = layer_sizes;
  json ws = json::array(), bs = json::array();
  for (std::size_t l = 0; l < weights.size(); ++l) {
    std::vector<double> flat;
    flat.reserve(static_cast<std::size_t>(weights[l].size()));
    for (Eigen::Index r = 0; r < weights[l].rows(); ++r)
      for (Eigen::Index c = 0; c < weights[l].cols(); ++c) flat.push_back(weights[l](r, c));
    ws.push_back(flat);
    bs.push_back(std::vector<double>(biases[l].data(), biases[l].data() + biases[l].size()));
  }
  doc["weights"] = ws;
  doc["biases"] = bs;
  doc["dropout_rate"] = dropout_rate;
  doc["input_names"] = input_names;
  doc["input_mean"] = std::vector<double>(input_mean.data(), input_mean.data() + input_mean.size());
  doc["input_scale"] = std::vector<double>(input_scale.data(), input_scale.data() + input_scale.size());
  doc["target_mean"] = target_mean;
  doc["target_scale"] = target_scale;
  doc["validation_error"] = std::isfinite(validation_error) ? json(validation_error) : json(nullptr);
  doc["epochs_trained"] = epochs_trained;
  return doc;
}

MlpModel MlpModel::from_json(const json& doc) {
  if (doc.value("format", "") != "ews-mlp") fail(ErrorCode::kParse, "not an ews-mlp document");
  if (doc.value("format_version", 0) != 1) fail(ErrorCode::kParse, "unsupported ews-mlp format_version");
  MlpModel m;
  m.layer_sizes = doc.at("layer_sizes").get<std::vector<int>>();
  if (m.layer_sizes.size() < 2) fail(ErrorCode::kParse, "layer_sizes needs at least two entries");
  const auto& ws = doc.at("weights");
  const auto& bs = doc.at("biases");
  if (ws.size() + 1 != m.layer_sizes.size() || bs.size() + 1 != m.layer_sizes.size()) {
    fail(ErrorCode::kParse, "weight/bias arrays do not match layer_sizes");
  }
  for (std::size_t l = 0; l + 1 < m.layer_sizes.size(); ++l) {
    const int in = m.layer_sizes[l], out = m.layer_sizes[l + 1];
    auto flat = ws[l].get<std::vector<double>>();
    auto b = bs[l].get<std::vector<double>>();
    if (flat.size() != static_cast<std::size_t>(in) * out || b.size() != static_cast<std::size_t>(out)) {
      fail(ErrorCode::kParse, "layer " + std::to_string(l) + " has incompatible dimensions");
    }
    MatrixXd w(out, in);
    for (int r = 0; r < out; ++r)
      for (int c = 0; c < in; ++c) w(r, c) = flat[static_cast<std::size_t>(r) * in + c];
    m.weights.push_back(std::move(w));
    m.biases.push_back(Eigen::Map<VectorXd>(b.data(), out));
  }
  m.dropout_rate = doc.value("dropout_rate", 0.0);
  m.input_names = doc.at("input_names").get<std::vector<std::string>>();
  auto mean = doc.at("input_mean").get<std::vector<double>>();
  auto scale = doc.at("input_scale").get<std::vector<double>>();
  if (mean.size() != m.input_names.size() || scale.size() != m.input_names.size() ||
      static_cast<int>(m.input_names.size()) != m.layer_sizes.front()) {
    fail(ErrorCode::kParse, "normalisation statistics do not match the inputs");
  }
  for (double s : scale) {
    if (!(s > 0)) fail(ErrorCode::kParse, "normalisation scales must be positive");
  }
  m.input_mean = Eigen::Map<VectorXd>(mean.data(), static_cast<Eigen::Index>(mean.size()));
  m.input_scale = Eigen::Map<VectorXd>(scale.data(), static_cast<Eigen::Index>(scale.size()));
  m.target_mean = doc.at("target_mean").get<double>();
  m.target_scale = doc.at("target_scale").get<double>();
  if (!(m.target_scale > 0)) fail(ErrorCode::kParse, "target_scale must be positive");
  if (doc.contains("validation_error") && doc["validation_error"].is_number()) {
    m.validation_error = doc["validation_error"].get<double>();
  }
  m.epochs_trained = doc.value("epochs_trained", 0);
  return m;
}

}  // namespace ews::nn
