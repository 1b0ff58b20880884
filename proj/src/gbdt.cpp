#include "ews/gbdt.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <random>

#include "ews/error.hpp"

namespace ews::gbdt {

using nlohmann::json;

int Tree::leaf_index(std::span<const double> row) const {
  int k = 0;
  while (nodes[static_cast<std::size_t>(k)].feature >= 0) {
    const Node& n = nodes[static_cast<std::size_t>(k)];
    const double v = row[static_cast<std::size_t>(n.feature)];
    const bool left = is_missing(v) ? n.default_left : v <= n.threshold;
    k = left ? n.left : n.right;
  }
  return k;
}

int Tree::num_leaves() const {
  return static_cast<int>(std::count_if(nodes.begin(), nodes.end(), [](const Node& n) { return n.feature < 0; }));
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double log_loss(std::span<const double> p, std::span<const std::int8_t> y) {
  if (p.empty()) return kMissing;
  constexpr double eps = 1e-15;
  double s = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double q = std::clamp(p[i], eps, 1.0 - eps);
    s -= y[i] ? std::log(q) : std::log(1.0 - q);
  }
  return s / static_cast<double>(p.size());
}

namespace {

constexpr std::uint32_t kMissingBin = 0xFFFFFFFFu;

struct Binned {
  std::size_t n = 0, d = 0;
  std::vector<std::vector<double>> edges;  // per feature, ascending
  std::vector<std::uint32_t> bins;         // column-major

  std::uint32_t bin(std::size_t f, std::size_t r) const { return bins[f * n + r]; }
  std::size_t n_bins(std::size_t f) const { return edges[f].size() + 1; }
};

double midpoint(double a, double b) {
  const double m = a + (b - a) / 2.0;
  return m < b ? m : a;
}

Binned bin_features(const feat::FeatureMatrix& m, int max_bins) {
  Binned b;
  b.n = m.rows();
  b.d = m.cols();
  b.edges.resize(b.d);
  b.bins.assign(b.n * b.d, kMissingBin);
  std::vector<double> col;
  for (std::size_t f = 0; f < b.d; ++f) {
    col.clear();
    for (std::size_t r = 0; r < b.n; ++r) {
      const double v = m.at(r, f);
      if (!is_missing(v)) col.push_back(v);
    }
    std::sort(col.begin(), col.end());
    std::vector<double> distinct;
    std::vector<std::size_t> counts;
    for (double v : col) {
      if (distinct.empty() || v != distinct.back()) {
        distinct.push_back(v);
        counts.push_back(0);
      }
      ++counts.back();
    }
    auto& e = b.edges[f];
    if (max_bins <= 0 || distinct.size() <= static_cast<std::size_t>(max_bins)) {
      for (std::size_t k = 0; k + 1 < distinct.size(); ++k) e.push_back(midpoint(distinct[k], distinct[k + 1]));
    } else {
      // Cut at (count-weighted) quantiles of the distinct values.
      const double per_bin = static_cast<double>(col.size()) / max_bins;
      double acc = 0, next_cut = per_bin;
      for (std::size_t k = 0; k + 1 < distinct.size(); ++k) {
        acc += static_cast<double>(counts[k]);
        if (acc >= next_cut) {
          e.push_back(midpoint(distinct[k], distinct[k + 1]));
          while (next_cut <= acc) next_cut += per_bin;
        }
      }
    }
    for (std::size_t r = 0; r < b.n; ++r) {
      const double v = m.at(r, f);
      if (is_missing(v)) continue;
      b.bins[f * b.n + r] = static_cast<std::uint32_t>(std::lower_bound(e.begin(), e.end(), v) - e.begin());
    }
  }
  return b;
}

struct Stat {
  double g = 0, h = 0;
  std::uint32_t n = 0;

  void add(double gi, double hi) { g += gi; h += hi; ++n; }
  Stat& operator+=(const Stat& o) { g += o.g; h += o.h; n += o.n; return *this; }
  Stat& operator-=(const Stat& o) { g -= o.g; h -= o.h; n -= o.n; return *this; }
};

struct Split {
  int feature = -1;
  std::uint32_t bin = 0;  // left iff bin <= this
  bool default_left = true;
  double gain = 0.0;
  Stat left, right;
};

struct Context {
  const Binned& data;
  const std::vector<double>& g;
  const std::vector<double>& h;
  const GbdtParams& params;
  bool dense;
};

// Dense histogram: per feature n_bins slots plus one missing slot.
struct Histogram {
  std::vector<std::size_t> offset;
  std::vector<Stat> slots;
};

Histogram build_histogram(const Context& ctx, const std::vector<std::uint32_t>& rows) {
  Histogram hist;
  hist.offset.resize(ctx.data.d + 1, 0);
  for (std::size_t f = 0; f < ctx.data.d; ++f) hist.offset[f + 1] = hist.offset[f] + ctx.data.n_bins(f) + 1;
  hist.slots.assign(hist.offset.back(), Stat{});
  for (std::size_t f = 0; f < ctx.data.d; ++f) {
    Stat* base = hist.slots.data() + hist.offset[f];
    const std::size_t miss = ctx.data.n_bins(f);
    const std::uint32_t* col = ctx.data.bins.data() + f * ctx.data.n;
    for (auto r : rows) {
      const auto b = col[r];
      base[b == kMissingBin ? miss : b].add(ctx.g[r], ctx.h[r]);
    }
  }
  return hist;
}

double score(const Stat& s, double lambda) { return s.g * s.g / (s.h + lambda); }

// Scans bins in ascending order, trying missing on either side.
template <typename BinIter>
void scan_feature(int f, const Stat& total, const Stat& missing, BinIter&& for_each_bin, const Context& ctx,
                  Split& best) {
  const double lambda = ctx.params.lambda;
  const double parent = score(total, lambda);
  const auto min_child = static_cast<std::uint32_t>(std::max(ctx.params.min_child_samples, 1));
  Stat acc;
  std::uint32_t last_bin = 0;
  bool have_prev = false;
  auto try_split = [&](std::uint32_t split_bin) {
    for (int dir = 0; dir < 2; ++dir) {
      Stat left = acc;
      if (dir == 0) left += missing;
      Stat right = total;
      right -= left;
      if (left.n < min_child || right.n < min_child) continue;
      const double gain = score(left, lambda) + score(right, lambda) - parent;
      if (gain > best.gain) {
        best.feature = f;
        best.bin = split_bin;
        best.default_left = dir == 0;
        best.gain = gain;
        best.left = left;
        best.right = right;
      }
      if (missing.n == 0) break;  // direction irrelevant
    }
  };
  for_each_bin([&](std::uint32_t b, const Stat& s) {
    if (have_prev) try_split(last_bin);
    acc += s;
    last_bin = b;
    have_prev = true;
  });
}

Split find_split(const Context& ctx, const std::vector<std::uint32_t>& rows, const Histogram* hist, const Stat& total) {
  std::vector<Split> per_feature(ctx.data.d);
  auto run = [&](std::size_t f) {
    Split& best = per_feature[f];
    if (ctx.data.edges[f].empty()) return;
    if (hist) {
      const Stat* base = hist->slots.data() + hist->offset[f];
      const std::size_t nb = ctx.data.n_bins(f);
      scan_feature(static_cast<int>(f), total, base[nb],
                   [&](auto&& visit) {
                     for (std::size_t b = 0; b < nb; ++b) {
                       if (base[b].n > 0) visit(static_cast<std::uint32_t>(b), base[b]);
                     }
                   },
                   ctx, best);
    } else {
      std::vector<std::pair<std::uint32_t, std::uint32_t>> present;  // (bin, row)
      Stat missing;
      const std::uint32_t* col = ctx.data.bins.data() + f * ctx.data.n;
      present.reserve(rows.size());
      for (auto r : rows) {
        if (col[r] == kMissingBin) missing.add(ctx.g[r], ctx.h[r]);
        else present.emplace_back(col[r], r);
      }
      std::sort(present.begin(), present.end());
      scan_feature(static_cast<int>(f), total, missing,
                   [&](auto&& visit) {
                     std::size_t i = 0;
                     while (i < present.size()) {
                       Stat s;
                       const auto b = present[i].first;
                       for (; i < present.size() && present[i].first == b; ++i) {
                         s.add(ctx.g[present[i].second], ctx.h[present[i].second]);
                       }
                       visit(b, s);
                     }
                   },
                   ctx, best);
    }
  };
  parallel_for(ctx.data.d, ctx.params.jobs, run);
  Split best;
  for (const auto& s : per_feature) {
    if (s.feature >= 0 && s.gain > best.gain) best = s;  // lowest feature index wins ties
  }
  return best;
}

struct Leaf {
  int node = 0;
  std::vector<std::uint32_t> rows;
  Stat total;
  Histogram hist;
  Split split;
};

// Grows one tree; returns it with raw Newton leaf values -G/(H+lambda) and
// fills leaf_of_row for the training rows.
Tree grow_tree(const Context& ctx, std::vector<std::uint32_t> rows, std::vector<int>& leaf_of_row) {
  Tree tree;
  Leaf root;
  root.rows = std::move(rows);
  for (auto r : root.rows) root.total.add(ctx.g[r], ctx.h[r]);
  tree.nodes.push_back({});
  tree.nodes[0].count = root.total.n;
  if (ctx.dense) root.hist = build_histogram(ctx, root.rows);
  root.split = find_split(ctx, root.rows, ctx.dense ? &root.hist : nullptr, root.total);
  std::vector<Leaf> leaves;
  leaves.push_back(std::move(root));
  const auto max_leaves = static_cast<std::size_t>(std::max(ctx.params.max_leaves, 1));

  while (leaves.size() < max_leaves) {
    std::size_t pick = leaves.size();
    for (std::size_t i = 0; i < leaves.size(); ++i) {
      if (leaves[i].split.feature < 0 || !(leaves[i].split.gain > 0)) continue;
      if (pick == leaves.size() || leaves[i].split.gain > leaves[pick].split.gain) pick = i;
    }
    if (pick == leaves.size()) break;
    Leaf parent = std::move(leaves[pick]);
    leaves.erase(leaves.begin() + static_cast<std::ptrdiff_t>(pick));
    const Split& s = parent.split;
    const auto f = static_cast<std::size_t>(s.feature);
    Leaf left, right;
    for (auto r : parent.rows) {
      const auto b = ctx.data.bin(f, r);
      const bool go_left = b == kMissingBin ? s.default_left : b <= s.bin;
      (go_left ? left.rows : right.rows).push_back(r);
    }
    left.total = s.left;
    right.total = s.right;

    Node& pn = tree.nodes[static_cast<std::size_t>(parent.node)];
    pn.feature = s.feature;
    pn.threshold = ctx.data.edges[f][s.bin];
    pn.default_left = s.default_left;
    pn.gain = s.gain;
    pn.left = static_cast<int>(tree.nodes.size());
    pn.right = pn.left + 1;
    left.node = pn.left;
    right.node = pn.right;
    tree.nodes.push_back({});
    tree.nodes.push_back({});
    tree.nodes[static_cast<std::size_t>(left.node)].count = left.total.n;
    tree.nodes[static_cast<std::size_t>(right.node)].count = right.total.n;

    if (leaves.size() + 2 < max_leaves) {
      if (ctx.dense) {
        Leaf& small = left.rows.size() <= right.rows.size() ? left : right;
        Leaf& large = &small == &left ? right : left;
        small.hist = build_histogram(ctx, small.rows);
        large.hist = std::move(parent.hist);
        for (std::size_t k = 0; k < large.hist.slots.size(); ++k) large.hist.slots[k] -= small.hist.slots[k];
      }
      left.split = find_split(ctx, left.rows, ctx.dense ? &left.hist : nullptr, left.total);
      right.split = find_split(ctx, right.rows, ctx.dense ? &right.hist : nullptr, right.total);
    }
    leaves.push_back(std::move(left));
    leaves.push_back(std::move(right));
  }
  for (auto& l : leaves) {
    Node& n = tree.nodes[static_cast<std::size_t>(l.node)];
    n.value = -l.total.g / (l.total.h + ctx.params.lambda);
    for (auto r : l.rows) leaf_of_row[r] = l.node;
  }
  return tree;
}

void check_labels(const feat::FeatureMatrix& m) {
  if (m.rows() == 0) fail(ErrorCode::kTraining, "empty training matrix");
  bool pos = false, neg = false;
  for (auto y : m.labels) (y ? pos : neg) = true;
  if (!pos || !neg) fail(ErrorCode::kTraining, "training labels contain a single class");
}

}  // namespace

json GbdtParams::to_json() const {
  return json{{"max_trees", max_trees},   {"learning_rate", learning_rate},
              {"max_leaves", max_leaves}, {"min_child_samples", min_child_samples},
              {"lambda", lambda},         {"patience", patience},
              {"max_bins", max_bins}};
}

GbdtParams GbdtParams::from_json(const json& j) {
  GbdtParams p;
  p.max_trees = j.value("max_trees", p.max_trees);
  p.learning_rate = j.value("learning_rate", p.learning_rate);
  p.max_leaves = j.value("max_leaves", p.max_leaves);
  p.min_child_samples = j.value("min_child_samples", p.min_child_samples);
  p.lambda = j.value("lambda", p.lambda);
  p.patience = j.value("patience", p.patience);
  p.max_bins = j.value("max_bins", p.max_bins);
  if (p.max_trees < 0 || !(p.learning_rate > 0) || p.max_leaves < 2 || p.min_child_samples < 1 || p.lambda < 0 ||
      p.patience < 0 || p.max_bins < 0) {
    fail(ErrorCode::kConfig, "invalid GBDT parameters: " + j.dump());
  }
  return p;
}

Ensemble train_gbdt(const feat::FeatureMatrix& train, const feat::FeatureMatrix* valid, const GbdtParams& params,
                    std::uint64_t seed, const std::string& schema_hash) {
  check_labels(train);
  if (valid && valid->columns != train.columns) fail(ErrorCode::kSchema, "validation matrix schema differs from training");
  Ensemble model;
  model.feature_names = train.columns;
  model.schema_hash = schema_hash;
  model.learning_rate = params.learning_rate;
  model.params = params;
  model.seed = seed;

  const std::size_t n = train.rows();
  const double mean = std::accumulate(train.labels.begin(), train.labels.end(), 0.0) / static_cast<double>(n);
  model.base_score = std::log(mean / (1.0 - mean));

  const Binned data = bin_features(train, params.max_bins);
  std::vector<double> raw(n, model.base_score), prob(n), g(n), h(n);
  std::vector<double> vraw, vprob;
  if (valid) vraw.assign(valid->rows(), model.base_score);

  auto eval = [&] {
    for (std::size_t i = 0; i < n; ++i) prob[i] = sigmoid(raw[i]);
    model.train_loss.push_back(log_loss(prob, train.labels));
    if (valid && valid->rows() > 0) {
      vprob.resize(vraw.size());
      for (std::size_t i = 0; i < vraw.size(); ++i) vprob[i] = sigmoid(vraw[i]);
      model.valid_loss.push_back(log_loss(vprob, valid->labels));
    }
  };
  eval();

  Context ctx{data, g, h, params, params.max_bins > 0};
  std::vector<std::uint32_t> all(n);
  std::iota(all.begin(), all.end(), 0u);
  std::vector<int> leaf_of_row(n, 0);
  std::size_t best = 0;
  for (int it = 0; it < params.max_trees; ++it) {
    for (std::size_t i = 0; i < n; ++i) {
      g[i] = prob[i] - train.labels[i];
      h[i] = std::max(prob[i] * (1.0 - prob[i]), 1e-16);
    }
    Tree tree = grow_tree(ctx, all, leaf_of_row);
    for (auto& node : tree.nodes) {
      if (node.feature < 0) node.value *= params.learning_rate;
    }
    for (std::size_t i = 0; i < n; ++i) raw[i] += tree.nodes[static_cast<std::size_t>(leaf_of_row[i])].value;
    if (valid) {
      for (std::size_t i = 0; i < vraw.size(); ++i) vraw[i] += tree.predict(valid->row(i));
    }
    model.trees.push_back(std::move(tree));
    eval();
    if (!model.valid_loss.empty()) {
      const std::size_t k = model.valid_loss.size() - 1;
      if (model.valid_loss[k] < model.valid_loss[best]) best = k;
      if (params.patience > 0 && k - best >= static_cast<std::size_t>(params.patience)) break;
    }
  }
  model.best_iteration = model.valid_loss.empty() ? static_cast<int>(model.trees.size()) : static_cast<int>(best);
  return model;
}

double Ensemble::raw_score(std::span<const double> row, std::size_t n_trees) const {
  double s = base_score;
  const std::size_t k = std::min(n_trees, trees.size());
  for (std::size_t t = 0; t < k; ++t) s += trees[t].predict(row);
  return s;
}

double Ensemble::raw_score(std::span<const double> row) const {
  return raw_score(row, static_cast<std::size_t>(best_iteration));
}

double Ensemble::predict(std::span<const double> row) const {
  if (row.size() != feature_names.size()) fail(ErrorCode::kSchema, "row width does not match the model schema");
  return sigmoid(raw_score(row));
}

std::vector<double> Ensemble::predict(const feat::FeatureMatrix& m) const {
  if (m.columns != feature_names) fail(ErrorCode::kSchema, "feature matrix columns do not match the model schema");
  std::vector<double> out(m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r) out[r] = sigmoid(raw_score(m.row(r)));
  return out;
}

namespace {

json node_to_json(const Tree& t, int k) {
  const Node& n = t.nodes[static_cast<std::size_t>(k)];
  if (n.feature < 0) return json{{"leaf", n.value}, {"count", n.count}};
  return json{{"feature", n.feature}, {"threshold", n.threshold}, {"default_left", n.default_left},
              {"gain", n.gain},       {"count", n.count},         {"left", node_to_json(t, n.left)},
              {"right", node_to_json(t, n.right)}};
}

int node_from_json(const json& j, Tree& t, std::size_t n_features) {
  const int k = static_cast<int>(t.nodes.size());
  t.nodes.push_back({});
  Node n;
  n.count = j.value("count", 0u);
  if (j.contains("leaf")) {
    n.value = j.at("leaf").get<double>();
  } else {
    n.feature = j.at("feature").get<int>();
    if (n.feature < 0 || static_cast<std::size_t>(n.feature) >= n_features) {
      fail(ErrorCode::kSchema, "tree split on feature index outside the schema");
    }
    n.threshold = j.at("threshold").get<double>();
    n.default_left = j.at("default_left").get<bool>();
    n.gain = j.value("gain", 0.0);
    n.left = node_from_json(j.at("left"), t, n_features);
    n.right = node_from_json(j.at("right"), t, n_features);
  }
  t.nodes[static_cast<std::size_t>(k)] = n;
  return k;
}

json tree_to_json(const Tree& t) { return node_to_json(t, 0); }

Tree tree_from_json(const json& j, std::size_t n_features) {
  Tree t;
  node_from_json(j, t, n_features);
  return t;
}

json read_json_file(const std::filesystem::path& path, const char* what) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kMissingArtifact, std::string(what) + " not found: " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    fail(ErrorCode::kParse, path.string() + ": " + e.what());
  }
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::kIo, "cannot write " + path.string());
  out << text << '\n';
}

}  // namespace

json Ensemble::to_json() const {
  json trees_j = json::array();
  for (const auto& t : trees) trees_j.push_back(tree_to_json(t));
  return json{{"format", "ews-gbdt"},
              {"version", 1},
              {"feature_names", feature_names},
              {"schema_hash", schema_hash},
              {"base_score", base_score},
              {"learning_rate", learning_rate},
              {"best_iteration", best_iteration},
              {"seed", seed},
              {"params", params.to_json()},
              {"train_loss", train_loss},
              {"valid_loss", valid_loss},
              {"trees", trees_j}};
}

Ensemble Ensemble::from_json(const json& doc) {
  Ensemble m;
  try {
    if (doc.value("format", "") != "ews-gbdt") fail(ErrorCode::kParse, "not an ews-gbdt model document");
    if (doc.value("version", 0) != 1) fail(ErrorCode::kParse, "unsupported ews-gbdt version");
    m.feature_names = doc.at("feature_names").get<std::vector<std::string>>();
    m.schema_hash = doc.value("schema_hash", "");
    m.base_score = doc.at("base_score").get<double>();
    m.learning_rate = doc.at("learning_rate").get<double>();
    m.best_iteration = doc.at("best_iteration").get<int>();
    m.seed = doc.value("seed", std::uint64_t{0});
    if (doc.contains("params")) m.params = GbdtParams::from_json(doc["params"]);
    m.train_loss = doc.value("train_loss", std::vector<double>{});
    m.valid_loss = doc.value("valid_loss", std::vector<double>{});
    for (const auto& t : doc.at("trees")) m.trees.push_back(tree_from_json(t, m.feature_names.size()));
  } catch (const json::exception& e) {
    fail(ErrorCode::kParse, std::string("ews-gbdt model: ") + e.what());
  }
  if (m.best_iteration < 0 || static_cast<std::size_t>(m.best_iteration) > m.trees.size()) {
    fail(ErrorCode::kParse, "best_iteration outside the tree list");
  }
  return m;
}

void Ensemble::save(const std::filesystem::path& path) const { write_text(path, serialize()); }

Ensemble Ensemble::load(const std::filesystem::path& path) { return from_json(read_json_file(path, "EWS model")); }

SingleTreeModel train_baseline_c(const feat::FeatureMatrix& train, int max_leaves, int min_child_samples) {
  check_labels(train);
  const std::vector<std::string> cols = {kBaselineSpo2Column, kBaselineFio2Column};
  const feat::FeatureMatrix m = train.columns == cols ? train : train.select(cols);
  GbdtParams p;
  p.max_leaves = std::min(max_leaves, 32);
  p.min_child_samples = min_child_samples;
  p.lambda = 1.0;
  const Binned data = bin_features(m, 0);
  const std::size_t n = m.rows();
  const double mean = std::accumulate(m.labels.begin(), m.labels.end(), 0.0) / static_cast<double>(n);
  std::vector<double> g(n), h(n, mean * (1.0 - mean));
  for (std::size_t i = 0; i < n; ++i) g[i] = mean - m.labels[i];
  Context ctx{data, g, h, p, false};
  std::vector<std::uint32_t> all(n);
  std::iota(all.begin(), all.end(), 0u);
  std::vector<int> leaf_of_row(n, 0);
  SingleTreeModel model;
  model.feature_names = cols;
  model.tree = grow_tree(ctx, all, leaf_of_row);
  std::vector<double> pos(model.tree.nodes.size(), 0.0), cnt(model.tree.nodes.size(), 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    pos[static_cast<std::size_t>(leaf_of_row[i])] += m.labels[i];
    cnt[static_cast<std::size_t>(leaf_of_row[i])] += 1.0;
  }
  for (std::size_t k = 0; k < model.tree.nodes.size(); ++k) {
    if (model.tree.nodes[k].feature < 0) model.tree.nodes[k].value = (pos[k] + 1.0) / (cnt[k] + 2.0);
  }
  return model;
}

std::vector<double> SingleTreeModel::predict(const feat::FeatureMatrix& m) const {
  std::vector<std::size_t> idx;
  for (const auto& c : feature_names) idx.push_back(m.column_index(c));
  std::vector<double> out(m.rows());
  std::vector<double> row(idx.size());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t k = 0; k < idx.size(); ++k) row[k] = m.at(r, idx[k]);
    out[r] = tree.predict(row);
  }
  return out;
}

json SingleTreeModel::to_json() const {
  return json{{"format", "ews-single-tree"}, {"version", 1}, {"feature_names", feature_names}, {"tree", tree_to_json(tree)}};
}

SingleTreeModel SingleTreeModel::from_json(const json& doc) {
  SingleTreeModel m;
  try {
    if (doc.value("format", "") != "ews-single-tree") fail(ErrorCode::kParse, "not an ews-single-tree document");
    m.feature_names = doc.at("feature_names").get<std::vector<std::string>>();
    m.tree = tree_from_json(doc.at("tree"), m.feature_names.size());
  } catch (const json::exception& e) {
    fail(ErrorCode::kParse, std::string("ews-single-tree model: ") + e.what());
  }
  return m;
}

void SingleTreeModel::save(const std::filesystem::path& path) const { write_text(path, to_json().dump(1)); }

SingleTreeModel SingleTreeModel::load(const std::filesystem::path& path) {
  return from_json(read_json_file(path, "baseline model"));
}

double baseline_s(double spo2_current, double threshold) {
  if (is_missing(spo2_current)) return 0.0;
  return spo2_current < threshold ? 1.0 : 0.0;
}

namespace {

std::vector<Importance> ranked(const std::vector<std::string>& names, const std::vector<double>& scores) {
  std::vector<Importance> out;
  for (std::size_t i = 0; i < names.size(); ++i) out.push_back({names[i], scores[i]});
  std::stable_sort(out.begin(), out.end(), [](const Importance& a, const Importance& b) { return a.score > b.score; });
  return out;
}

}  // namespace

std::vector<Importance> gain_importance(const Ensemble& model) {
  std::vector<double> s(model.feature_names.size(), 0.0);
  for (std::size_t t = 0; t < static_cast<std::size_t>(model.best_iteration); ++t) {
    for (const auto& n : model.trees[t].nodes) {
      if (n.feature >= 0) s[static_cast<std::size_t>(n.feature)] += n.gain;
    }
  }
  return ranked(model.feature_names, s);
}

std::vector<Importance> permutation_importance(const Ensemble& model, const feat::FeatureMatrix& valid,
                                               std::uint64_t seed, std::size_t max_rows, int jobs) {
  if (valid.columns != model.feature_names) fail(ErrorCode::kSchema, "validation matrix schema differs from the model");
  const std::size_t n = max_rows == 0 ? valid.rows() : std::min(max_rows, valid.rows());
  const std::size_t d = valid.cols();
  std::vector<double> base(n);
  std::span<const std::int8_t> labels(valid.labels.data(), n);
  for (std::size_t r = 0; r < n; ++r) base[r] = sigmoid(model.raw_score(valid.row(r)));
  const double base_loss = log_loss(base, labels);
  std::vector<double> scores(d, 0.0);
  parallel_for(d, jobs, [&](std::size_t f) {
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::mt19937_64 rng(derive_seed(seed, f));
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<double> row(d), p(n);
    for (std::size_t r = 0; r < n; ++r) {
      auto src = valid.row(r);
      std::copy(src.begin(), src.end(), row.begin());
      row[f] = valid.at(perm[r], f);
      p[r] = sigmoid(model.raw_score(row));
    }
    scores[f] = log_loss(p, labels) - base_loss;
  });
  return ranked(model.feature_names, scores);
}

}  // namespace ews::gbdt
