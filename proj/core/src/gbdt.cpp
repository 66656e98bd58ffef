#include "amoe/gbdt.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <numeric>

#include "amoe/error.hpp"

namespace amoe {

RegressionTree::RegressionTree(std::vector<TreeNode> nodes, int max_depth)
    : nodes_(std::move(nodes)), max_depth_(max_depth) {}

double RegressionTree::predict_row(const double* row) const {
  if (nodes_.empty()) return 0.0;
  int i = 0;
  while (!nodes_[i].is_leaf()) {
    const TreeNode& n = nodes_[i];
    i = row[n.feature] <= n.threshold ? n.left : n.right;
  }
  return nodes_[i].value;
}

int RegressionTree::depth() const {
  if (nodes_.empty()) return 0;
  std::function<int(int)> rec = [&](int i) -> int {
    const TreeNode& n = nodes_[i];
    return n.is_leaf() ? 0 : 1 + std::max(rec(n.left), rec(n.right));
  };
  return rec(0);
}

namespace {

// Scans one feature's rows in ascending value order. `order` holds the node's
// rows sorted by the feature.
void scan_feature(const Matrix& x, const Vector& r, const IndexList& order, int feature, int min_leaf,
                  double total_sum, double& best_gain, SplitCandidate& best) {
  const auto n = static_cast<Index>(order.size());
  double left_sum = 0.0;
  for (Index i = 0; i + 1 < n; ++i) {
    const Index row = order[static_cast<std::size_t>(i)];
    left_sum += r(row);
    const Index n_left = i + 1;
    const Index n_right = n - n_left;
    if (n_left < min_leaf) continue;
    if (n_right < min_leaf) break;
    const double v = x(row, feature);
    const double v_next = x(order[static_cast<std::size_t>(i + 1)], feature);
    if (!(v < v_next)) continue;
    const double right_sum = total_sum - left_sum;
    const double gain = left_sum * left_sum / static_cast<double>(n_left) +
                        right_sum * right_sum / static_cast<double>(n_right);
    if (gain > best_gain) {
      best_gain = gain;
      double mid = 0.5 * (v + v_next);
      if (!(mid < v_next)) mid = v;
      best.feature = feature;
      best.threshold = mid;
    }
  }
}

struct TreeBuilder {
  const Matrix& x;
  const Vector& r;
  const std::vector<IndexList>& presorted;  // all rows, sorted per feature
  const GbdtConfig& config;
  std::vector<int>& node_of;  // row -> node id currently holding it
  std::vector<TreeNode> nodes;

  double node_mean(const IndexList& rows) const {
    double s = 0.0;
    for (Index i : rows) s += r(i);
    return s / static_cast<double>(rows.size());
  }

  SplitCandidate split(int node_id, const IndexList& rows, double& gain_out) const {
    double total = 0.0;
    for (Index i : rows) total += r(i);
    const double parent_gain = total * total / static_cast<double>(rows.size());
    double best_gain = parent_gain;
    SplitCandidate best;
    IndexList order;
    order.reserve(rows.size());
    for (int f = 0; f < static_cast<int>(x.cols()); ++f) {
      order.clear();
      for (Index i : presorted[static_cast<std::size_t>(f)])
        if (node_of[static_cast<std::size_t>(i)] == node_id) order.push_back(i);
      scan_feature(x, r, order, f, config.min_leaf, total, best_gain, best);
    }
    // Require a strict improvement beyond rounding noise.
    double sumsq = 0.0;
    for (Index i : rows) sumsq += r(i) * r(i);
    if (best.feature >= 0 && best_gain - parent_gain <= 1e-12 * (sumsq + 1e-300)) best.feature = -1;
    best.sse = sumsq - best_gain;
    gain_out = best_gain - parent_gain;
    return best;
  }

  int build(const IndexList& rows, int depth) {
    const int id = static_cast<int>(nodes.size());
    nodes.emplace_back();
    for (Index i : rows) node_of[static_cast<std::size_t>(i)] = id;
    nodes[id].value = node_mean(rows);
    if (depth >= config.max_depth || static_cast<Index>(rows.size()) < 2 * config.min_leaf) return id;
    double gain = 0.0;
    const SplitCandidate s = split(id, rows, gain);
    if (s.feature < 0) return id;
    IndexList left, right;
    for (Index i : rows) (x(i, s.feature) <= s.threshold ? left : right).push_back(i);
    nodes[id].feature = s.feature;
    nodes[id].threshold = s.threshold;
    const int l = build(left, depth + 1);
    const int rr = build(right, depth + 1);
    nodes[id].left = l;
    nodes[id].right = rr;
    return id;
  }
};

std::vector<IndexList> presort(const Matrix& x) {
  std::vector<IndexList> out(static_cast<std::size_t>(x.cols()));
  for (Index f = 0; f < x.cols(); ++f) {
    IndexList idx(static_cast<std::size_t>(x.rows()));
    std::iota(idx.begin(), idx.end(), Index{0});
    std::stable_sort(idx.begin(), idx.end(), [&](Index a, Index b) { return x(a, f) < x(b, f); });
    out[static_cast<std::size_t>(f)] = std::move(idx);
  }
  return out;
}

void check_config(const GbdtConfig& c) {
  if (c.max_stages < 0 || c.max_depth < 1 || c.min_leaf < 1 || !(c.shrinkage > 0.0 && c.shrinkage <= 1.0))
    throw UsageError("invalid GBDT configuration");
}

}  // namespace

SplitCandidate best_split(const Matrix& x, const Vector& r, const IndexList& rows, int min_leaf) {
  GbdtConfig cfg;
  cfg.min_leaf = min_leaf;
  std::vector<int> node_of(static_cast<std::size_t>(x.rows()), -1);
  for (Index i : rows) node_of[static_cast<std::size_t>(i)] = 0;
  const auto sorted = presort(x);
  TreeBuilder b{x, r, sorted, cfg, node_of, {}};
  double gain = 0.0;
  return b.split(0, rows, gain);
}

GbdtModel fit_gbdt(const Matrix& x, const Vector& y, const GbdtConfig& config) {
  check_config(config);
  if (x.rows() != y.size()) throw DataError("GBDT feature/target row mismatch");
  if (x.rows() == 0) throw DataError("GBDT needs at least one row");
  if (!x.allFinite() || !y.allFinite()) throw DataError("GBDT inputs must be finite");

  GbdtModel model;
  model.shrinkage = config.shrinkage;
  model.max_depth = config.max_depth;
  model.num_features = x.cols();
  model.base_prediction = y.maxCoeff() == y.minCoeff() ? y(0) : y.mean();

  Vector residual = y.array() - model.base_prediction;
  const auto sorted = presort(x);
  std::vector<int> node_of(static_cast<std::size_t>(x.rows()), -1);
  IndexList all(static_cast<std::size_t>(x.rows()));
  std::iota(all.begin(), all.end(), Index{0});

  for (int stage = 0; stage < config.max_stages; ++stage) {
    if (residual.squaredNorm() == 0.0) break;
    TreeBuilder builder{x, residual, sorted, config, node_of, {}};
    builder.build(all, 0);
    if (builder.nodes.size() == 1) break;  // no admissible split: further stages add nothing
    RegressionTree tree(std::move(builder.nodes), config.max_depth);
    for (Index i = 0; i < x.rows(); ++i) residual(i) -= config.shrinkage * tree.predict_row(x.row(i).data());
    model.trees.push_back(std::move(tree));
    model.train_mse.push_back(residual.squaredNorm() / static_cast<double>(x.rows()));
  }
  model.n_stages = static_cast<int>(model.trees.size());
  return model;
}

GbdtModel fit_gbdt_stages(const Matrix& x, const Vector& y, const GbdtConfig& config, int stages) {
  GbdtConfig c = config;
  c.max_stages = stages;
  return fit_gbdt(x, y, c);
}

Vector predict_staged(const GbdtModel& model, const Matrix& x, int stages) {
  if (x.cols() != model.num_features)
    throw DataError("GBDT expects " + std::to_string(model.num_features) + " features, got " +
                    std::to_string(x.cols()));
  if (stages < 0 || stages > static_cast<int>(model.trees.size())) throw UsageError("stage count out of range");
  Vector out = Vector::Constant(x.rows(), model.base_prediction);
  for (Index i = 0; i < x.rows(); ++i)
    for (int t = 0; t < stages; ++t)
      out(i) += model.shrinkage * model.trees[static_cast<std::size_t>(t)].predict_row(x.row(i).data());
  return out;
}

Vector predict_anchor(const GbdtModel& model, const Matrix& x) { return predict_staged(model, x, model.n_stages); }

std::vector<double> staged_rmse(const GbdtModel& model, const Matrix& x_va, const Vector& y_va) {
  if (x_va.rows() != y_va.size()) throw DataError("validation row mismatch");
  if (x_va.cols() != model.num_features) throw DataError("GBDT feature count mismatch");
  Vector pred = Vector::Constant(x_va.rows(), model.base_prediction);
  std::vector<double> out;
  out.reserve(model.trees.size());
  for (const auto& tree : model.trees) {
    for (Index i = 0; i < x_va.rows(); ++i) pred(i) += model.shrinkage * tree.predict_row(x_va.row(i).data());
    out.push_back(std::sqrt((pred - y_va).squaredNorm() / static_cast<double>(y_va.size())));
  }
  return out;
}

int select_stages(const GbdtModel& model, const Matrix& x_va, const Vector& y_va, StageCriterion criterion) {
  const auto rmse = staged_rmse(model, x_va, y_va);
  if (rmse.empty()) return 0;
  auto score = [&](std::size_t t) {
    if (criterion == StageCriterion::kValidationRmse) return rmse[t];
    // Gaussian validation NLL with the stage's training residual variance.
    const double s2 = std::max(model.train_mse[t], 1e-300);
    return 0.5 * std::log(2.0 * std::numbers::pi * s2) + rmse[t] * rmse[t] / (2.0 * s2);
  };
  std::size_t best = 0;
  double best_score = score(0);
  for (std::size_t t = 1; t < rmse.size(); ++t) {
    const double s = score(t);
    if (s < best_score) {
      best_score = s;
      best = t;
    }
  }
  return static_cast<int>(best) + 1;
}

bool same_protocol(const GbdtModel& a, const GbdtModel& b) {
  return a.n_stages == b.n_stages && a.max_depth == b.max_depth && a.shrinkage == b.shrinkage;
}

nlohmann::json gbdt_to_json(const GbdtModel& m) {
  nlohmann::json trees = nlohmann::json::array();
  for (const auto& t : m.trees) {
    nlohmann::json nodes = nlohmann::json::array();
    for (const auto& n : t.nodes()) {
      if (n.is_leaf())
        nodes.push_back({{"value", n.value}});
      else
        nodes.push_back({{"feature", n.feature}, {"threshold", n.threshold}, {"left", n.left}, {"right", n.right},
                         {"value", n.value}});
    }
    trees.push_back({{"max_depth", t.max_depth()}, {"nodes", nodes}});
  }
  return {{"base_prediction", m.base_prediction}, {"shrinkage", m.shrinkage}, {"max_depth", m.max_depth},
          {"n_stages", m.n_stages},           {"num_features", m.num_features}, {"train_mse", m.train_mse},
          {"trees", trees}};
}

GbdtModel gbdt_from_json(const nlohmann::json& j) {
  GbdtModel m;
  m.base_prediction = j.at("base_prediction").get<double>();
  m.shrinkage = j.at("shrinkage").get<double>();
  m.max_depth = j.at("max_depth").get<int>();
  m.n_stages = j.at("n_stages").get<int>();
  m.num_features = j.at("num_features").get<Index>();
  m.train_mse = j.value("train_mse", std::vector<double>{});
  for (const auto& t : j.at("trees")) {
    std::vector<TreeNode> nodes;
    for (const auto& n : t.at("nodes")) {
      TreeNode node;
      node.value = n.at("value").get<double>();
      if (n.contains("feature")) {
        node.feature = n["feature"].get<int>();
        node.threshold = n["threshold"].get<double>();
        node.left = n["left"].get<int>();
        node.right = n["right"].get<int>();
      }
      nodes.push_back(node);
    }
    m.trees.emplace_back(std::move(nodes), t.at("max_depth").get<int>());
  }
  if (m.n_stages < 0 || m.n_stages > static_cast<int>(m.trees.size())) throw DataError("corrupt GBDT: n_stages");
  return m;
}

}  // namespace amoe
