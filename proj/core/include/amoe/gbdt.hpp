#pragma once

#include <memory>
#include <vector>

#include <nlohmann/json.hpp>

#include "amoe/types.hpp"

namespace amoe {

/// Anything that maps a feature matrix to one real prediction per row can act
/// as the anchor; the pipeline only ever talks to this interface.
class PointPredictor {
 public:
  virtual ~PointPredictor() = default;
  virtual Vector predict(const Matrix& x) const = 0;
  virtual Index num_features() const = 0;
};

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  double value = 0.0;

  bool is_leaf() const { return feature < 0; }
};

class RegressionTree {
 public:
  RegressionTree() = default;
  RegressionTree(std::vector<TreeNode> nodes, int max_depth);

  /// Goes left when x[feature] <= threshold.
  double predict_row(const double* row) const;
  const std::vector<TreeNode>& nodes() const { return nodes_; }
  int max_depth() const { return max_depth_; }
  int depth() const;

 private:
  std::vector<TreeNode> nodes_;  // nodes_[0] is the root
  int max_depth_ = 0;
};

struct GbdtConfig {
  int max_stages = 500;
  int max_depth = 3;
  double shrinkage = 0.1;
  int min_leaf = 5;
};

enum class StageCriterion { kValidationRmse, kValidationLogLik };

struct GbdtModel {
  double base_prediction = 0.0;
  double shrinkage = 0.1;
  int max_depth = 3;
  int n_stages = 0;  // trees used by predict(); <= trees.size()
  Index num_features = 0;
  std::vector<RegressionTree> trees;
  /// Training-set residual variance after each stage; used by the
  /// log-likelihood stage criterion.
  std::vector<double> train_mse;
};

/// Least-squares boosting: every stage fits a depth-limited tree to the current
/// residuals by exhaustive variance-reduction splitting over midpoints of
/// consecutive distinct feature values. Boosting stops early once the residuals
/// vanish, so a constant target yields a model with no trees.
GbdtModel fit_gbdt(const Matrix& x, const Vector& y, const GbdtConfig& config);

/// Best split of a single node, exposed for oracle testing.
struct SplitCandidate {
  int feature = -1;
  double threshold = 0.0;
  double sse = 0.0;  // left SSE + right SSE after the split
};
SplitCandidate best_split(const Matrix& x, const Vector& r, const IndexList& rows, int min_leaf);

/// Predictions using the first `stages` trees.
Vector predict_staged(const GbdtModel& model, const Matrix& x, int stages);
Vector predict_anchor(const GbdtModel& model, const Matrix& x);

/// Validation RMSE after each stage t = 1..trees.size().
std::vector<double> staged_rmse(const GbdtModel& model, const Matrix& x_va, const Vector& y_va);

/// argmin over t of the chosen validation criterion, ties to the smaller t.
/// Returns 0 when the model has no trees.
int select_stages(const GbdtModel& model, const Matrix& x_va, const Vector& y_va,
                  StageCriterion criterion = StageCriterion::kValidationRmse);

/// Fits a fresh model with exactly `stages` boosting rounds.
GbdtModel fit_gbdt_stages(const Matrix& x, const Vector& y, const GbdtConfig& config, int stages);

/// True when two models were produced under the same boosting protocol.
bool same_protocol(const GbdtModel& a, const GbdtModel& b);

class GbdtAnchor final : public PointPredictor {
 public:
  explicit GbdtAnchor(GbdtModel model) : model_(std::move(model)) {}
  Vector predict(const Matrix& x) const override { return predict_anchor(model_, x); }
  Index num_features() const override { return model_.num_features; }
  const GbdtModel& model() const { return model_; }

 private:
  GbdtModel model_;
};

nlohmann::json gbdt_to_json(const GbdtModel& model);
GbdtModel gbdt_from_json(const nlohmann::json& j);

}  // namespace amoe
