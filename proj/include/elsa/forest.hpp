#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "elsa/dataset.hpp"

namespace elsa {

// Random-forest classifier built from scratch: CART trees on bootstrap
// resamples with Gini-impurity splits over a random feature subset per node.
// Every tie (split, vote, ranking) breaks toward the lowest index so results
// are deterministic given the seed.

struct ForestConfig {
  int n_trees = 100;
  int max_depth = 0;           // 0 = unlimited
  int features_per_split = 0;  // 0 = floor(sqrt(F)), -1 = all, else count
  bool bootstrap = true;
  std::uint64_t seed = 0;
  int n_repetitions = 30;
  /// When set, each LOOCV repetition picks (n_trees, max_depth) from the
  /// grid {100,200,500} x {2,3,unlimited} by out-of-bag accuracy on the full
  /// table before running its folds.
  bool grid_search = false;
};

struct TreeNode {
  bool leaf = true;
  int feature = -1;
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  int label = 0;
};

struct DecisionTree {
  std::vector<TreeNode> nodes;
  int predict(const Eigen::Ref<const Eigen::RowVectorXd>& row) const;
};

struct RandomForest {
  std::vector<DecisionTree> trees;
  int n_features = 0;
  Vector importance;       // mean over trees of node-weighted Gini decrease
  double oob_accuracy = -1.0;  // -1 when bootstrap off or no OOB votes

  int predict(const Eigen::Ref<const Eigen::RowVectorXd>& row) const;
  /// Fraction of trees voting the positive class.
  double predict_proba(const Eigen::Ref<const Eigen::RowVectorXd>& row) const;
};

/// Grows config.n_trees CART trees on bootstrap resamples.
/// Throws DegenerateDataError when the table holds a single class.
RandomForest train_forest(const FeatureTable& data, const ForestConfig& config);

struct Prediction {
  int truth = 0;
  int predicted = 0;
  double probability = 0.0;  // positive-class probability
};

struct Metrics {
  double accuracy = 0.0;
  double f1 = 0.0;
  double auc = 0.0;
};

/// accuracy = fraction correct; F1 for the positive class (0 with a warning
/// when nothing is predicted positive); AUC by trapezoidal ROC, which with
/// midrank tie handling equals the normalized rank-sum statistic.
/// Throws UndefinedMetricError when only one class is present.
Metrics classification_metrics(const std::vector<Prediction>& predictions);

/// Importances ranked descending, ties toward the lower feature index.
std::vector<std::pair<int, double>> gini_importance(const RandomForest& forest);

struct TopSProportion {
  double high_fraction = 0.0;
  double low_fraction = 0.0;
  double std_error = 0.0;  // of the mean high fraction across repetitions
  double p_value = 1.0;    // Mann-Whitney, high vs low fraction distributions
};

struct ClassifierReport {
  std::vector<Metrics> per_repetition;
  double mean_accuracy = 0.0;
  double mean_f1 = 0.0;
  double mean_auc = 0.0;
  /// Per repetition: features ranked by mean Gini importance over that
  /// repetition's fold forests.
  std::vector<std::vector<std::pair<int, double>>> importances;
  std::map<int, TopSProportion> top_s_proportions;  // filled on tagged tables
};

/// Repeated leave-one-out cross-validation: per repetition, every row is
/// held out once (fold forests get repetition- and fold-derived seeds);
/// accuracy/F1 come from hard votes and AUC from the pooled held-out
/// probabilities. Needs at least 3 rows.
ClassifierReport loocv(const FeatureTable& data, const ForestConfig& config);

/// Per S in [s_lo, s_hi]: mean fraction of the top-S features tagged
/// high_order across repetitions, its standard error, and a Mann-Whitney
/// comparison of the high- vs low-order fraction distributions.
/// Throws RangeError when s_hi exceeds the feature count.
std::map<int, TopSProportion> top_s_contribution(
    const std::vector<std::vector<std::pair<int, double>>>& importances,
    const std::vector<std::string>& feature_tags, int s_lo = 2, int s_hi = 10);

}  // namespace elsa
