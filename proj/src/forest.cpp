#include "elsa/forest.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "elsa/error.hpp"
#include "elsa/rng.hpp"
#include "elsa/stats.hpp"
#include "elsa/warnings.hpp"

namespace elsa {

namespace {

double gini(int n_pos, int n_total) {
  if (n_total == 0) return 0.0;
  const double p = static_cast<double>(n_pos) / static_cast<double>(n_total);
  return 2.0 * p * (1.0 - p);
}

struct Split {
  int feature = -1;
  double threshold = 0.0;
  double decrease = 0.0;
};

class TreeBuilder {
 public:
  TreeBuilder(const Matrix& x, const std::vector<int>& y, int max_depth,
              int mtry, Rng& rng, Vector& importance)
      : x_(x), y_(y), max_depth_(max_depth), mtry_(mtry), rng_(rng),
        importance_(importance) {}

  DecisionTree build(const std::vector<int>& rows) {
    n_root_ = static_cast<double>(rows.size());
    tree_.nodes.clear();
    grow(rows, 0);
    return std::move(tree_);
  }

 private:
  int grow(const std::vector<int>& rows, int depth) {
    const int node_id = static_cast<int>(tree_.nodes.size());
    tree_.nodes.emplace_back();

    int n_pos = 0;
    for (int r : rows) n_pos += y_[static_cast<std::size_t>(r)];
    const int n = static_cast<int>(rows.size());
    // Majority vote; exact ties go to the lower label.
    tree_.nodes[node_id].label = 2 * n_pos > n ? 1 : 0;

    const bool pure = n_pos == 0 || n_pos == n;
    const bool depth_capped = max_depth_ > 0 && depth >= max_depth_;
    if (pure || depth_capped || n < 2) return node_id;

    const Split split = best_split(rows, n_pos);
    if (split.feature < 0) return node_id;

    std::vector<int> left_rows;
    std::vector<int> right_rows;
    for (int r : rows) {
      (x_(r, split.feature) <= split.threshold ? left_rows : right_rows)
          .push_back(r);
    }

    importance_[split.feature] += (n / n_root_) * split.decrease;
    tree_.nodes[node_id].leaf = false;
    tree_.nodes[node_id].feature = split.feature;
    tree_.nodes[node_id].threshold = split.threshold;
    const int left = grow(left_rows, depth + 1);
    const int right = grow(right_rows, depth + 1);
    tree_.nodes[node_id].left = left;
    tree_.nodes[node_id].right = right;
    return node_id;
  }

  // Best Gini-decrease split over a random feature subset. Candidates are
  // scanned in ascending (feature, threshold) order with a strict comparison,
  // so ties always resolve to the lowest indices.
  Split best_split(const std::vector<int>& rows, int n_pos) {
    const int n_features = static_cast<int>(x_.cols());
    std::vector<int> candidates(static_cast<std::size_t>(n_features));
    std::iota(candidates.begin(), candidates.end(), 0);
    const int mtry = std::min(mtry_, n_features);
    for (int i = 0; i < mtry; ++i) {
      const auto j = i + static_cast<int>(rng_.uniform_int(
                             static_cast<std::uint64_t>(n_features - i)));
      std::swap(candidates[static_cast<std::size_t>(i)],
                candidates[static_cast<std::size_t>(j)]);
    }
    candidates.resize(static_cast<std::size_t>(mtry));
    std::sort(candidates.begin(), candidates.end());

    const int n = static_cast<int>(rows.size());
    const double parent = gini(n_pos, n);

    Split best;
    std::vector<std::pair<double, int>> ordered(static_cast<std::size_t>(n));
    for (int feature : candidates) {
      for (std::size_t i = 0; i < ordered.size(); ++i) {
        ordered[i] = {x_(rows[i], feature), y_[static_cast<std::size_t>(rows[i])]};
      }
      std::sort(ordered.begin(), ordered.end(),
                [](const auto& a, const auto& b) { return a.first < b.first; });

      int left_n = 0;
      int left_pos = 0;
      for (int i = 0; i + 1 < n; ++i) {
        ++left_n;
        left_pos += ordered[static_cast<std::size_t>(i)].second;
        if (ordered[static_cast<std::size_t>(i)].first ==
            ordered[static_cast<std::size_t>(i + 1)].first) {
          continue;  // can only cut between distinct values
        }
        const double wl = static_cast<double>(left_n) / n;
        const double decrease = parent -
                                wl * gini(left_pos, left_n) -
                                (1.0 - wl) * gini(n_pos - left_pos, n - left_n);
        if (decrease > best.decrease + 1e-15) {
          best.feature = feature;
          best.threshold = 0.5 * (ordered[static_cast<std::size_t>(i)].first +
                                  ordered[static_cast<std::size_t>(i + 1)].first);
          best.decrease = decrease;
        }
      }
    }
    return best;
  }

  const Matrix& x_;
  const std::vector<int>& y_;
  int max_depth_;
  int mtry_;
  Rng& rng_;
  Vector& importance_;
  DecisionTree tree_;
  double n_root_ = 1.0;
};

int resolve_mtry(int features_per_split, int n_features) {
  if (features_per_split == -1) return n_features;
  if (features_per_split == 0) {
    return std::max(1, static_cast<int>(std::floor(
                           std::sqrt(static_cast<double>(n_features)))));
  }
  if (features_per_split < -1) {
    throw ValidationError("features_per_split must be -1, 0, or positive");
  }
  return std::min(features_per_split, n_features);
}

ForestConfig grid_pick(const FeatureTable& data, const ForestConfig& config,
                       int repetition) {
  static const int kTrees[] = {100, 200, 500};
  static const int kDepths[] = {2, 3, 0};
  ForestConfig best = config;
  best.grid_search = false;
  double best_oob = -2.0;
  int grid_index = 0;
  for (int n_trees : kTrees) {
    for (int max_depth : kDepths) {
      ForestConfig candidate = config;
      candidate.grid_search = false;
      candidate.n_trees = n_trees;
      candidate.max_depth = max_depth;
      candidate.seed = derive_seed(config.seed, "grid", repetition, grid_index);
      ++grid_index;
      const double oob = train_forest(data, candidate).oob_accuracy;
      if (oob > best_oob) {
        best_oob = oob;
        best.n_trees = n_trees;
        best.max_depth = max_depth;
      }
    }
  }
  return best;
}

}  // namespace

int DecisionTree::predict(const Eigen::Ref<const Eigen::RowVectorXd>& row) const {
  int at = 0;
  while (!nodes[static_cast<std::size_t>(at)].leaf) {
    const auto& node = nodes[static_cast<std::size_t>(at)];
    at = row[node.feature] <= node.threshold ? node.left : node.right;
  }
  return nodes[static_cast<std::size_t>(at)].label;
}

int RandomForest::predict(const Eigen::Ref<const Eigen::RowVectorXd>& row) const {
  return predict_proba(row) > 0.5 ? 1 : 0;
}

double RandomForest::predict_proba(
    const Eigen::Ref<const Eigen::RowVectorXd>& row) const {
  int votes = 0;
  for (const auto& tree : trees) votes += tree.predict(row);
  return static_cast<double>(votes) / static_cast<double>(trees.size());
}

RandomForest train_forest(const FeatureTable& data, const ForestConfig& config) {
  data.validate();
  if (config.n_trees < 1) throw ValidationError("n_trees must be positive");
  const int n = static_cast<int>(data.rows());
  const int n_pos = std::accumulate(data.labels.begin(), data.labels.end(), 0);
  if (n_pos == 0 || n_pos == n) {
    throw DegenerateDataError("training data holds a single class");
  }

  const int mtry =
      resolve_mtry(config.features_per_split, static_cast<int>(data.features()));

  RandomForest forest;
  forest.n_features = static_cast<int>(data.features());
  forest.importance = Vector::Zero(data.features());
  forest.trees.reserve(static_cast<std::size_t>(config.n_trees));

  // Out-of-bag vote tally: votes[row] = (positive votes, total votes).
  std::vector<std::pair<int, int>> oob(static_cast<std::size_t>(n), {0, 0});

  for (int t = 0; t < config.n_trees; ++t) {
    Rng rng(derive_seed(config.seed, "tree", t));
    std::vector<int> rows(static_cast<std::size_t>(n));
    std::vector<char> in_bag(static_cast<std::size_t>(n), 0);
    if (config.bootstrap) {
      for (int i = 0; i < n; ++i) {
        const int r = static_cast<int>(rng.uniform_int(
            static_cast<std::uint64_t>(n)));
        rows[static_cast<std::size_t>(i)] = r;
        in_bag[static_cast<std::size_t>(r)] = 1;
      }
    } else {
      std::iota(rows.begin(), rows.end(), 0);
      std::fill(in_bag.begin(), in_bag.end(), 1);
    }

    TreeBuilder builder(data.x, data.labels, config.max_depth, mtry, rng,
                        forest.importance);
    forest.trees.push_back(builder.build(rows));

    if (config.bootstrap) {
      for (int i = 0; i < n; ++i) {
        if (in_bag[static_cast<std::size_t>(i)]) continue;
        auto& [pos, total] = oob[static_cast<std::size_t>(i)];
        pos += forest.trees.back().predict(data.x.row(i));
        ++total;
      }
    }
  }
  forest.importance /= static_cast<double>(config.n_trees);

  if (config.bootstrap) {
    int correct = 0;
    int counted = 0;
    for (int i = 0; i < n; ++i) {
      const auto& [pos, total] = oob[static_cast<std::size_t>(i)];
      if (total == 0) continue;
      ++counted;
      const int vote = 2 * pos > total ? 1 : 0;
      correct += vote == data.labels[static_cast<std::size_t>(i)] ? 1 : 0;
    }
    if (counted > 0) {
      forest.oob_accuracy =
          static_cast<double>(correct) / static_cast<double>(counted);
    }
  }
  return forest;
}

Metrics classification_metrics(const std::vector<Prediction>& predictions) {
  if (predictions.empty()) throw EmptySampleError("no predictions to score");

  int correct = 0;
  int tp = 0;
  int fp = 0;
  int fn = 0;
  std::vector<double> p_pos;
  std::vector<double> p_neg;
  for (const auto& pred : predictions) {
    correct += pred.truth == pred.predicted ? 1 : 0;
    tp += pred.truth == 1 && pred.predicted == 1 ? 1 : 0;
    fp += pred.truth == 0 && pred.predicted == 1 ? 1 : 0;
    fn += pred.truth == 1 && pred.predicted == 0 ? 1 : 0;
    (pred.truth == 1 ? p_pos : p_neg).push_back(pred.probability);
  }
  if (p_pos.empty() || p_neg.empty()) {
    throw UndefinedMetricError("AUC needs both classes among the true labels");
  }

  Metrics m;
  m.accuracy = static_cast<double>(correct) /
               static_cast<double>(predictions.size());

  if (tp + fp == 0) {
    emit_warning("no positive predictions; F1 reported as 0");
    m.f1 = 0.0;
  } else {
    const double precision = static_cast<double>(tp) / (tp + fp);
    const double recall = static_cast<double>(tp) / (tp + fn);
    m.f1 = precision + recall > 0.0
               ? 2.0 * precision * recall / (precision + recall)
               : 0.0;
  }

  // Trapezoidal ROC area equals the midrank two-sample statistic.
  std::vector<double> pooled(p_pos);
  pooled.insert(pooled.end(), p_neg.begin(), p_neg.end());
  std::vector<std::size_t> order(pooled.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return pooled[a] < pooled[b];
  });
  std::vector<double> ranks(pooled.size());
  std::size_t i = 0;
  while (i < pooled.size()) {
    std::size_t j = i;
    while (j + 1 < pooled.size() && pooled[order[j + 1]] == pooled[order[i]]) ++j;
    const double shared = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = shared;
    i = j + 1;
  }
  double rank_sum_pos = 0.0;
  for (std::size_t k = 0; k < p_pos.size(); ++k) rank_sum_pos += ranks[k];
  const double n1 = static_cast<double>(p_pos.size());
  const double n2 = static_cast<double>(p_neg.size());
  m.auc = (rank_sum_pos - 0.5 * n1 * (n1 + 1.0)) / (n1 * n2);
  return m;
}

std::vector<std::pair<int, double>> gini_importance(const RandomForest& forest) {
  std::vector<std::pair<int, double>> ranked;
  ranked.reserve(static_cast<std::size_t>(forest.n_features));
  for (int f = 0; f < forest.n_features; ++f) {
    ranked.emplace_back(f, forest.importance[f]);
  }
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) {
                     return a.second > b.second;
                   });
  return ranked;
}

ClassifierReport loocv(const FeatureTable& data, const ForestConfig& config) {
  data.validate();
  const int n = static_cast<int>(data.rows());
  if (n < 3) throw ValidationError("leave-one-out needs at least 3 rows");
  if (config.n_repetitions < 1) {
    throw ValidationError("n_repetitions must be >= 1");
  }

  ClassifierReport report;
  for (int rep = 0; rep < config.n_repetitions; ++rep) {
    ForestConfig rep_config =
        config.grid_search ? grid_pick(data, config, rep) : config;

    Vector rep_importance = Vector::Zero(data.features());
    std::vector<Prediction> predictions;
    predictions.reserve(static_cast<std::size_t>(n));
    for (int fold = 0; fold < n; ++fold) {
      FeatureTable train;
      train.feature_names = data.feature_names;
      train.feature_tags = data.feature_tags;
      train.x.resize(n - 1, data.features());
      int at = 0;
      for (int i = 0; i < n; ++i) {
        if (i == fold) continue;
        train.subject_ids.push_back(data.subject_ids[static_cast<std::size_t>(i)]);
        train.labels.push_back(data.labels[static_cast<std::size_t>(i)]);
        train.x.row(at++) = data.x.row(i);
      }
      ForestConfig fold_config = rep_config;
      fold_config.seed = derive_seed(config.seed, "rep", rep, "fold", fold);
      const RandomForest forest = train_forest(train, fold_config);
      rep_importance += forest.importance;

      Prediction pred;
      pred.truth = data.labels[static_cast<std::size_t>(fold)];
      pred.probability = forest.predict_proba(data.x.row(fold));
      pred.predicted = pred.probability > 0.5 ? 1 : 0;
      predictions.push_back(pred);
    }
    rep_importance /= static_cast<double>(n);

    report.per_repetition.push_back(classification_metrics(predictions));

    RandomForest summary;
    summary.n_features = static_cast<int>(data.features());
    summary.importance = rep_importance;
    report.importances.push_back(gini_importance(summary));
  }

  for (const auto& m : report.per_repetition) {
    report.mean_accuracy += m.accuracy;
    report.mean_f1 += m.f1;
    report.mean_auc += m.auc;
  }
  const auto reps = static_cast<double>(report.per_repetition.size());
  report.mean_accuracy /= reps;
  report.mean_f1 /= reps;
  report.mean_auc /= reps;

  bool has_high = false;
  bool has_low = false;
  for (const auto& tag : data.feature_tags) {
    (tag == kHighOrderSource ? has_high : has_low) = true;
  }
  if (has_high && has_low && data.features() >= 2) {
    report.top_s_proportions = top_s_contribution(
        report.importances, data.feature_tags, 2,
        std::min<int>(10, static_cast<int>(data.features())));
  }
  return report;
}

std::map<int, TopSProportion> top_s_contribution(
    const std::vector<std::vector<std::pair<int, double>>>& importances,
    const std::vector<std::string>& feature_tags, int s_lo, int s_hi) {
  if (importances.empty()) throw ValidationError("no importance rankings");
  const int n_features = static_cast<int>(feature_tags.size());
  if (s_lo < 1 || s_hi < s_lo) throw ValidationError("bad top-S range");
  if (s_hi > n_features) {
    throw RangeError("top-S upper bound exceeds the feature count");
  }
  bool has_high = false;
  bool has_low = false;
  for (const auto& tag : feature_tags) {
    (tag == kHighOrderSource ? has_high : has_low) = true;
  }
  if (!has_high || !has_low) {
    throw ValidationError("top-S contribution needs both high- and low-order "
                          "features");
  }

  std::map<int, TopSProportion> result;
  for (int s = s_lo; s <= s_hi; ++s) {
    std::vector<double> high_fracs;
    std::vector<double> low_fracs;
    high_fracs.reserve(importances.size());
    for (const auto& ranking : importances) {
      if (static_cast<int>(ranking.size()) < s) {
        throw RangeError("ranking shorter than requested top-S");
      }
      int high = 0;
      for (int i = 0; i < s; ++i) {
        const int feature = ranking[static_cast<std::size_t>(i)].first;
        high += feature_tags[static_cast<std::size_t>(feature)] ==
                        kHighOrderSource
                    ? 1
                    : 0;
      }
      high_fracs.push_back(static_cast<double>(high) / s);
      low_fracs.push_back(1.0 - high_fracs.back());
    }

    TopSProportion prop;
    double mean = 0.0;
    for (double f : high_fracs) mean += f;
    mean /= static_cast<double>(high_fracs.size());
    prop.high_fraction = mean;
    prop.low_fraction = 1.0 - mean;
    if (high_fracs.size() > 1) {
      double ss = 0.0;
      for (double f : high_fracs) ss += (f - mean) * (f - mean);
      const double sample_var = ss / static_cast<double>(high_fracs.size() - 1);
      prop.std_error =
          std::sqrt(sample_var / static_cast<double>(high_fracs.size()));
    }
    prop.p_value = mann_whitney_u(high_fracs, low_fracs).p_value;
    result[s] = prop;
  }
  return result;
}

}  // namespace elsa
