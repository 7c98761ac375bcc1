#pragma once

#include <string>
#include <vector>

#include "elsa/types.hpp"

namespace elsa {

/// Per-subject feature table shared by the statistics and classifier stages.
/// Labels are binary with 1 = low working memory (the positive class).
/// Every feature carries a source tag: "high_order" or a network name.
struct FeatureTable {
  std::vector<std::string> subject_ids;  // one per row
  std::vector<int> labels;               // one per row, in {0,1}
  std::vector<std::string> feature_names;
  std::vector<std::string> feature_tags;
  Matrix x;                              // rows x features

  Eigen::Index rows() const { return x.rows(); }
  Eigen::Index features() const { return x.cols(); }

  /// Column index by name; throws ValidationError if absent.
  Eigen::Index column(const std::string& name) const;

  /// Structural checks: consistent sizes, unique names, binary labels,
  /// finite values. Class balance is the consumers' concern.
  void validate() const;
};

}  // namespace elsa
