#include "elsa/dataset.hpp"

#include <cmath>
#include <set>

#include "elsa/error.hpp"

namespace elsa {

Eigen::Index FeatureTable::column(const std::string& name) const {
  for (std::size_t j = 0; j < feature_names.size(); ++j) {
    if (feature_names[j] == name) return static_cast<Eigen::Index>(j);
  }
  throw ValidationError("no feature column named " + name);
}

void FeatureTable::validate() const {
  const auto n = x.rows();
  if (static_cast<Eigen::Index>(subject_ids.size()) != n ||
      static_cast<Eigen::Index>(labels.size()) != n) {
    throw ValidationError("feature table row metadata out of sync");
  }
  if (static_cast<Eigen::Index>(feature_names.size()) != x.cols() ||
      static_cast<Eigen::Index>(feature_tags.size()) != x.cols()) {
    throw ValidationError("feature table column metadata out of sync");
  }
  std::set<std::string> names(feature_names.begin(), feature_names.end());
  if (names.size() != feature_names.size()) {
    throw ValidationError("duplicate feature column names");
  }
  for (int label : labels) {
    if (label != 0 && label != 1) {
      throw ValidationError("labels must be 0 or 1");
    }
  }
  if (!x.allFinite()) {
    throw ValidationError("feature table contains non-finite values");
  }
}

}  // namespace elsa
