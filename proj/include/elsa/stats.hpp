#pragma once

#include <string>
#include <vector>

#include "elsa/dataset.hpp"

namespace elsa {

enum class TestMethod { exact, normal_approx };

struct TestResult {
  double u_statistic = 0.0;  // U of the first sample, from rank sums
  double p_value = 1.0;      // two-tailed
  TestMethod method = TestMethod::normal_approx;
  int n1 = 0;
  int n2 = 0;
};

/// Exact two-tailed p by enumeration of all C(n1+n2, n1) group assignments:
/// p = min(1, 2 * P(U' <= min(U, n1 n2 - U))). Handles ties via midranks.
double mann_whitney_exact_p(const std::vector<double>& a,
                            const std::vector<double>& b);

/// Normal approximation with tie correction and 0.5 continuity correction.
double mann_whitney_approx_p(double u, const std::vector<double>& a,
                             const std::vector<double>& b);

/// Two-tailed Mann-Whitney U test. U comes from rank sums with midranks for
/// ties; the p-value is exact (full enumeration) when n1 + n2 <= 16 and the
/// pooled sample is tie-free, otherwise normal approximation with tie and
/// continuity corrections. Throws EmptySampleError.
TestResult mann_whitney_u(const std::vector<double>& a,
                          const std::vector<double>& b);

struct GroupComparison {
  std::string source;
  std::string metric;
  TestResult test;
  double median_low = 0.0;   // low-WM group median
  double median_high = 0.0;  // high-WM group median
};

/// Splits one feature column by wm_label (low vs high) and applies
/// mann_whitney_u. Throws EmptyGroupError when either group is empty.
GroupComparison compare_groups(const FeatureTable& table,
                               const std::string& column);

/// Mann-Whitney on two explicit per-group value sets (used for the pooled
/// extreme-value comparisons, where each subject contributes many values).
GroupComparison compare_pooled(const std::vector<double>& low_values,
                               const std::vector<double>& high_values,
                               const std::string& source,
                               const std::string& metric);

}  // namespace elsa
