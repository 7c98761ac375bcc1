#include "elsa/stats.hpp"

#include <algorithm>
#include <bit>
#include <cmath>

#include "elsa/error.hpp"

namespace elsa {

namespace {

// Midranks of the pooled values (1-based; ties share the average rank).
std::vector<double> midranks(std::vector<double> pooled,
                             std::vector<std::size_t>& order) {
  const std::size_t n = pooled.size();
  order.resize(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return pooled[a] < pooled[b];
  });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && pooled[order[j + 1]] == pooled[order[i]]) ++j;
    const double shared = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = shared;
    i = j + 1;
  }
  return ranks;
}

double u_from_rank_sum(double rank_sum, std::size_t n1) {
  return rank_sum - 0.5 * static_cast<double>(n1) * static_cast<double>(n1 + 1);
}

double median(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

bool has_ties(const std::vector<double>& pooled) {
  std::vector<double> sorted = pooled;
  std::sort(sorted.begin(), sorted.end());
  return std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end();
}

}  // namespace

double mann_whitney_exact_p(const std::vector<double>& a,
                            const std::vector<double>& b) {
  const std::size_t n1 = a.size();
  const std::size_t n2 = b.size();
  const std::size_t n = n1 + n2;
  if (n1 == 0 || n2 == 0) throw EmptySampleError("empty sample");
  if (n > 20) {
    throw CapacityError("exact enumeration limited to 20 pooled values");
  }

  std::vector<double> pooled(a);
  pooled.insert(pooled.end(), b.begin(), b.end());
  std::vector<std::size_t> order;
  const std::vector<double> ranks = midranks(pooled, order);

  double rank_sum = 0.0;
  for (std::size_t i = 0; i < n1; ++i) rank_sum += ranks[i];
  const double u = u_from_rank_sum(rank_sum, n1);
  const double u_min =
      std::min(u, static_cast<double>(n1) * static_cast<double>(n2) - u);

  // Every assignment of the pooled ranks to a group of size n1 is equally
  // likely under the null; count those at least as extreme (lower tail).
  const std::vector<double> sorted_ranks = [&] {
    std::vector<double> r = ranks;
    std::sort(r.begin(), r.end());
    return r;
  }();
  std::uint64_t tail = 0;
  std::uint64_t total = 0;
  const std::uint32_t limit = std::uint32_t{1} << n;
  for (std::uint32_t mask = 0; mask < limit; ++mask) {
    if (static_cast<std::size_t>(std::popcount(mask)) != n1) continue;
    ++total;
    double rs = 0.0;
    for (std::uint32_t m = mask; m != 0; m &= m - 1) {
      rs += sorted_ranks[static_cast<std::size_t>(std::countr_zero(m))];
    }
    if (u_from_rank_sum(rs, n1) <= u_min + 1e-9) ++tail;
  }
  return std::min(1.0, 2.0 * static_cast<double>(tail) /
                           static_cast<double>(total));
}

double mann_whitney_approx_p(double u, const std::vector<double>& a,
                             const std::vector<double>& b) {
  const double n1 = static_cast<double>(a.size());
  const double n2 = static_cast<double>(b.size());
  if (a.empty() || b.empty()) throw EmptySampleError("empty sample");
  const double n = n1 + n2;

  // Tie correction over pooled tie groups.
  std::vector<double> pooled(a);
  pooled.insert(pooled.end(), b.begin(), b.end());
  std::sort(pooled.begin(), pooled.end());
  double tie_term = 0.0;
  std::size_t i = 0;
  while (i < pooled.size()) {
    std::size_t j = i;
    while (j + 1 < pooled.size() && pooled[j + 1] == pooled[i]) ++j;
    const double t = static_cast<double>(j - i + 1);
    tie_term += t * t * t - t;
    i = j + 1;
  }

  const double mu = 0.5 * n1 * n2;
  const double var =
      (n1 * n2 / 12.0) * ((n + 1.0) - tie_term / (n * (n - 1.0)));
  if (var <= 0.0) return 1.0;  // every pooled value identical
  const double z = std::max(0.0, std::abs(u - mu) - 0.5) / std::sqrt(var);
  return std::min(1.0, std::erfc(z / std::sqrt(2.0)));
}

TestResult mann_whitney_u(const std::vector<double>& a,
                          const std::vector<double>& b) {
  if (a.empty() || b.empty()) {
    throw EmptySampleError("Mann-Whitney needs non-empty samples");
  }
  std::vector<double> pooled(a);
  pooled.insert(pooled.end(), b.begin(), b.end());
  std::vector<std::size_t> order;
  const std::vector<double> ranks = midranks(pooled, order);
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) rank_sum += ranks[i];

  TestResult result;
  result.n1 = static_cast<int>(a.size());
  result.n2 = static_cast<int>(b.size());
  result.u_statistic = u_from_rank_sum(rank_sum, a.size());
  if (a.size() + b.size() <= 16 && !has_ties(pooled)) {
    result.method = TestMethod::exact;
    result.p_value = mann_whitney_exact_p(a, b);
  } else {
    result.method = TestMethod::normal_approx;
    result.p_value = mann_whitney_approx_p(result.u_statistic, a, b);
  }
  return result;
}

GroupComparison compare_groups(const FeatureTable& table,
                               const std::string& column) {
  table.validate();
  const Eigen::Index col = table.column(column);
  std::vector<double> low;
  std::vector<double> high;
  for (Eigen::Index i = 0; i < table.rows(); ++i) {
    (table.labels[static_cast<std::size_t>(i)] == 1 ? low : high)
        .push_back(table.x(i, col));
  }
  return compare_pooled(low, high,
                        table.feature_tags[static_cast<std::size_t>(col)],
                        column);
}

GroupComparison compare_pooled(const std::vector<double>& low_values,
                               const std::vector<double>& high_values,
                               const std::string& source,
                               const std::string& metric) {
  if (low_values.empty() || high_values.empty()) {
    throw EmptyGroupError("group comparison needs both groups non-empty (" +
                          source + "/" + metric + ")");
  }
  GroupComparison cmp;
  cmp.source = source;
  cmp.metric = metric;
  cmp.test = mann_whitney_u(low_values, high_values);
  cmp.median_low = median(low_values);
  cmp.median_high = median(high_values);
  return cmp;
}

}  // namespace elsa
