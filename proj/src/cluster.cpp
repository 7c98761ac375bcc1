#include "elsa/cluster.hpp"

#include <cmath>
#include <limits>
#include <set>

#include "elsa/error.hpp"
#include "elsa/rng.hpp"
#include "elsa/warnings.hpp"

namespace elsa {

namespace {

constexpr int kMaxLloydIterations = 300;

double sq_dist(const Matrix& points, Eigen::Index p, const Matrix& centroids,
               Eigen::Index c) {
  return (points.col(p) - centroids.col(c)).squaredNorm();
}

// Number of distinct columns (exact comparison; z-scoring is deterministic).
int distinct_columns(const Matrix& points) {
  std::set<std::vector<double>> seen;
  for (Eigen::Index j = 0; j < points.cols(); ++j) {
    std::vector<double> col(points.col(j).data(),
                            points.col(j).data() + points.rows());
    seen.insert(std::move(col));
  }
  return static_cast<int>(seen.size());
}

// k-means++ seeding: first centroid uniform, then D^2-weighted picks.
std::vector<Eigen::Index> seed_centroids(const Matrix& points, int k,
                                         Rng& rng) {
  const auto n = points.cols();
  std::vector<Eigen::Index> chosen;
  chosen.push_back(static_cast<Eigen::Index>(
      rng.uniform_int(static_cast<std::uint64_t>(n))));

  Vector d2 = Vector::Constant(n, std::numeric_limits<double>::infinity());
  while (static_cast<int>(chosen.size()) < k) {
    for (Eigen::Index p = 0; p < n; ++p) {
      double d = (points.col(p) - points.col(chosen.back())).squaredNorm();
      if (d < d2[p]) d2[p] = d;
    }
    double total = d2.sum();
    Eigen::Index pick = -1;
    if (total > 0.0) {
      double r = rng.uniform01() * total;
      double cum = 0.0;
      for (Eigen::Index p = 0; p < n; ++p) {
        cum += d2[p];
        if (cum > r) {
          pick = p;
          break;
        }
      }
      if (pick < 0) {  // r landed on the final cumulative boundary
        for (Eigen::Index p = n - 1; p >= 0; --p) {
          if (d2[p] > 0.0) {
            pick = p;
            break;
          }
        }
      }
    } else {
      // All remaining mass is zero (duplicate points); take the first point
      // not already a centroid so the run stays deterministic.
      for (Eigen::Index p = 0; p < n && pick < 0; ++p) {
        bool used = false;
        for (auto c : chosen) used = used || points.col(c) == points.col(p);
        if (!used) pick = p;
      }
      if (pick < 0) pick = 0;
    }
    chosen.push_back(pick);
  }
  return chosen;
}

}  // namespace

Matrix zscore_columns(const Matrix& data) {
  Matrix z = data;
  const double t = static_cast<double>(data.rows());
  for (Eigen::Index j = 0; j < data.cols(); ++j) {
    const double mean = data.col(j).mean();
    z.col(j).array() -= mean;
    const double sd = std::sqrt(z.col(j).squaredNorm() / t);
    if (sd > 0.0) {
      z.col(j) /= sd;
    } else {
      z.col(j).setZero();
    }
  }
  return z;
}

ClusterModel kmeans(const TimeSeriesMatrix& series, int k, std::uint64_t seed) {
  series.validate();
  if (k < 1) throw ValidationError("k must be >= 1, got " + std::to_string(k));

  const Matrix points = zscore_columns(series.data);
  const auto n = points.cols();
  if (k > distinct_columns(points)) {
    throw DegenerateInputError(
        "k = " + std::to_string(k) + " exceeds the " +
        std::to_string(distinct_columns(points)) +
        " distinct channel vectors available");
  }

  Rng rng(seed);
  auto seeds = seed_centroids(points, k, rng);
  Matrix centroids(points.rows(), k);
  for (int c = 0; c < k; ++c) centroids.col(c) = points.col(seeds[c]);

  std::vector<int> assignment(n, -1);
  for (int iter = 0; iter < kMaxLloydIterations; ++iter) {
    // Assignment step; ties go to the lowest cluster index.
    bool changed = false;
    for (Eigen::Index p = 0; p < n; ++p) {
      int best = 0;
      double best_d = sq_dist(points, p, centroids, 0);
      for (int c = 1; c < k; ++c) {
        double d = sq_dist(points, p, centroids, c);
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      if (assignment[p] != best) {
        assignment[p] = best;
        changed = true;
      }
    }

    // Repair empty clusters with the point farthest from its own centroid,
    // never draining a cluster below one member.
    std::vector<int> count(k, 0);
    for (auto a : assignment) ++count[a];
    for (int c = 0; c < k; ++c) {
      if (count[c] > 0) continue;
      Eigen::Index worst = -1;
      double worst_d = -1.0;
      for (Eigen::Index p = 0; p < n; ++p) {
        if (count[assignment[p]] < 2) continue;
        double d = sq_dist(points, p, centroids, assignment[p]);
        if (d > worst_d) {
          worst_d = d;
          worst = p;
        }
      }
      if (worst < 0) throw DegenerateInputError("cannot repair empty cluster");
      --count[assignment[worst]];
      assignment[worst] = c;
      ++count[c];
      changed = true;
    }

    // Update step.
    centroids.setZero();
    for (Eigen::Index p = 0; p < n; ++p) centroids.col(assignment[p]) += points.col(p);
    for (int c = 0; c < k; ++c) centroids.col(c) /= static_cast<double>(count[c]);

    if (!changed && iter > 0) break;
  }

  ClusterModel model;
  model.n_clusters = k;
  model.assignment = assignment;
  model.centroids = centroids;
  model.wcss = 0.0;
  for (Eigen::Index p = 0; p < n; ++p) {
    model.wcss += sq_dist(points, p, centroids, assignment[p]);
  }
  model.cluster_series = cluster_mean_series(series, model);
  return model;
}

ClusterModel kmeans_best(const TimeSeriesMatrix& series, int k,
                         std::uint64_t seed, int restarts) {
  if (restarts < 1) throw ValidationError("restarts must be >= 1");
  ClusterModel best;
  for (int r = 0; r < restarts; ++r) {
    ClusterModel run = kmeans(series, k, derive_seed(seed, "kmeans", k, r));
    if (r == 0 || run.wcss < best.wcss) best = std::move(run);
  }
  return best;
}

int elbow_from_curve(const std::vector<double>& curve, int k_lo) {
  if (curve.size() < 3) {
    throw ValidationError("elbow rule needs at least 3 wcss points, got " +
                          std::to_string(curve.size()));
  }
  int best_i = 1;
  double best_dd = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 1; i + 1 < curve.size(); ++i) {
    double dd = curve[i - 1] - 2.0 * curve[i] + curve[i + 1];
    if (dd > best_dd) {
      best_dd = dd;
      best_i = static_cast<int>(i);
    }
  }
  return k_lo + best_i;
}

ElbowResult select_k_elbow(const TimeSeriesMatrix& series, KRange range,
                           std::uint64_t seed, int restarts) {
  if (range.lo < 1 || range.hi < range.lo) {
    throw ValidationError("bad cluster-count range [" +
                          std::to_string(range.lo) + ", " +
                          std::to_string(range.hi) + "]");
  }
  const int distinct = distinct_columns(zscore_columns(series.data));
  int hi = range.hi;
  if (hi > distinct) {
    emit_warning("cluster-count ceiling lowered to " + std::to_string(distinct) +
                 " (distinct channel vectors)");
    hi = distinct;
  }
  if (range.lo > hi) {
    throw DegenerateInputError("fewer distinct channel vectors than the "
                               "minimum cluster count");
  }

  ElbowResult result;
  for (int k = range.lo; k <= hi; ++k) {
    result.wcss_curve.push_back(kmeans_best(series, k, seed, restarts).wcss);
  }
  if (result.wcss_curve.size() < 3) {
    // Not enough points for a second difference; smallest k is the only
    // defensible deterministic choice.
    result.chosen_k = range.lo;
  } else {
    result.chosen_k = elbow_from_curve(result.wcss_curve, range.lo);
  }
  return result;
}

Matrix cluster_mean_series(const TimeSeriesMatrix& series,
                           const ClusterModel& model) {
  if (static_cast<Eigen::Index>(model.assignment.size()) != series.channels()) {
    throw MismatchError("assignment covers " +
                        std::to_string(model.assignment.size()) +
                        " channels, series has " +
                        std::to_string(series.channels()));
  }
  Matrix means = Matrix::Zero(series.timepoints(), model.n_clusters);
  std::vector<int> count(model.n_clusters, 0);
  for (std::size_t p = 0; p < model.assignment.size(); ++p) {
    int c = model.assignment[p];
    if (c < 0 || c >= model.n_clusters) {
      throw MismatchError("assignment index out of range");
    }
    means.col(c) += series.data.col(static_cast<Eigen::Index>(p));
    ++count[c];
  }
  for (int c = 0; c < model.n_clusters; ++c) {
    if (count[c] == 0) throw MismatchError("cluster " + std::to_string(c) +
                                           " has no member channels");
    means.col(c) /= static_cast<double>(count[c]);
  }
  return means;
}

}  // namespace elsa
