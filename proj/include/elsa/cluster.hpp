#pragma once

#include <cstdint>
#include <vector>

#include "elsa/types.hpp"

namespace elsa {

/// k-means result. Channels are the clustered objects; each is represented
/// by its z-scored length-T signal vector, so centroids and wcss live in
/// z-scored space. cluster_series holds raw-signal means.
struct ClusterModel {
  int n_clusters = 0;
  std::vector<int> assignment;  // channel index -> cluster index
  Matrix centroids;             // T x N, column per centroid (z-scored space)
  double wcss = 0.0;
  Matrix cluster_series;        // T x N per-cluster mean of raw signals
};

struct KRange {
  int lo = 2;
  int hi = 2;
};

/// Per-channel standardization to mean 0, variance 1 (population variance).
/// Constant columns map to all zeros.
Matrix zscore_columns(const Matrix& data);

/// Lloyd's algorithm with k-means++ seeding, deterministic given seed.
/// Converges to an assignment fixed point or a 300-iteration cap; empty
/// clusters are repaired by moving the point farthest from its centroid.
/// Throws DegenerateInputError when k exceeds the number of distinct
/// (z-scored) channel vectors.
ClusterModel kmeans(const TimeSeriesMatrix& series, int k, std::uint64_t seed);

/// Best of `restarts` seeded kmeans runs by wcss; ties keep the lowest
/// restart index.
ClusterModel kmeans_best(const TimeSeriesMatrix& series, int k,
                         std::uint64_t seed, int restarts);

struct ElbowResult {
  int chosen_k = 0;
  std::vector<double> wcss_curve;  // one entry per k in [range.lo, range.hi]
};

/// Elbow selection rule on a precomputed wcss curve: the interior k
/// maximizing the discrete second difference, ties toward smaller k.
/// curve[i] is the wcss at k = k_lo + i; needs at least 3 points.
int elbow_from_curve(const std::vector<double>& curve, int k_lo);

/// Runs kmeans_best for every k in range and applies the elbow rule.
ElbowResult select_k_elbow(const TimeSeriesMatrix& series, KRange range,
                           std::uint64_t seed, int restarts);

/// Column j = elementwise mean of the raw signals assigned to cluster j.
/// Throws MismatchError when the assignment does not cover the series.
Matrix cluster_mean_series(const TimeSeriesMatrix& series,
                           const ClusterModel& model);

}  // namespace elsa
