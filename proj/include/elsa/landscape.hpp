#pragma once

#include <string>
#include <utility>
#include <vector>

#include "elsa/mem.hpp"
#include "elsa/types.hpp"

namespace elsa {

/// Per-sample energies E(x_t) of one subject under one fitted model.
struct EnergySeries {
  Vector values;       // length T
  std::string source;  // "high_order" or a canonical network name
};

struct Extremum {
  Eigen::Index index = 0;
  double value = 0.0;
};

/// Temporal local extrema after plateau resolution. Indices strictly
/// increase within each list, kinds alternate along the merged timeline,
/// and series endpoints never qualify.
struct ExtremaSet {
  std::vector<Extremum> minima;
  std::vector<Extremum> maxima;
};

inline constexpr double kDefaultExtremeFraction = 0.2;
inline constexpr int kDefaultSmoothWindow = 5;

/// Fixed 10-entry feature layout:
/// [mean, std, min, max of top values; mean, std, min, max of bottom values;
///  n_transitions; mean transition magnitude]. Std is population (divide by n).
inline constexpr int kFeatureCount = 10;

const std::vector<std::string>& feature_names();

struct LandscapeFeatures {
  std::vector<double> top;     // highest ceil(fraction*T) energies, descending
  std::vector<double> bottom;  // lowest ceil(fraction*T) energies, ascending
  int n_transitions = 0;
  std::vector<double> transition_magnitudes;
  Vector upper_envelope;       // empty when either extrema list is empty
  Vector lower_envelope;
  Vector feature_vector;       // length kFeatureCount
};

/// values[t] = energy(model, codes[t]). Throws MismatchError when the model
/// and sequence disagree on N.
EnergySeries energy_series(const MemModel& model, const BinaryStateSequence& seq,
                           const std::string& source = kHighOrderSource);

/// Interior t is a maximum iff strictly above both temporal neighbors
/// (minimum symmetric). Runs of equal values are compared against the values
/// flanking the run and reported at the run's midpoint index.
ExtremaSet find_extrema(const EnergySeries& series);

/// Linear interpolation through the maxima (upper) and minima (lower), with
/// constant extension beyond the first/last extremum, then a centered
/// truncated moving average of width smooth_window (odd; 1 = no smoothing).
/// Throws EmptyExtremaError when either list is empty.
std::pair<Vector, Vector> envelopes(const EnergySeries& series,
                                    const ExtremaSet& extrema,
                                    int smooth_window);

/// The ceil(fraction*T) largest (top, sorted descending) and smallest
/// (bottom, ascending) values; equal values take the earlier index first.
/// Throws RangeError for fraction outside (0, 0.5].
std::pair<std::vector<double>, std::vector<double>> extreme_values(
    const EnergySeries& series, double fraction = kDefaultExtremeFraction);

/// Merges extrema by time and counts adjacent pairs of opposite kind; each
/// magnitude is the absolute energy difference of its pair.
std::pair<int, std::vector<double>> transitions(const ExtremaSet& extrema);

/// Fixed-layout summary vector; no-transition series fill the transition
/// entries with 0. A constant series raises a degenerate-series warning.
Vector feature_vector(const EnergySeries& series,
                      double fraction = kDefaultExtremeFraction);

/// Everything downstream consumers need (features, extreme-value lists for
/// pooled tests, envelopes for plots). Envelopes come back empty instead of
/// throwing when the series has no extrema.
LandscapeFeatures extract_features(const EnergySeries& series,
                                   double fraction = kDefaultExtremeFraction,
                                   int smooth_window = kDefaultSmoothWindow);

}  // namespace elsa
