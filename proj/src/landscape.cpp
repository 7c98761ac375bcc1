#include "elsa/landscape.hpp"

#include <algorithm>
#include <cmath>

#include "elsa/error.hpp"
#include "elsa/warnings.hpp"

namespace elsa {

namespace {

// Population standard deviation (divide by n), matching the documented
// feature convention so hand checks are exact.
std::pair<double, double> mean_and_std(const std::vector<double>& values) {
  const double n = static_cast<double>(values.size());
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= n;
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / n)};
}

Vector interpolate_knots(const std::vector<Extremum>& knots, Eigen::Index t_len) {
  Vector out(t_len);
  // Constant extension before the first and after the last knot.
  for (Eigen::Index t = 0; t <= knots.front().index; ++t) {
    out[t] = knots.front().value;
  }
  for (Eigen::Index t = knots.back().index; t < t_len; ++t) {
    out[t] = knots.back().value;
  }
  for (std::size_t k = 0; k + 1 < knots.size(); ++k) {
    const auto& a = knots[k];
    const auto& b = knots[k + 1];
    const double span = static_cast<double>(b.index - a.index);
    for (Eigen::Index t = a.index; t <= b.index; ++t) {
      const double alpha = static_cast<double>(t - a.index) / span;
      out[t] = a.value + alpha * (b.value - a.value);
    }
  }
  return out;
}

Vector moving_average(const Vector& in, int window) {
  if (window == 1) return in;
  const int r = (window - 1) / 2;
  const Eigen::Index t_len = in.size();
  Vector out(t_len);
  for (Eigen::Index t = 0; t < t_len; ++t) {
    const Eigen::Index lo = std::max<Eigen::Index>(0, t - r);
    const Eigen::Index hi = std::min<Eigen::Index>(t_len - 1, t + r);
    out[t] = in.segment(lo, hi - lo + 1).mean();
  }
  return out;
}

}  // namespace

const std::vector<std::string>& feature_names() {
  static const std::vector<std::string> names{
      "top_mean",     "top_std",     "top_min",    "top_max",
      "bottom_mean",  "bottom_std",  "bottom_min", "bottom_max",
      "n_transitions", "mean_transition_magnitude"};
  return names;
}

EnergySeries energy_series(const MemModel& model, const BinaryStateSequence& seq,
                           const std::string& source) {
  if (model.n_units != seq.n_units) {
    throw MismatchError("model has " + std::to_string(model.n_units) +
                        " units, sequence has " + std::to_string(seq.n_units));
  }
  EnergySeries series;
  series.source = source;
  series.values.resize(static_cast<Eigen::Index>(seq.codes.size()));

  // Amortize over a full energy table when the state space is small relative
  // to the sequence; evaluate per sample otherwise.
  const std::size_t n_states = std::size_t{1} << seq.n_units;
  if (n_states <= std::max<std::size_t>(1024, 4 * seq.codes.size())) {
    const Vector table = state_energies(model);
    for (std::size_t t = 0; t < seq.codes.size(); ++t) {
      series.values[static_cast<Eigen::Index>(t)] =
          table[static_cast<Eigen::Index>(seq.codes[t])];
    }
  } else {
    for (std::size_t t = 0; t < seq.codes.size(); ++t) {
      series.values[static_cast<Eigen::Index>(t)] = energy(model, seq.codes[t]);
    }
  }
  return series;
}

ExtremaSet find_extrema(const EnergySeries& series) {
  const auto& v = series.values;
  const Eigen::Index t_len = v.size();
  if (t_len < 3) {
    throw ValidationError("extrema detection needs at least 3 samples");
  }

  ExtremaSet set;
  Eigen::Index run_start = 0;
  for (Eigen::Index t = 1; t <= t_len; ++t) {
    if (t < t_len && v[t] == v[run_start]) continue;
    // Run [run_start, t-1] of equal values; endpoints never qualify.
    const Eigen::Index run_end = t - 1;
    if (run_start > 0 && run_end < t_len - 1) {
      const double left = v[run_start - 1];
      const double right = v[run_end + 1];
      const double value = v[run_start];
      const Eigen::Index mid = (run_start + run_end) / 2;
      if (value > left && value > right) {
        set.maxima.push_back({mid, value});
      } else if (value < left && value < right) {
        set.minima.push_back({mid, value});
      }
    }
    run_start = t;
  }
  return set;
}

std::pair<Vector, Vector> envelopes(const EnergySeries& series,
                                    const ExtremaSet& extrema,
                                    int smooth_window) {
  const Eigen::Index t_len = series.values.size();
  if (smooth_window < 1 || smooth_window % 2 == 0 ||
      smooth_window > t_len) {
    throw ValidationError("smoothing window must be odd, positive and at most "
                          "the series length");
  }
  if (extrema.maxima.empty() || extrema.minima.empty()) {
    throw EmptyExtremaError("envelope undefined without both maxima and minima");
  }
  Vector upper = moving_average(interpolate_knots(extrema.maxima, t_len),
                                smooth_window);
  Vector lower = moving_average(interpolate_knots(extrema.minima, t_len),
                                smooth_window);
  return {std::move(upper), std::move(lower)};
}

std::pair<std::vector<double>, std::vector<double>> extreme_values(
    const EnergySeries& series, double fraction) {
  if (!(fraction > 0.0 && fraction <= 0.5)) {
    throw RangeError("extreme-value fraction must lie in (0, 0.5]");
  }
  const Eigen::Index t_len = series.values.size();
  if (t_len < 1) throw ValidationError("empty energy series");

  // Guard the ceil against the product landing a hair above an integer.
  const auto count = static_cast<std::size_t>(
      std::ceil(fraction * static_cast<double>(t_len) - 1e-12));

  std::vector<double> sorted(series.values.data(),
                             series.values.data() + t_len);
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> bottom(sorted.begin(), sorted.begin() + count);
  std::vector<double> top(sorted.rbegin(), sorted.rbegin() + count);
  return {std::move(top), std::move(bottom)};
}

std::pair<int, std::vector<double>> transitions(const ExtremaSet& extrema) {
  struct Tagged {
    Eigen::Index index;
    double value;
    bool is_max;
  };
  std::vector<Tagged> merged;
  merged.reserve(extrema.minima.size() + extrema.maxima.size());
  for (const auto& e : extrema.minima) merged.push_back({e.index, e.value, false});
  for (const auto& e : extrema.maxima) merged.push_back({e.index, e.value, true});
  std::sort(merged.begin(), merged.end(),
            [](const Tagged& a, const Tagged& b) { return a.index < b.index; });

  std::vector<double> magnitudes;
  for (std::size_t i = 0; i + 1 < merged.size(); ++i) {
    if (merged[i].is_max != merged[i + 1].is_max) {
      magnitudes.push_back(std::abs(merged[i + 1].value - merged[i].value));
    }
  }
  return {static_cast<int>(magnitudes.size()), std::move(magnitudes)};
}

Vector feature_vector(const EnergySeries& series, double fraction) {
  const auto& v = series.values;
  if (v.size() < 3) {
    throw ValidationError("feature extraction needs at least 3 samples");
  }
  if (v.maxCoeff() == v.minCoeff()) {
    emit_warning("energy series is constant; extreme-value statistics "
                 "degenerate to that constant (source " + series.source + ")");
  }

  auto [top, bottom] = extreme_values(series, fraction);
  auto [n_trans, magnitudes] = transitions(find_extrema(series));

  const auto [top_mean, top_std] = mean_and_std(top);
  const auto [bottom_mean, bottom_std] = mean_and_std(bottom);
  double mean_magnitude = 0.0;
  if (!magnitudes.empty()) {
    for (double m : magnitudes) mean_magnitude += m;
    mean_magnitude /= static_cast<double>(magnitudes.size());
  }

  Vector features(kFeatureCount);
  features << top_mean, top_std, top.back(), top.front(),
      bottom_mean, bottom_std, bottom.front(), bottom.back(),
      static_cast<double>(n_trans), mean_magnitude;
  return features;
}

LandscapeFeatures extract_features(const EnergySeries& series, double fraction,
                                   int smooth_window) {
  LandscapeFeatures out;
  std::tie(out.top, out.bottom) = extreme_values(series, fraction);
  const ExtremaSet extrema = find_extrema(series);
  std::tie(out.n_transitions, out.transition_magnitudes) = transitions(extrema);
  if (!extrema.maxima.empty() && !extrema.minima.empty()) {
    std::tie(out.upper_envelope, out.lower_envelope) =
        envelopes(series, extrema, smooth_window);
  }
  out.feature_vector = feature_vector(series, fraction);
  return out;
}

}  // namespace elsa
