#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace elsa {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Binary activation matrix, entries in {0,1}.
using StateMatrix = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic>;

/// Integer code of one binary state vector (unit i -> bit i, bit 0 = unit 0).
using StateCode = std::uint32_t;

/// Largest unit count for which the 2^N state space is enumerated exactly.
inline constexpr int kMaxUnits = 20;

/// Source tag used for all high-order (cluster-level) quantities.
inline constexpr const char* kHighOrderSource = "high_order";

// ---------------------------------------------------------------------------
// Raw input types
// ---------------------------------------------------------------------------

/// Multichannel signal matrix: T timepoints by R channels, column per channel.
struct TimeSeriesMatrix {
  std::vector<std::string> channel_names;
  Matrix data;  // T x R

  Eigen::Index timepoints() const { return data.rows(); }
  Eigen::Index channels() const { return data.cols(); }

  /// Throws ValidationError on any broken invariant (size, finiteness,
  /// duplicate names).
  void validate() const;

  /// Column index of a named channel, or nullopt.
  std::optional<Eigen::Index> channel_index(const std::string& name) const;
};

enum class WmLabel { low, high };

/// low iff the postoperative score is in [2,5]; high iff in [6,9].
WmLabel wm_label_from_ssp(int ssp_post);

const char* to_string(WmLabel label);

struct SubjectRecord {
  std::string subject_id;
  TimeSeriesMatrix series;
  std::optional<int> ssp_pre;
  int ssp_post = 0;
  WmLabel wm_label = WmLabel::high;
};

enum class Network { dmn, sn, smn, ln, other };

const char* to_string(Network network);

/// Parses "DMN", "SN", "SMN", "LN", "other" (case-sensitive).
/// Throws ValidationError on anything else.
Network parse_network(const std::string& name);

/// The four canonical resting-state networks, in fixed order.
const std::vector<Network>& canonical_networks();

/// Ordered channel -> network assignments. Order follows the atlas file and
/// determines column order in network selections.
struct AtlasMapping {
  std::vector<std::pair<std::string, Network>> entries;

  /// Member channel names of one network, in atlas order.
  std::vector<std::string> members(Network network) const;
};

}  // namespace elsa
