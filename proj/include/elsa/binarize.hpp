#pragma once

#include <string>
#include <vector>

#include "elsa/types.hpp"

namespace elsa {

/// Per-timepoint binary activation vectors with integer state codes.
/// Bit order is fixed: unit i -> bit i, bit 0 = first unit (little-endian),
/// so serialized codes are portable.
struct BinaryStateSequence {
  int n_units = 0;
  StateMatrix states;             // T x N, entries in {0,1}
  std::vector<StateCode> codes;   // length T
  Vector activation_ratio;        // per-unit fraction of active samples

  Eigen::Index timepoints() const { return states.rows(); }
};

/// Thresholds each column at its mean: strictly above -> 1, ties -> 0.
/// Throws DegenerateColumnError (with the column index) on a constant
/// column, and CapacityError when N > 20.
BinaryStateSequence binarize_mean(const Matrix& signals);

/// Row -> integer code under the fixed bit order. Entries must be 0/1.
std::vector<StateCode> encode_states(const StateMatrix& states);

/// Inverse of encode_states for one code.
Eigen::RowVectorXi decode_state(StateCode code, int n_units);

/// Builds a BinaryStateSequence from codes alone (states reconstructed).
BinaryStateSequence sequence_from_codes(const std::vector<StateCode>& codes,
                                        int n_units);

/// Columns of the member ROI signals of one canonical network, in atlas
/// order. Feeds the low-order pipeline. Throws ValidationError (fewer than
/// 2 members, channel missing from series) or CapacityError (more than 20).
Matrix select_network_units(const TimeSeriesMatrix& series,
                            const AtlasMapping& atlas, Network network,
                            std::vector<std::string>* member_names = nullptr);

}  // namespace elsa
