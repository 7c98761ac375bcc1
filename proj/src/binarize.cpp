#include "elsa/binarize.hpp"

#include "elsa/error.hpp"

namespace elsa {

BinaryStateSequence binarize_mean(const Matrix& signals) {
  if (signals.rows() < 2) {
    throw ValidationError("binarization needs at least 2 timepoints");
  }
  if (signals.cols() < 1) {
    throw ValidationError("binarization needs at least 1 unit");
  }
  if (signals.cols() > kMaxUnits) {
    throw CapacityError("at most " + std::to_string(kMaxUnits) +
                        " units supported, got " +
                        std::to_string(signals.cols()));
  }
  if (!signals.allFinite()) {
    throw ValidationError("signals contain non-finite values");
  }

  BinaryStateSequence seq;
  seq.n_units = static_cast<int>(signals.cols());
  seq.states.resize(signals.rows(), signals.cols());
  for (Eigen::Index j = 0; j < signals.cols(); ++j) {
    const double mean = signals.col(j).mean();
    if (signals.col(j).maxCoeff() == signals.col(j).minCoeff()) {
      throw DegenerateColumnError(
          "unit " + std::to_string(j) + " is constant and cannot be "
          "mean-thresholded", static_cast<int>(j));
    }
    for (Eigen::Index i = 0; i < signals.rows(); ++i) {
      seq.states(i, j) = signals(i, j) > mean ? 1 : 0;
    }
  }
  seq.codes = encode_states(seq.states);
  seq.activation_ratio =
      seq.states.cast<double>().colwise().mean().transpose();
  return seq;
}

std::vector<StateCode> encode_states(const StateMatrix& states) {
  if (states.cols() > kMaxUnits) {
    throw CapacityError("at most " + std::to_string(kMaxUnits) +
                        " units supported");
  }
  std::vector<StateCode> codes(static_cast<std::size_t>(states.rows()));
  for (Eigen::Index i = 0; i < states.rows(); ++i) {
    StateCode code = 0;
    for (Eigen::Index j = 0; j < states.cols(); ++j) {
      const int bit = states(i, j);
      if (bit != 0 && bit != 1) {
        throw ValidationError("state entries must be 0 or 1, got " +
                              std::to_string(bit));
      }
      code |= static_cast<StateCode>(bit) << j;
    }
    codes[static_cast<std::size_t>(i)] = code;
  }
  return codes;
}

Eigen::RowVectorXi decode_state(StateCode code, int n_units) {
  if (n_units < 1 || n_units > kMaxUnits) {
    throw ValidationError("unit count out of range: " + std::to_string(n_units));
  }
  if (n_units < 32 && (code >> n_units) != 0) {
    throw ValidationError("state code " + std::to_string(code) +
                          " does not fit in " + std::to_string(n_units) +
                          " units");
  }
  Eigen::RowVectorXi state(n_units);
  for (int j = 0; j < n_units; ++j) state(j) = (code >> j) & 1u;
  return state;
}

BinaryStateSequence sequence_from_codes(const std::vector<StateCode>& codes,
                                        int n_units) {
  if (codes.empty()) throw ValidationError("empty state-code sequence");
  BinaryStateSequence seq;
  seq.n_units = n_units;
  seq.codes = codes;
  seq.states.resize(static_cast<Eigen::Index>(codes.size()), n_units);
  for (std::size_t i = 0; i < codes.size(); ++i) {
    seq.states.row(static_cast<Eigen::Index>(i)) = decode_state(codes[i], n_units);
  }
  seq.activation_ratio =
      seq.states.cast<double>().colwise().mean().transpose();
  return seq;
}

Matrix select_network_units(const TimeSeriesMatrix& series,
                            const AtlasMapping& atlas, Network network,
                            std::vector<std::string>* member_names) {
  auto members = atlas.members(network);
  if (members.size() < 2) {
    throw ValidationError(std::string("network ") + to_string(network) +
                          " has fewer than 2 member channels");
  }
  if (members.size() > static_cast<std::size_t>(kMaxUnits)) {
    throw CapacityError(std::string("network ") + to_string(network) +
                        " has more than " + std::to_string(kMaxUnits) +
                        " member channels");
  }
  Matrix selection(series.timepoints(),
                   static_cast<Eigen::Index>(members.size()));
  for (std::size_t m = 0; m < members.size(); ++m) {
    auto idx = series.channel_index(members[m]);
    if (!idx) {
      throw ValidationError("atlas channel '" + members[m] +
                            "' not present in the series");
    }
    selection.col(static_cast<Eigen::Index>(m)) = series.data.col(*idx);
  }
  if (member_names) *member_names = members;
  return selection;
}

}  // namespace elsa
