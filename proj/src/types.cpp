#include "elsa/types.hpp"

#include <set>

#include "elsa/error.hpp"

namespace elsa {

void TimeSeriesMatrix::validate() const {
  if (data.rows() < 2) {
    throw ValidationError("time series needs at least 2 timepoints, got " +
                          std::to_string(data.rows()));
  }
  if (data.cols() < 1) {
    throw ValidationError("time series needs at least 1 channel");
  }
  if (static_cast<Eigen::Index>(channel_names.size()) != data.cols()) {
    throw ValidationError("channel name count (" +
                          std::to_string(channel_names.size()) +
                          ") does not match column count (" +
                          std::to_string(data.cols()) + ")");
  }
  std::set<std::string> seen;
  for (const auto& name : channel_names) {
    if (name.empty()) throw ValidationError("empty channel name");
    if (!seen.insert(name).second) {
      throw ValidationError("duplicate channel name: " + name);
    }
  }
  if (!data.allFinite()) {
    throw ValidationError("time series contains non-finite values");
  }
}

std::optional<Eigen::Index> TimeSeriesMatrix::channel_index(
    const std::string& name) const {
  for (std::size_t i = 0; i < channel_names.size(); ++i) {
    if (channel_names[i] == name) return static_cast<Eigen::Index>(i);
  }
  return std::nullopt;
}

WmLabel wm_label_from_ssp(int ssp_post) {
  if (ssp_post >= 2 && ssp_post <= 5) return WmLabel::low;
  if (ssp_post >= 6 && ssp_post <= 9) return WmLabel::high;
  throw ValidationError("span score " + std::to_string(ssp_post) +
                        " outside the labelable range [2,9]");
}

const char* to_string(WmLabel label) {
  return label == WmLabel::low ? "low" : "high";
}

const char* to_string(Network network) {
  switch (network) {
    case Network::dmn: return "DMN";
    case Network::sn: return "SN";
    case Network::smn: return "SMN";
    case Network::ln: return "LN";
    case Network::other: return "other";
  }
  return "other";
}

Network parse_network(const std::string& name) {
  if (name == "DMN") return Network::dmn;
  if (name == "SN") return Network::sn;
  if (name == "SMN") return Network::smn;
  if (name == "LN") return Network::ln;
  if (name == "other") return Network::other;
  throw ValidationError("unknown network label: " + name);
}

const std::vector<Network>& canonical_networks() {
  static const std::vector<Network> networks{Network::dmn, Network::sn,
                                             Network::smn, Network::ln};
  return networks;
}

std::vector<std::string> AtlasMapping::members(Network network) const {
  std::vector<std::string> names;
  for (const auto& [channel, assigned] : entries) {
    if (assigned == network) names.push_back(channel);
  }
  return names;
}

}  // namespace elsa
