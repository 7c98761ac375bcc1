#pragma once

#include <string>
#include <vector>

#include "elsa/types.hpp"

namespace elsa {

enum class Layout {
  time_rows,    // header row of channel names; one row per timepoint
  channel_rows  // header ignored; one row per channel, leading name column
};

/// Loads a delimited time-series file (comma default, tab accepted, one
/// header line). Channel order is preserved from the file.
/// Throws IoError, ParseError (malformed cell), ValidationError (NaN/Inf,
/// duplicate names, T < 2, R < 2).
TimeSeriesMatrix load_matrix(const std::string& path, Layout layout);

/// Canonical delimited-text form of a matrix (what write_matrix emits);
/// parsing it back reproduces every value bit for bit.
std::string matrix_csv(const TimeSeriesMatrix& series, Layout layout);

/// Writes a matrix in the given layout with full round-trip precision.
void write_matrix(const std::string& path, const TimeSeriesMatrix& series,
                  Layout layout);

/// Loads a subject manifest (header line, then one row per subject:
/// subject_id,series_path,ssp_pre,ssp_post; ssp_pre may be empty).
/// Series paths resolve relative to the manifest's directory and are loaded
/// as time-rows files. Records come back sorted by subject_id.
/// Throws MissingFileError for absent series files and ValidationError for
/// scores outside 2..9.
std::vector<SubjectRecord> load_manifest(const std::string& path);

/// Loads a channel_name,network_name atlas (header line first). Every atlas
/// channel must exist in `series`; unknown network labels are rejected.
AtlasMapping load_atlas(const std::string& path, const TimeSeriesMatrix& series);

}  // namespace elsa
