#include "elsa/ingest.hpp"

#include <algorithm>
#include <filesystem>
#include <set>
#include <sstream>

#include "elsa/error.hpp"
#include "elsa/io.hpp"

namespace elsa {

namespace {

std::vector<std::vector<std::string>> read_table(const std::string& path,
                                                 std::size_t min_lines) {
  auto lines = io::read_lines(path);
  while (!lines.empty() && lines.back().empty()) lines.pop_back();
  if (lines.size() < min_lines) {
    throw ValidationError(path + ": expected at least " +
                          std::to_string(min_lines) + " lines, got " +
                          std::to_string(lines.size()));
  }
  char delim = io::sniff_delimiter(lines.front());
  std::vector<std::vector<std::string>> rows;
  rows.reserve(lines.size());
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].empty()) {
      throw ValidationError(path + ":" + std::to_string(i + 1) +
                            ": blank line inside table");
    }
    rows.push_back(io::split(lines[i], delim));
    if (rows.back().size() != rows.front().size()) {
      throw ValidationError(path + ":" + std::to_string(i + 1) + ": expected " +
                            std::to_string(rows.front().size()) +
                            " cells, got " + std::to_string(rows.back().size()));
    }
  }
  return rows;
}

}  // namespace

TimeSeriesMatrix load_matrix(const std::string& path, Layout layout) {
  auto rows = read_table(path, 2);
  TimeSeriesMatrix series;

  if (layout == Layout::time_rows) {
    series.channel_names = rows.front();
    const auto t = static_cast<Eigen::Index>(rows.size() - 1);
    const auto r = static_cast<Eigen::Index>(rows.front().size());
    series.data.resize(t, r);
    for (Eigen::Index i = 0; i < t; ++i) {
      for (Eigen::Index j = 0; j < r; ++j) {
        series.data(i, j) = io::parse_double(
            rows[i + 1][j], path + ":" + std::to_string(i + 2));
      }
    }
  } else {
    // One row per channel, leading name cell; header line carries no names.
    const auto r = static_cast<Eigen::Index>(rows.size() - 1);
    const auto t = static_cast<Eigen::Index>(rows.front().size() - 1);
    if (t < 1) throw ValidationError(path + ": channel rows carry no samples");
    series.data.resize(t, r);
    for (Eigen::Index j = 0; j < r; ++j) {
      series.channel_names.push_back(rows[j + 1][0]);
      for (Eigen::Index i = 0; i < t; ++i) {
        series.data(i, j) = io::parse_double(
            rows[j + 1][i + 1], path + ":" + std::to_string(j + 2));
      }
    }
  }

  series.validate();
  if (series.channels() < 2) {
    throw ValidationError(path + ": need at least 2 channels, got " +
                          std::to_string(series.channels()));
  }
  return series;
}

std::string matrix_csv(const TimeSeriesMatrix& series, Layout layout) {
  std::ostringstream out;
  if (layout == Layout::time_rows) {
    for (std::size_t j = 0; j < series.channel_names.size(); ++j) {
      if (j) out << ',';
      out << series.channel_names[j];
    }
    out << '\n';
    for (Eigen::Index i = 0; i < series.data.rows(); ++i) {
      for (Eigen::Index j = 0; j < series.data.cols(); ++j) {
        if (j) out << ',';
        out << io::format_double(series.data(i, j));
      }
      out << '\n';
    }
  } else {
    out << "channel";
    for (Eigen::Index i = 0; i < series.data.rows(); ++i) out << ",t" << i;
    out << '\n';
    for (Eigen::Index j = 0; j < series.data.cols(); ++j) {
      out << series.channel_names[j];
      for (Eigen::Index i = 0; i < series.data.rows(); ++i) {
        out << ',' << io::format_double(series.data(i, j));
      }
      out << '\n';
    }
  }
  return out.str();
}

void write_matrix(const std::string& path, const TimeSeriesMatrix& series,
                  Layout layout) {
  io::write_text(path, matrix_csv(series, layout));
}

std::vector<SubjectRecord> load_manifest(const std::string& path) {
  auto rows = read_table(path, 2);
  const std::vector<std::string> expected{"subject_id", "series_path",
                                          "ssp_pre", "ssp_post"};
  if (rows.front() != expected) {
    throw ValidationError(path + ": manifest header must be "
                          "subject_id,series_path,ssp_pre,ssp_post");
  }

  const auto base = std::filesystem::path(path).parent_path();
  std::vector<SubjectRecord> records;
  std::set<std::string> seen;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& row = rows[i];
    SubjectRecord rec;
    rec.subject_id = row[0];
    if (rec.subject_id.empty()) {
      throw ValidationError(path + ":" + std::to_string(i + 1) +
                            ": empty subject_id");
    }
    // Subject ids become file names downstream; keep them portable.
    for (char c : rec.subject_id) {
      const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') ||
                      (c >= '0' && c <= '9') || c == '_' || c == '-';
      if (!ok) {
        throw ValidationError(path + ": subject_id '" + rec.subject_id +
                              "' may only contain letters, digits, '_', '-'");
      }
    }
    if (!seen.insert(rec.subject_id).second) {
      throw ValidationError(path + ": duplicate subject_id " + rec.subject_id);
    }
    std::filesystem::path series_path(row[1]);
    if (series_path.is_relative()) series_path = base / series_path;
    if (!std::filesystem::exists(series_path)) {
      throw MissingFileError("series file for " + rec.subject_id +
                             " not found: " + series_path.string());
    }
    rec.series = load_matrix(series_path.string(), Layout::time_rows);
    if (!row[2].empty()) {
      rec.ssp_pre = static_cast<int>(io::parse_long(
          row[2], path + ":" + std::to_string(i + 1) + " ssp_pre"));
    }
    rec.ssp_post = static_cast<int>(io::parse_long(
        row[3], path + ":" + std::to_string(i + 1) + " ssp_post"));
    rec.wm_label = wm_label_from_ssp(rec.ssp_post);
    records.push_back(std::move(rec));
  }

  std::sort(records.begin(), records.end(),
            [](const SubjectRecord& a, const SubjectRecord& b) {
              return a.subject_id < b.subject_id;
            });
  return records;
}

AtlasMapping load_atlas(const std::string& path,
                        const TimeSeriesMatrix& series) {
  auto rows = read_table(path, 2);
  if (rows.front().size() != 2) {
    throw ValidationError(path + ": atlas rows must be channel_name,network");
  }
  AtlasMapping atlas;
  std::set<std::string> seen;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& name = rows[i][0];
    if (!series.channel_index(name)) {
      throw ValidationError(path + ": atlas channel '" + name +
                            "' not present in the series");
    }
    if (!seen.insert(name).second) {
      throw ValidationError(path + ": duplicate atlas channel " + name);
    }
    atlas.entries.emplace_back(name, parse_network(rows[i][1]));
  }
  return atlas;
}

}  // namespace elsa
