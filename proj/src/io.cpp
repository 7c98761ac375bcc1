#include "elsa/io.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "elsa/error.hpp"

namespace elsa::io {

std::string format_double(double value) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", value);
  return buf;
}

namespace {

// std::from_chars handles "nan"/"inf" but not leading '+' or whitespace,
// which is exactly the strictness we want.
const char* cell_begin(const std::string& cell) { return cell.data(); }
const char* cell_end(const std::string& cell) { return cell.data() + cell.size(); }

}  // namespace

double parse_double(const std::string& cell, const std::string& context) {
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(cell_begin(cell), cell_end(cell), value);
  if (ec != std::errc() || ptr != cell_end(cell) || cell.empty()) {
    throw ParseError("cannot parse '" + cell + "' as a number (" + context + ")");
  }
  return value;
}

long parse_long(const std::string& cell, const std::string& context) {
  long value = 0;
  auto [ptr, ec] = std::from_chars(cell_begin(cell), cell_end(cell), value);
  if (ec != std::errc() || ptr != cell_end(cell) || cell.empty()) {
    throw ParseError("cannot parse '" + cell + "' as an integer (" + context + ")");
  }
  return value;
}

std::vector<std::string> split(const std::string& line, char delim) {
  std::vector<std::string> cells;
  std::string::size_type start = 0;
  while (true) {
    auto pos = line.find(delim, start);
    if (pos == std::string::npos) {
      cells.push_back(line.substr(start));
      break;
    }
    cells.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return cells;
}

char sniff_delimiter(const std::string& header_line) {
  auto count = [&](char c) {
    return std::count(header_line.begin(), header_line.end(), c);
  };
  return count('\t') > count(',') ? '\t' : ',';
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    if (!std::filesystem::exists(path)) {
      throw MissingFileError("no such file: " + path);
    }
    throw IoError("cannot open " + path);
  }
  std::ostringstream buffer;
  buffer << in.rdbuf();
  std::string text = buffer.str();

  std::vector<std::string> lines;
  std::string::size_type start = 0;
  while (start < text.size()) {
    auto pos = text.find('\n', start);
    std::string line = pos == std::string::npos ? text.substr(start)
                                                : text.substr(start, pos - start);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return lines;
}

void write_text(const std::string& path, const std::string& content) {
  std::filesystem::path p(path);
  if (p.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(p.parent_path(), ec);
    if (ec) throw IoError("cannot create directory " + p.parent_path().string());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw IoError("short write to " + path);
}

std::uint64_t content_hash(const std::string& bytes) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::uint64_t file_hash(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return content_hash(buffer.str());
}

}  // namespace elsa::io
