#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace elsa::io {

/// Formats a double with enough digits to round-trip exactly ("%.17g").
std::string format_double(double value);

/// Locale-independent strict double parse of a whole cell.
/// Throws ParseError naming `context` on malformed input; NaN/Inf parse fine
/// (finiteness is a validation concern, not a parse concern).
double parse_double(const std::string& cell, const std::string& context);

/// Strict integer parse of a whole cell.
long parse_long(const std::string& cell, const std::string& context);

/// One delimited line split into cells. No quoting; fields may not contain
/// the delimiter.
std::vector<std::string> split(const std::string& line, char delim);

/// Picks ',' or '\t' by which occurs more often in the header line
/// (comma wins ties).
char sniff_delimiter(const std::string& header_line);

/// Reads a whole text file into lines (both \n and \r\n accepted).
/// Throws IoError if the file cannot be opened.
std::vector<std::string> read_lines(const std::string& path);

/// Writes text to a file, creating parent directories. Throws IoError.
void write_text(const std::string& path, const std::string& content);

/// FNV-1a over a byte string; used for content-addressed stage caching.
std::uint64_t content_hash(const std::string& bytes);

/// Hash of a file's bytes. Throws IoError if unreadable.
std::uint64_t file_hash(const std::string& path);

}  // namespace elsa::io
