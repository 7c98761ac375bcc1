#pragma once

#include <functional>
#include <string>

namespace elsa {

using WarningHandler = std::function<void(const std::string&)>;

/// Replaces the process-wide warning sink. The default writes to stderr.
/// Returns the previous handler so callers can restore it.
WarningHandler set_warning_handler(WarningHandler handler);

/// Reports a non-fatal condition (degenerate column dropped, clamped moment,
/// undefined F1, ...). Thread-safe.
void emit_warning(const std::string& message);

}  // namespace elsa
