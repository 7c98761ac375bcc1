#include "elsa/warnings.hpp"

#include <iostream>
#include <mutex>
#include <utility>

namespace elsa {
namespace {

std::mutex g_mutex;
WarningHandler g_handler;  // empty = default stderr sink

}  // namespace

WarningHandler set_warning_handler(WarningHandler handler) {
  std::lock_guard<std::mutex> lock(g_mutex);
  std::swap(g_handler, handler);
  return handler;  // previous handler
}

void emit_warning(const std::string& message) {
  WarningHandler handler;
  {
    std::lock_guard<std::mutex> lock(g_mutex);
    handler = g_handler;
  }
  if (handler) {
    handler(message);
  } else {
    std::cerr << "warning: " << message << '\n';
  }
}

}  // namespace elsa
