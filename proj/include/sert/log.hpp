#pragma once

#include <cstdlib>
#include <iostream>
#include <string_view>

namespace sert {

// Verbosity is controlled by the SERT_VERBOSITY environment variable:
// 0 = errors/warnings only, 1 = progress (default), 2 = debug.
inline int verbosity() {
  static const int level = [] {
    const char* env = std::getenv("SERT_VERBOSITY");
    if (!env) return 1;
    return std::atoi(env);
  }();
  return level;
}

inline void log_warn(std::string_view msg) {
  std::cerr << "[warn] " << msg << '\n';
}

inline void log_info(std::string_view msg) {
  if (verbosity() >= 1) std::cerr << "[info] " << msg << '\n';
}

inline void log_debug(std::string_view msg) {
  if (verbosity() >= 2) std::cerr << "[debug] " << msg << '\n';
}

}  // namespace sert
