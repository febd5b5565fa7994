#pragma once

#include <cstdlib>
#include <iostream>
#include <string>

namespace mmgrpo {

enum class LogLevel { quiet = 0, warn = 1, info = 2, debug = 3 };

// Read once from MMGRPO_LOG (quiet|warn|info|debug); default info.
inline LogLevel log_level() {
  static const LogLevel level = [] {
    const char* env = std::getenv("MMGRPO_LOG");
    if (!env) return LogLevel::info;
    const std::string v(env);
    if (v == "quiet") return LogLevel::quiet;
    if (v == "warn") return LogLevel::warn;
    if (v == "debug") return LogLevel::debug;
    return LogLevel::info;
  }();
  return level;
}

inline void log_warn(const std::string& message) {
  if (log_level() >= LogLevel::warn) std::cerr << "warning: " << message << "\n";
}

inline void log_info(const std::string& message) {
  if (log_level() >= LogLevel::info) std::cerr << message << "\n";
}

inline void log_debug(const std::string& message) {
  if (log_level() >= LogLevel::debug) std::cerr << message << "\n";
}

}  // namespace mmgrpo
