// SPDX-License-Identifier: Apache-2.0
//
// Minimal leveled logging to stderr. The level comes from MODGS_LOG
// (error, info or debug; default info).
#pragma once

#include <cstdlib>
#include <iostream>
#include <string_view>

namespace modgs {

enum class LogLevel { error = 0, info = 1, debug = 2 };

inline LogLevel parse_log_level(std::string_view s) {
    if (s == "error") return LogLevel::error;
    if (s == "debug") return LogLevel::debug;
    return LogLevel::info;
}

inline LogLevel& log_level() {
    static LogLevel level = [] {
        const char* env = std::getenv("MODGS_LOG");
        return env ? parse_log_level(env) : LogLevel::info;
    }();
    return level;
}

inline bool log_enabled(LogLevel l) { return static_cast<int>(l) <= static_cast<int>(log_level()); }

inline void log(LogLevel l, std::string_view msg) {
    if (!log_enabled(l)) return;
    static constexpr std::string_view tags[] = {"error", "info", "debug"};
    std::cerr << "[modgs:" << tags[static_cast<int>(l)] << "] " << msg << '\n';
}

}  // namespace modgs
