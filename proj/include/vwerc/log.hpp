#pragma once

#include <cstdlib>
#include <iostream>
#include <string>

namespace vwerc {

enum class LogLevel { Debug = 0, Info = 1, Warn = 2 };

// VWERC_LOG in {debug, info, warn}; defaults to info.
inline LogLevel log_threshold() {
    static const LogLevel level = [] {
        const char* env = std::getenv("VWERC_LOG");
        if (env == nullptr) return LogLevel::Info;
        const std::string v = env;
        if (v == "debug") return LogLevel::Debug;
        if (v == "warn") return LogLevel::Warn;
        return LogLevel::Info;
    }();
    return level;
}

inline void log_line(LogLevel level, const std::string& msg) {
    if (level < log_threshold()) return;
    const char* tag = level == LogLevel::Debug ? "debug" : level == LogLevel::Info ? "info" : "warn";
    std::cerr << "[" << tag << "] " << msg << "\n";
}

inline void log_debug(const std::string& msg) { log_line(LogLevel::Debug, msg); }
inline void log_info(const std::string& msg) { log_line(LogLevel::Info, msg); }
inline void log_warn(const std::string& msg) { log_line(LogLevel::Warn, msg); }

} // namespace vwerc
