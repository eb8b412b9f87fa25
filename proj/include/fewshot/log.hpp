#pragma once

#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <string>

namespace fewshot {

// Verbosity is controlled by the FEWSHOT_LOG environment variable:
// error | warn | info | debug. Default: info. Output goes to stderr so
// result files stay byte-deterministic.
enum class LogLevel : int { error = 0, warn = 1, info = 2, debug = 3 };

inline LogLevel log_level() {
    static LogLevel level = [] {
        const char* env = std::getenv("FEWSHOT_LOG");
        if (env == nullptr) return LogLevel::info;
        if (std::strcmp(env, "error") == 0) return LogLevel::error;
        if (std::strcmp(env, "warn") == 0) return LogLevel::warn;
        if (std::strcmp(env, "info") == 0) return LogLevel::info;
        if (std::strcmp(env, "debug") == 0) return LogLevel::debug;
        return LogLevel::info;
    }();
    return level;
}

inline void log_message(LogLevel level, const std::string& msg) {
    if (level > log_level()) return;
    static const char* names[] = {"error", "warn", "info", "debug"};
    std::fprintf(stderr, "[fewshot] %s: %s\n",
                 names[static_cast<int>(level)], msg.c_str());
}

inline void log_error(const std::string& msg) { log_message(LogLevel::error, msg); }
inline void log_warn(const std::string& msg) { log_message(LogLevel::warn, msg); }
inline void log_info(const std::string& msg) { log_message(LogLevel::info, msg); }
inline void log_debug(const std::string& msg) { log_message(LogLevel::debug, msg); }

}  // namespace fewshot
