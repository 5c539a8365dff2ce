#pragma once

// Minimal leveled logging to stderr, controlled by MPCOM_LOG
// (error, warn, info, debug; default warn).

#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <string_view>

namespace mpcom::log {

enum class Level { Error = 0, Warn = 1, Info = 2, Debug = 3 };

inline Level level()
{
  static const Level lvl = [] {
    const char * env = std::getenv("MPCOM_LOG");
    if (env == nullptr) { return Level::Warn; }
    if (std::strcmp(env, "error") == 0) { return Level::Error; }
    if (std::strcmp(env, "info") == 0) { return Level::Info; }
    if (std::strcmp(env, "debug") == 0) { return Level::Debug; }
    return Level::Warn;
  }();
  return lvl;
}

inline void emit(Level lvl, const char * tag, std::string_view msg)
{
  if (lvl <= level()) {
    std::fprintf(stderr, "[mpcom %s] %.*s\n", tag, static_cast<int>(msg.size()), msg.data());
  }
}

inline void error(std::string_view msg) { emit(Level::Error, "error", msg); }
inline void warn(std::string_view msg) { emit(Level::Warn, "warn", msg); }
inline void info(std::string_view msg) { emit(Level::Info, "info", msg); }
inline void debug(std::string_view msg) { emit(Level::Debug, "debug", msg); }

}  // namespace mpcom::log
