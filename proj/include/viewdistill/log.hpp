#pragma once

#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <utility>

namespace viewdistill::log {

enum class Level { Error = 0, Warn = 1, Info = 2, Debug = 3 };

// Level comes from VIEWDISTILL_LOG (error|warn|info|debug), read once.
// Unset or unrecognized values mean warnings and errors only.
inline Level threshold() {
  static const Level level = [] {
    const char* env = std::getenv("VIEWDISTILL_LOG");
    if (env == nullptr) return Level::Warn;
    if (std::strcmp(env, "error") == 0) return Level::Error;
    if (std::strcmp(env, "info") == 0) return Level::Info;
    if (std::strcmp(env, "debug") == 0) return Level::Debug;
    return Level::Warn;
  }();
  return level;
}

template <typename... Args>
void emit(Level level, const char* tag, const char* fmt, Args&&... args) {
  if (static_cast<int>(level) > static_cast<int>(threshold())) return;
  std::fprintf(stderr, "[%s] ", tag);
  if constexpr (sizeof...(Args) == 0) {
    std::fputs(fmt, stderr);
  } else {
    std::fprintf(stderr, fmt, std::forward<Args>(args)...);
  }
  std::fputc('\n', stderr);
}

template <typename... Args>
void error(const char* fmt, Args&&... args) {
  emit(Level::Error, "error", fmt, std::forward<Args>(args)...);
}
template <typename... Args>
void warn(const char* fmt, Args&&... args) {
  emit(Level::Warn, "warn", fmt, std::forward<Args>(args)...);
}
template <typename... Args>
void info(const char* fmt, Args&&... args) {
  emit(Level::Info, "info", fmt, std::forward<Args>(args)...);
}
template <typename... Args>
void debug(const char* fmt, Args&&... args) {
  emit(Level::Debug, "debug", fmt, std::forward<Args>(args)...);
}

}  // namespace viewdistill::log
