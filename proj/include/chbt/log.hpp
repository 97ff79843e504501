#pragma once
// chbt/log.hpp - leveled stderr logging, threshold taken from the CHBT_LOG
// environment variable (error|warn|info|debug). Default is warn.

#include <string>

namespace chbt::log {

enum class Level { error = 0, warn = 1, info = 2, debug = 3 };

Level threshold();
void set_threshold(Level level);

void write(Level level, const std::string& msg);

inline void error(const std::string& msg) { write(Level::error, msg); }
inline void warn(const std::string& msg) { write(Level::warn, msg); }
inline void info(const std::string& msg) { write(Level::info, msg); }
inline void debug(const std::string& msg) { write(Level::debug, msg); }

}  // namespace chbt::log
