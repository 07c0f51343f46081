#pragma once

#include <string_view>

// Leveled stderr logging; the threshold comes from SPDNAS_LOG
// (error | info | debug, default info).
namespace spdnas::log {

enum class Level { kError = 0, kInfo = 1, kDebug = 2 };

Level threshold();
// Overrides the environment (tests, CLI flags).
void set_threshold(Level level);
bool enabled(Level level);
void write(Level level, std::string_view msg);

inline void error(std::string_view msg) { write(Level::kError, msg); }
inline void info(std::string_view msg) { write(Level::kInfo, msg); }
inline void debug(std::string_view msg) { write(Level::kDebug, msg); }

}  // namespace spdnas::log
