#include "spdnas/log.hpp"

#include <atomic>
#include <cstdlib>
#include <iostream>
#include <mutex>
#include <string>

namespace spdnas::log {

namespace {

Level from_env() {
  const char* v = std::getenv("SPDNAS_LOG");
  if (!v) return Level::kInfo;
  const std::string s(v);
  if (s == "error") return Level::kError;
  if (s == "debug") return Level::kDebug;
  return Level::kInfo;
}

std::atomic<int>& level_slot() {
  static std::atomic<int> slot{static_cast<int>(from_env())};
  return slot;
}

std::mutex& sink_mutex() {
  static std::mutex m;
  return m;
}

constexpr const char* kNames[] = {"error", "info", "debug"};

}  // namespace

Level threshold() { return static_cast<Level>(level_slot().load()); }

void set_threshold(Level level) { level_slot().store(static_cast<int>(level)); }

bool enabled(Level level) { return static_cast<int>(level) <= level_slot().load(); }

void write(Level level, std::string_view msg) {
  if (!enabled(level)) return;
  std::lock_guard<std::mutex> lock(sink_mutex());
  std::cerr << "[" << kNames[static_cast<int>(level)] << "] " << msg << "\n";
}

}  // namespace spdnas::log
