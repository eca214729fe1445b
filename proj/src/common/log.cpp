#include "qavlm/log.hpp"

#include <atomic>
#include <iostream>
#include <mutex>

namespace qavlm::log {

namespace {
std::atomic<Level> g_level{Level::warn};
std::mutex g_mutex;

void emit(Level at, std::string_view tag, std::string_view msg) {
    if (static_cast<int>(g_level.load()) < static_cast<int>(at)) return;
    std::lock_guard lock(g_mutex);
    std::cerr << tag << msg << '\n';
}
}  // namespace

void set_level(Level level) { g_level = level; }
Level level() { return g_level; }

void warn(std::string_view msg) { emit(Level::warn, "warning: ", msg); }
void info(std::string_view msg) { emit(Level::info, "", msg); }
void debug(std::string_view msg) { emit(Level::debug, "debug: ", msg); }

}  // namespace qavlm::log
