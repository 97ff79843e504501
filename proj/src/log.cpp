#include "chbt/log.hpp"

#include <cstdio>
#include <cstdlib>
#include <mutex>
#include <string>

namespace chbt::log {

namespace {

Level parse_env() {
    const char* env = std::getenv("CHBT_LOG");
    if (!env) return Level::warn;
    const std::string v(env);
    if (v == "error") return Level::error;
    if (v == "warn") return Level::warn;
    if (v == "info") return Level::info;
    if (v == "debug") return Level::debug;
    return Level::warn;
}

Level g_threshold = parse_env();
std::mutex g_mutex;

const char* tag(Level level) {
    switch (level) {
        case Level::error: return "error";
        case Level::warn: return "warn";
        case Level::info: return "info";
        case Level::debug: return "debug";
    }
    return "?";
}

}  // namespace

Level threshold() { return g_threshold; }

void set_threshold(Level level) { g_threshold = level; }

void write(Level level, const std::string& msg) {
    if (static_cast<int>(level) > static_cast<int>(g_threshold)) return;
    std::lock_guard<std::mutex> lock(g_mutex);
    std::fprintf(stderr, "[chbt %s] %s\n", tag(level), msg.c_str());
}

}  // namespace chbt::log
