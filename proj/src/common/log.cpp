#include "rio/common/log.hpp"

#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <mutex>
#include <string>

namespace rio::log {
namespace {

Level parse(const char* env) {
    if (env == nullptr) return Level::Off;
    std::string v(env);
    if (v == "error" || v == "1") return Level::Error;
    if (v == "info" || v == "2") return Level::Info;
    if (v == "debug" || v == "3") return Level::Debug;
    if (v == "trace" || v == "4") return Level::Trace;
    return Level::Off;
}

std::atomic<int>& level_storage() {
    static std::atomic<int> level{static_cast<int>(parse(std::getenv("RIO_LOG")))};
    return level;
}

constexpr const char* tag(Level l) {
    switch (l) {
        case Level::Error: return "E";
        case Level::Info: return "I";
        case Level::Debug: return "D";
        case Level::Trace: return "T";
        default: return "?";
    }
}

}  // namespace

Level threshold() { return static_cast<Level>(level_storage().load(std::memory_order_relaxed)); }

void set_threshold(Level level) { level_storage().store(static_cast<int>(level)); }

void write(Level level, std::string_view message) {
    static std::mutex mu;
    std::lock_guard lock(mu);
    std::fprintf(stderr, "[rio %s] %.*s\n", tag(level), static_cast<int>(message.size()), message.data());
}

}  // namespace rio::log
