#pragma once

#include <fmt/core.h>

#include <string_view>

namespace rio::log {

enum class Level { Off = 0, Error = 1, Info = 2, Debug = 3, Trace = 4 };

// Verbosity comes from RIO_LOG (off|error|info|debug|trace or 0-4), read once.
Level threshold();
void set_threshold(Level level);
void write(Level level, std::string_view message);

template <typename... Args>
void emit(Level level, fmt::format_string<Args...> f, Args&&... args) {
    if (level <= threshold()) write(level, fmt::format(f, std::forward<Args>(args)...));
}

template <typename... Args>
void error(fmt::format_string<Args...> f, Args&&... args) { emit(Level::Error, f, std::forward<Args>(args)...); }
template <typename... Args>
void info(fmt::format_string<Args...> f, Args&&... args) { emit(Level::Info, f, std::forward<Args>(args)...); }
template <typename... Args>
void debug(fmt::format_string<Args...> f, Args&&... args) { emit(Level::Debug, f, std::forward<Args>(args)...); }
template <typename... Args>
void trace(fmt::format_string<Args...> f, Args&&... args) { emit(Level::Trace, f, std::forward<Args>(args)...); }

}  // namespace rio::log
