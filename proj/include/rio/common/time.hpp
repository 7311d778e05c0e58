#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>

namespace rio {

// Logical device/simulation time. Nanosecond resolution keeps link math exact
// enough for microsecond-scale frame serialization delays.
struct SimClock {
    using rep = std::int64_t;
    using period = std::nano;
    using duration = std::chrono::duration<rep, period>;
    using time_point = std::chrono::time_point<SimClock>;
    static constexpr bool is_steady = true;
};

using Duration = SimClock::duration;
using TimePoint = SimClock::time_point;

inline constexpr TimePoint kTimeZero{};

constexpr Duration from_ms(double ms) {
    return Duration{static_cast<std::int64_t>(ms * 1e6 + (ms >= 0 ? 0.5 : -0.5))};
}

constexpr Duration from_seconds(double s) { return from_ms(s * 1e3); }

constexpr double to_ms(Duration d) { return static_cast<double>(d.count()) / 1e6; }

constexpr double to_seconds(Duration d) { return static_cast<double>(d.count()) / 1e9; }

constexpr double to_ms(TimePoint t) { return to_ms(t.time_since_epoch()); }

constexpr double to_seconds(TimePoint t) { return to_seconds(t.time_since_epoch()); }

}  // namespace rio
