#pragma once

#include <filesystem>
#include <limits>
#include <optional>
#include <string>
#include <string_view>

#include "rio/common/time.hpp"

namespace rio::wire {

/// Simulated link parameters. Latency is one-way; throughput is in decimal
/// bits per second (1 Mbps = 10^6 b/s). Infinite throughput means no
/// serialization delay.
struct LinkConfig {
    double one_way_latency_ms = 0.0;
    double throughput_bps = std::numeric_limits<double>::infinity();
    double jitter_ms = 0.0;
    std::optional<double> disconnect_at_ms;

    /// lan / lan_avg / wan / wan_avg / loopback. Throws std::invalid_argument.
    static LinkConfig preset(std::string_view name);

    /// Parses `key = value` lines (`latency_ms`, `throughput_mbps`, `jitter_ms`,
    /// `disconnect_at_ms`, optionally `preset` as a base). `#` starts a comment.
    static LinkConfig parse(std::string_view text);
    static LinkConfig load(const std::filesystem::path& path);

    void validate() const;

    Duration one_way() const { return from_ms(one_way_latency_ms); }
    double rtt_ms() const { return 2.0 * one_way_latency_ms; }
    /// Serialization delay of `bytes` at the configured throughput.
    Duration transmit_time(std::size_t bytes) const;
};

}  // namespace rio::wire
