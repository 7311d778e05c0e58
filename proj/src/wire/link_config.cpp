#include "rio/wire/link_config.hpp"

#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <fmt/format.h>

namespace rio::wire {

namespace {

std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

double number(std::string_view key, std::string_view v) {
    try {
        std::size_t used = 0;
        double d = std::stod(std::string(v), &used);
        if (used != v.size()) throw std::invalid_argument("trailing");
        return d;
    } catch (const std::exception&) {
        throw std::invalid_argument(fmt::format("link config: bad number for {}: '{}'", key, v));
    }
}

}  // namespace

LinkConfig LinkConfig::preset(std::string_view name) {
    LinkConfig c;
    // Measured latencies are round-trip figures; the link is configured one-way.
    if (name == "lan") {
        c.one_way_latency_ms = 4.4 / 2;
        c.throughput_bps = 14.3e6;
    } else if (name == "lan_avg") {
        c.one_way_latency_ms = 13.8 / 2;
        c.throughput_bps = 14.3e6;
    } else if (name == "wan") {
        c.one_way_latency_ms = 55.2 / 2;
        c.throughput_bps = 1.2e6;
    } else if (name == "wan_avg") {
        c.one_way_latency_ms = 56.9 / 2;
        c.throughput_bps = 1.2e6;
    } else if (name == "loopback") {
        c.one_way_latency_ms = 0;
    } else {
        throw std::invalid_argument(fmt::format("unknown link preset '{}'", name));
    }
    return c;
}

LinkConfig LinkConfig::parse(std::string_view text) {
    LinkConfig c;
    std::istringstream in{std::string(text)};
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string_view l = line;
        if (auto hash = l.find('#'); hash != std::string_view::npos) l = l.substr(0, hash);
        l = trim(l);
        if (l.empty()) continue;
        auto eq = l.find('=');
        if (eq == std::string_view::npos) throw std::invalid_argument(fmt::format("link config line {}: expected key = value", lineno));
        auto key = trim(l.substr(0, eq));
        auto val = trim(l.substr(eq + 1));
        if (key == "preset") {
            auto d = c.disconnect_at_ms;
            auto j = c.jitter_ms;
            c = preset(val);
            c.disconnect_at_ms = d;
            c.jitter_ms = j;
        } else if (key == "latency_ms") {
            c.one_way_latency_ms = number(key, val);
        } else if (key == "throughput_mbps") {
            c.throughput_bps = val == "inf" ? std::numeric_limits<double>::infinity() : number(key, val) * 1e6;
        } else if (key == "jitter_ms") {
            c.jitter_ms = number(key, val);
        } else if (key == "disconnect_at_ms") {
            c.disconnect_at_ms = number(key, val);
        } else {
            throw std::invalid_argument(fmt::format("link config line {}: unknown key '{}'", lineno, key));
        }
    }
    c.validate();
    return c;
}

LinkConfig LinkConfig::load(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error(fmt::format("cannot open link config {}", path.string()));
    std::stringstream ss;
    ss << f.rdbuf();
    return parse(ss.str());
}

void LinkConfig::validate() const {
    if (!(one_way_latency_ms >= 0)) throw std::invalid_argument("link latency must be >= 0");
    if (!(throughput_bps > 0)) throw std::invalid_argument("link throughput must be > 0");
    if (!(jitter_ms >= 0)) throw std::invalid_argument("link jitter must be >= 0");
}

Duration LinkConfig::transmit_time(std::size_t bytes) const {
    if (std::isinf(throughput_bps)) return Duration::zero();
    return Duration{static_cast<std::int64_t>(std::llround(static_cast<double>(bytes) * 8.0 * 1e9 / throughput_bps))};
}

}  // namespace rio::wire
