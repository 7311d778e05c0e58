#pragma once

#include <array>
#include <memory>
#include <optional>
#include <random>

#include "rio/runtime/event_loop.hpp"
#include "rio/wire/endpoint.hpp"
#include "rio/wire/link_config.hpp"

namespace rio::wire {

struct LinkCounters {
    std::uint64_t round_trips = 0;
    std::uint64_t bytes_on_wire = 0;
    std::uint64_t frames = 0;
    std::uint64_t frames_dropped = 0;
};

/// Deterministic point-to-point link on the event loop's logical clock.
///
/// A frame sent at `now` starts serializing once the direction is free,
/// occupies it for frame_bytes*8/throughput, then arrives one latency later.
/// Frames are never reordered within a channel; jitter is clamped to keep
/// FIFO. Heartbeat-channel frames do not queue behind bulk frames (they only
/// push the bulk queue back by their own serialization time), so liveness
/// probes survive multi-second transfers. Frames that would complete after
/// the disconnect instant are lost,
/// and nothing tells the receiver: it has to notice via heartbeats.
class SimulatedLink {
public:
    enum Side { ClientSide = 0, ServerSide = 1 };

    SimulatedLink(runtime::EventLoop& loop, LinkConfig config, std::uint64_t seed = 1);
    ~SimulatedLink();

    SimulatedLink(const SimulatedLink&) = delete;
    SimulatedLink& operator=(const SimulatedLink&) = delete;

    Endpoint& client();
    Endpoint& server();

    const LinkConfig& config() const { return config_; }

    /// Cuts the link at the current instant.
    void disconnect();
    /// Cuts the link at a future instant.
    void disconnect_at(TimePoint when);
    bool is_disconnected() const;
    std::optional<TimePoint> cut_time() const { return cut_at_; }

    LinkCounters counters() const;

private:
    class End;
    friend class End;

    bool carry(Side from, Message msg, std::size_t frame_bytes);
    void peer_closed(Side from);

    runtime::EventLoop& loop_;
    LinkConfig config_;
    std::mt19937_64 rng_;
    std::optional<TimePoint> cut_at_;
    std::array<TimePoint, 2> tx_free_at_{};
    std::array<TimePoint, 2> last_arrival_{};
    // Heartbeat frames bypass the bulk queue; they keep their own ordering.
    std::array<TimePoint, 2> hb_last_arrival_{};
    std::array<std::unique_ptr<End>, 2> ends_;
    std::shared_ptr<bool> alive_;
    std::uint64_t dropped_ = 0;
};

}  // namespace rio::wire
