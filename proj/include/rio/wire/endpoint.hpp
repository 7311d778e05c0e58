#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <utility>

#include "rio/wire/message.hpp"

namespace rio::wire {

struct EndpointCounters {
    std::uint64_t frames_sent = 0;
    std::uint64_t bytes_sent = 0;
    std::uint64_t frames_received = 0;
    std::uint64_t bytes_received = 0;
    // FileOp-channel responses received: one per completed request/response pair.
    std::uint64_t responses_received = 0;
};

enum class DownReason { Closed, ProtocolError };

/// One side of a message transport. Assigns per-(session, channel) sequence
/// numbers on send and rejects gaps on receive.
class Endpoint {
public:
    using Receiver = std::function<void(Message)>;
    using DownHandler = std::function<void(DownReason, const std::string&)>;

    virtual ~Endpoint() = default;

    /// Fills in msg.seq and transmits; returns the sequence number used.
    /// Silently drops when the transport is gone.
    std::uint64_t send(Message msg);

    void on_receive(Receiver r) { receiver_ = std::move(r); }
    void on_down(DownHandler h) { down_ = std::move(h); }

    virtual bool connected() const = 0;
    virtual void close() = 0;

    const EndpointCounters& counters() const { return counters_; }

protected:
    /// Returns false when the frame never made it onto the wire.
    virtual bool transmit(Message msg, std::size_t frame_bytes) = 0;

    /// Called by implementations for each arriving message, on the loop thread.
    void deliver(Message msg, std::size_t frame_bytes);
    void signal_down(DownReason why, const std::string& detail);

private:
    using Key = std::pair<std::uint64_t, std::uint8_t>;

    std::map<Key, std::uint64_t> tx_seq_;
    std::map<Key, std::uint64_t> rx_seq_;
    Receiver receiver_;
    DownHandler down_;
    bool down_signalled_ = false;
    EndpointCounters counters_;
};

}  // namespace rio::wire
