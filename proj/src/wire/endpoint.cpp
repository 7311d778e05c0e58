#include "rio/wire/endpoint.hpp"

#include <fmt/format.h>

#include "rio/common/log.hpp"
#include "rio/wire/frame.hpp"

namespace rio::wire {

std::uint64_t Endpoint::send(Message msg) {
    if (!connected()) return 0;
    msg.channel = channel_of(msg.kind);
    auto& next = tx_seq_[{msg.session_id, static_cast<std::uint8_t>(msg.channel)}];
    msg.seq = next++;
    const auto seq = msg.seq;
    const auto bytes = frame_size(msg.payload.size());
    log::trace("tx {} session={} seq={} bytes={}", to_string(msg.kind), msg.session_id, msg.seq, bytes);
    if (transmit(std::move(msg), bytes)) {
        ++counters_.frames_sent;
        counters_.bytes_sent += bytes;
    }
    return seq;
}

void Endpoint::deliver(Message msg, std::size_t frame_bytes) {
    if (down_signalled_) return;
    if (channel_of(msg.kind) != msg.channel) {
        signal_down(DownReason::ProtocolError, "kind not valid on channel");
        return;
    }
    auto& expected = rx_seq_[{msg.session_id, static_cast<std::uint8_t>(msg.channel)}];
    if (msg.seq != expected) {
        signal_down(DownReason::ProtocolError,
                    fmt::format("sequence gap on {}: expected {}, got {}", to_string(msg.channel), expected, msg.seq));
        return;
    }
    ++expected;
    ++counters_.frames_received;
    counters_.bytes_received += frame_bytes;
    if (is_fileop_response(msg.kind)) ++counters_.responses_received;
    log::trace("rx {} session={} seq={}", to_string(msg.kind), msg.session_id, msg.seq);
    if (receiver_) receiver_(std::move(msg));
}

void Endpoint::signal_down(DownReason why, const std::string& detail) {
    if (down_signalled_) return;
    down_signalled_ = true;
    log::debug("endpoint down: {}", detail);
    close();
    if (down_) down_(why, detail);
}

}  // namespace rio::wire
