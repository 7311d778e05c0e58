#pragma once

#include <cstdint>
#include <optional>
#include <string_view>

#include "rio/common/bytes.hpp"

namespace rio::wire {

enum class Channel : std::uint8_t {
    FileOp = 0,
    Coherence = 1,
    Heartbeat = 2,
    Control = 3,
};

enum class Kind : std::uint8_t {
    FileOpRequest = 0,
    FileOpResponse = 1,
    CopyRequest = 2,
    CopyResponse = 3,
    PageFetch = 4,
    PageData = 5,
    PageInvalidate = 6,
    PageUpdateBatch = 7,
    Heartbeat = 8,
    HeartbeatAck = 9,
    Cleanup = 10,
    Open = 11,
    OpenAck = 12,
};

inline constexpr std::size_t kChannelCount = 4;

std::optional<Channel> channel_from_byte(std::uint8_t b);
std::optional<Kind> kind_from_byte(std::uint8_t b);

/// The channel a message kind must travel on.
Channel channel_of(Kind kind);

std::string_view to_string(Kind kind);
std::string_view to_string(Channel channel);

struct Message {
    std::uint64_t session_id = 0;
    std::uint64_t seq = 0;
    Channel channel = Channel::Control;
    Kind kind = Kind::Open;
    Bytes payload;

    bool operator==(const Message&) const = default;
};

/// Builds a message on the kind's channel; seq is assigned by the sender.
inline Message make_message(Kind kind, Bytes payload, std::uint64_t session_id = 0) {
    return Message{session_id, 0, channel_of(kind), kind, std::move(payload)};
}

/// Request/response pairs counted as protocol round trips on the FileOp channel.
inline bool is_fileop_response(Kind k) { return k == Kind::FileOpResponse || k == Kind::CopyResponse; }

}  // namespace rio::wire
