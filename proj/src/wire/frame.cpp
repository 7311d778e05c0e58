#include "rio/wire/frame.hpp"

namespace rio::wire {

std::optional<Channel> channel_from_byte(std::uint8_t b) {
    if (b < kChannelCount) return static_cast<Channel>(b);
    return std::nullopt;
}

std::optional<Kind> kind_from_byte(std::uint8_t b) {
    if (b <= static_cast<std::uint8_t>(Kind::OpenAck)) return static_cast<Kind>(b);
    return std::nullopt;
}

Channel channel_of(Kind kind) {
    switch (kind) {
        case Kind::FileOpRequest:
        case Kind::FileOpResponse:
        case Kind::CopyRequest:
        case Kind::CopyResponse: return Channel::FileOp;
        case Kind::PageFetch:
        case Kind::PageData:
        case Kind::PageInvalidate:
        case Kind::PageUpdateBatch: return Channel::Coherence;
        case Kind::Heartbeat:
        case Kind::HeartbeatAck: return Channel::Heartbeat;
        case Kind::Cleanup:
        case Kind::Open:
        case Kind::OpenAck: return Channel::Control;
    }
    return Channel::Control;
}

std::string_view to_string(Kind kind) {
    switch (kind) {
        case Kind::FileOpRequest: return "FileOpRequest";
        case Kind::FileOpResponse: return "FileOpResponse";
        case Kind::CopyRequest: return "CopyRequest";
        case Kind::CopyResponse: return "CopyResponse";
        case Kind::PageFetch: return "PageFetch";
        case Kind::PageData: return "PageData";
        case Kind::PageInvalidate: return "PageInvalidate";
        case Kind::PageUpdateBatch: return "PageUpdateBatch";
        case Kind::Heartbeat: return "Heartbeat";
        case Kind::HeartbeatAck: return "HeartbeatAck";
        case Kind::Cleanup: return "Cleanup";
        case Kind::Open: return "Open";
        case Kind::OpenAck: return "OpenAck";
    }
    return "?";
}

std::string_view to_string(Channel channel) {
    switch (channel) {
        case Channel::FileOp: return "FileOp";
        case Channel::Coherence: return "Coherence";
        case Channel::Heartbeat: return "Heartbeat";
        case Channel::Control: return "Control";
    }
    return "?";
}

std::size_t frame_size(std::size_t payload_size) {
    if (payload_size > kMaxFrameSize - kHeaderSize) throw EncodeError("payload too large for 32-bit frame length");
    return kHeaderSize + payload_size;
}

void encode_frame_into(const Message& msg, Bytes& out) {
    const auto total = frame_size(msg.payload.size());
    out.reserve(out.size() + total);
    ByteWriter w(out);
    w.u32(static_cast<std::uint32_t>(total));
    w.u8(static_cast<std::uint8_t>(msg.kind));
    w.u8(static_cast<std::uint8_t>(msg.channel));
    w.u64(msg.session_id);
    w.u64(msg.seq);
    w.raw(msg.payload);
}

Bytes encode_frame(const Message& msg) {
    Bytes out;
    encode_frame_into(msg, out);
    return out;
}

DecodeResult decode_frame(ByteSpan bytes) {
    DecodeResult r;
    if (bytes.size() < 4) return r;
    ByteReader rd(bytes);
    const std::uint32_t total = rd.u32();
    if (total < kHeaderSize) {
        r.status = DecodeStatus::ProtocolError;
        r.error = "frame length shorter than header";
        return r;
    }
    if (bytes.size() < total) return r;

    auto kind = kind_from_byte(rd.u8());
    auto channel = channel_from_byte(rd.u8());
    if (!kind || !channel) {
        r.status = DecodeStatus::ProtocolError;
        r.error = !kind ? "unknown kind" : "unknown channel";
        return r;
    }
    if (channel_of(*kind) != *channel) {
        r.status = DecodeStatus::ProtocolError;
        r.error = "kind not valid on channel";
        return r;
    }
    r.message.kind = *kind;
    r.message.channel = *channel;
    r.message.session_id = rd.u64();
    r.message.seq = rd.u64();
    auto payload = rd.raw(total - kHeaderSize);
    r.message.payload.assign(payload.begin(), payload.end());
    r.consumed = total;
    r.status = DecodeStatus::Ok;
    return r;
}

DecodeResult FrameAssembler::next() {
    auto r = decode_frame(ByteSpan(buf_).subspan(start_));
    if (r.status == DecodeStatus::Ok) {
        start_ += r.consumed;
        if (start_ == buf_.size()) {
            buf_.clear();
            start_ = 0;
        } else if (start_ > (1u << 20)) {
            buf_.erase(buf_.begin(), buf_.begin() + static_cast<std::ptrdiff_t>(start_));
            start_ = 0;
        }
    }
    return r;
}

}  // namespace rio::wire
