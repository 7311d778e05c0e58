#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>

#include "rio/common/bytes.hpp"
#include "rio/wire/message.hpp"

namespace rio::wire {

// 4-byte length | kind | channel | 8-byte session | 8-byte seq, all big-endian.
inline constexpr std::size_t kHeaderSize = 22;
inline constexpr std::uint64_t kMaxFrameSize = 0xFFFFFFFFull;

class EncodeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Total frame size for a payload; throws EncodeError when the 32-bit length field would overflow.
std::size_t frame_size(std::size_t payload_size);

Bytes encode_frame(const Message& msg);
void encode_frame_into(const Message& msg, Bytes& out);

enum class DecodeStatus { Ok, NeedMoreBytes, ProtocolError };

struct DecodeResult {
    DecodeStatus status = DecodeStatus::NeedMoreBytes;
    Message message;
    std::size_t consumed = 0;
    const char* error = nullptr;
};

/// Decodes the first frame in `bytes`. Unknown kind/channel bytes and kinds on
/// the wrong channel are protocol errors; a short buffer asks for more bytes.
DecodeResult decode_frame(ByteSpan bytes);

/// Incremental decoder for stream transports.
class FrameAssembler {
public:
    void feed(ByteSpan bytes) { buf_.insert(buf_.end(), bytes.begin(), bytes.end()); }
    DecodeResult next();
    std::size_t buffered() const { return buf_.size() - start_; }

private:
    Bytes buf_;
    std::size_t start_ = 0;
};

}  // namespace rio::wire
