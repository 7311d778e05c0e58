#include "rio/devmodel/devices.hpp"

#include <algorithm>

namespace rio::devmodel {

Bytes AudioXfer::encode() const {
    Bytes out(kSize);
    store_le<std::int32_t>(out, 0, result);
    store_le<std::uint64_t>(out, 4, data_addr);
    store_le<std::uint32_t>(out, 12, frame_count);
    return out;
}

AudioXfer AudioXfer::decode(ByteSpan in) {
    if (in.size() != kSize) throw DecodeError("audio header size");
    return AudioXfer{load_le<std::int32_t>(in, 0), load_le<std::uint64_t>(in, 4), load_le<std::uint32_t>(in, 12)};
}

AudioDevice::AudioDevice(runtime::EventLoop& loop, KernelMemory& kmem, AudioConfig cfg, std::string name)
    : Device(loop, kmem, std::move(name)), cfg_(cfg) {}

std::byte AudioDevice::capture_byte(std::uint64_t frame, std::uint32_t byte_in_frame) {
    return std::byte{static_cast<std::uint8_t>(frame * 7 + byte_in_frame * 31 + (frame >> 8))};
}

std::int64_t AudioDevice::on_open(FileId file, std::uint32_t) {
    files_[file] = State{};
    return 0;
}

void AudioDevice::on_release(FileId file) { files_.erase(file); }

Duration AudioDevice::frames_to_time(std::uint64_t frames) const {
    const auto ns = (frames * 1'000'000'000ull + cfg_.rate_hz - 1) / cfg_.rate_hz;
    return Duration{static_cast<std::int64_t>(ns)};
}

std::uint64_t AudioDevice::frames_produced(const State& s) const {
    if (!s.capture_start) return 0;
    const auto elapsed = (loop().now() - *s.capture_start).count();
    return static_cast<std::uint64_t>(elapsed) * cfg_.rate_hz / 1'000'000'000ull;
}

Task<std::int64_t> AudioDevice::on_ioctl(FileId file, std::uint32_t cmd, std::uint64_t arg, MemoryContext& mem) {
    if (cmd == kAudioXfer) co_return co_await playback(file, arg, mem);
    if (cmd == kAudioXferCapture) co_return co_await capture(file, arg, mem);
    co_return kEINVAL;
}

Task<std::int64_t> AudioDevice::playback(FileId file, std::uint64_t arg, MemoryContext& mem) {
    co_await mem.put_user<std::int32_t>(arg + AudioXfer::kResultOffset, 0);
    auto raw = co_await mem.copy_from_user(arg, AudioXfer::kSize);
    const auto hdr = AudioXfer::decode(raw);
    stats_.last_header_result = hdr.result;
    if (hdr.frame_count > cfg_.max_frames_per_xfer) co_return kEINVAL;
    if (hdr.frame_count == 0) co_return 0;

    const auto frames = hdr.frame_count;
    auto data = co_await mem.copy_from_user(hdr.data_addr, std::size_t{frames} * cfg_.playback_bytes_per_frame);
    (void)data;

    // Block until the ring has room for the whole segment.
    const auto room = std::max(cfg_.playback_ring_frames, frames);
    for (;;) {
        if (!is_open(file)) co_return kECANCELED;
        auto& s = files_.at(file);
        const auto wake = s.play_end - frames_to_time(room - frames);
        if (loop().now() >= wake) break;
        auto why = co_await runtime::sleep_until(loop(), wake, file_token(file));
        if (why == runtime::Wake::Cancelled) co_return kECANCELED;
    }

    auto& s = files_.at(file);
    const auto now = loop().now();
    if (stats_.first_play && now > s.play_end) ++stats_.underruns;
    const auto start = std::max(now, s.play_end);
    if (!stats_.first_play) stats_.first_play = start;
    s.play_end = start + frames_to_time(frames);
    stats_.frames_played += frames;
    stats_.play_end = s.play_end;

    co_await mem.put_user<std::int32_t>(arg + AudioXfer::kResultOffset, static_cast<std::int32_t>(frames));
    co_return frames;
}

Task<std::int64_t> AudioDevice::capture(FileId file, std::uint64_t arg, MemoryContext& mem) {
    co_await mem.put_user<std::int32_t>(arg + AudioXfer::kResultOffset, 0);
    auto raw = co_await mem.copy_from_user(arg, AudioXfer::kSize);
    const auto hdr = AudioXfer::decode(raw);
    stats_.last_header_result = hdr.result;
    if (hdr.frame_count > cfg_.max_frames_per_xfer || hdr.frame_count > cfg_.capture_ring_frames) co_return kEINVAL;
    if (hdr.frame_count == 0) co_return 0;
    if (!is_open(file)) co_return kECANCELED;

    const auto frames = hdr.frame_count;
    {
        auto& s = files_.at(file);
        if (!s.capture_start) s.capture_start = loop().now();
        if (!stats_.capture_start) stats_.capture_start = s.capture_start;
        const auto produced = frames_produced(s);
        if (produced > s.capture_taken + cfg_.capture_ring_frames) {
            const auto lost = produced - cfg_.capture_ring_frames - s.capture_taken;
            stats_.frames_dropped += lost;
            s.capture_taken += lost;
        }
        const auto ready_at = *s.capture_start + frames_to_time(s.capture_taken + frames);
        if (loop().now() < ready_at) {
            auto why = co_await runtime::sleep_until(loop(), ready_at, file_token(file));
            if (why == runtime::Wake::Cancelled) co_return kECANCELED;
        }
    }

    auto& s = files_.at(file);
    const auto bpf = cfg_.capture_bytes_per_frame;
    Bytes data(std::size_t{frames} * bpf);
    for (std::uint32_t i = 0; i < frames; ++i)
        for (std::uint32_t b = 0; b < bpf; ++b) data[std::size_t{i} * bpf + b] = capture_byte(s.capture_taken + i, b);
    s.capture_taken += frames;
    stats_.frames_captured += frames;
    stats_.capture_end = loop().now();

    co_await mem.copy_to_user(hdr.data_addr, std::move(data));
    co_await mem.put_user<std::int32_t>(arg + AudioXfer::kResultOffset, static_cast<std::int32_t>(frames));
    co_return frames;
}

std::uint32_t AudioDevice::ready_events(FileId file) const {
    auto it = files_.find(file);
    if (it == files_.end()) return 0;
    std::uint32_t ev = 0;
    const auto& s = it->second;
    if (s.play_end <= loop().now() + frames_to_time(cfg_.playback_ring_frames)) ev |= kPollOut;
    if (frames_produced(s) > s.capture_taken) ev |= kPollIn;
    return ev;
}

}  // namespace rio::devmodel
