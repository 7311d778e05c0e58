#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <optional>
#include <vector>

#include "rio/devmodel/device.hpp"
#include "rio/devmodel/ioctl.hpp"

namespace rio::devmodel {

// ---- sensor ---------------------------------------------------------------

/// 12-byte sample: sequence number (u32 LE) then the acquisition start time
/// in microseconds (u64 LE). Acquisition is armed at open and re-armed when a
/// sample is consumed; a sample is ready one period after arming.
struct SensorSample {
    std::uint32_t seq = 0;
    std::uint64_t armed_at_us = 0;

    static constexpr std::size_t kSize = 12;
    Bytes encode() const;
    static SensorSample decode(ByteSpan in);
};

struct SensorConfig {
    Duration period = from_ms(65);
};

class SensorDevice final : public Device {
public:
    SensorDevice(runtime::EventLoop& loop, KernelMemory& kmem, SensorConfig cfg = {}, std::string name = "sensor");

protected:
    std::int64_t on_open(FileId file, std::uint32_t flags) override;
    void on_release(FileId file) override;
    Task<std::int64_t> on_read(FileId file, std::uint64_t addr, std::size_t len, MemoryContext& mem) override;
    std::uint32_t ready_events(FileId file) const override;

private:
    struct State {
        std::uint32_t seq = 0;
        TimePoint armed_at{};
        bool ready = false;
        std::optional<runtime::EventLoop::TimerId> timer;
    };
    void arm(FileId file);

    SensorConfig cfg_;
    std::map<FileId, State> files_;
};

// ---- audio ----------------------------------------------------------------

/// Transfer header at the ioctl argument, little-endian:
/// result i32 @0, data_addr u64 @4, frame_count u32 @12.
struct AudioXfer {
    std::int32_t result = 0;
    std::uint64_t data_addr = 0;
    std::uint32_t frame_count = 0;

    static constexpr std::size_t kSize = 16;
    static constexpr std::size_t kResultOffset = 0;
    Bytes encode() const;
    static AudioXfer decode(ByteSpan in);
};

inline constexpr std::uint32_t kAudioXfer = iow('A', 0x50, AudioXfer::kSize);
inline constexpr std::uint32_t kAudioXferCapture = ior('A', 0x51, AudioXfer::kSize);

struct AudioConfig {
    std::uint32_t rate_hz = 48'000;
    std::uint32_t playback_bytes_per_frame = 4;  // 16-bit stereo
    std::uint32_t capture_bytes_per_frame = 4;
    std::uint32_t playback_ring_frames = 1024;
    std::uint32_t capture_ring_frames = 48'000;
    std::uint32_t max_frames_per_xfer = 1u << 20;
};

struct AudioStats {
    std::uint64_t frames_played = 0;
    std::optional<TimePoint> first_play;
    TimePoint play_end{};
    std::uint64_t underruns = 0;
    std::uint64_t frames_captured = 0;
    std::uint64_t frames_dropped = 0;
    std::optional<TimePoint> capture_start;
    TimePoint capture_end{};  // when the last capture transfer was filled
    // Result field as the driver read it back from the transfer header.
    std::optional<std::int32_t> last_header_result;
};

class AudioDevice final : public Device {
public:
    AudioDevice(runtime::EventLoop& loop, KernelMemory& kmem, AudioConfig cfg = {}, std::string name = "audio");

    const AudioConfig& config() const { return cfg_; }
    void set_config(const AudioConfig& cfg) { cfg_ = cfg; }
    const AudioStats& stats() const { return stats_; }
    void reset_stats() { stats_ = {}; }

    /// Capture data is a deterministic byte stream indexed by frame number.
    static std::byte capture_byte(std::uint64_t frame, std::uint32_t byte_in_frame);

protected:
    std::int64_t on_open(FileId file, std::uint32_t flags) override;
    void on_release(FileId file) override;
    Task<std::int64_t> on_ioctl(FileId file, std::uint32_t cmd, std::uint64_t arg, MemoryContext& mem) override;
    std::uint32_t ready_events(FileId file) const override;

private:
    struct State {
        TimePoint play_end{};
        std::optional<TimePoint> capture_start;
        std::uint64_t capture_taken = 0;  // frames delivered or dropped
    };
    Task<std::int64_t> playback(FileId file, std::uint64_t arg, MemoryContext& mem);
    Task<std::int64_t> capture(FileId file, std::uint64_t arg, MemoryContext& mem);
    Duration frames_to_time(std::uint64_t frames) const;
    std::uint64_t frames_produced(const State& s) const;

    AudioConfig cfg_;
    AudioStats stats_;
    std::map<FileId, State> files_;
};

// ---- framesource ----------------------------------------------------------

inline constexpr std::uint32_t kFrameDequeue = io('V', 1);
inline constexpr std::uint32_t kFrameCapture = io('V', 2);
inline constexpr std::uint32_t kFrameFillGlobal = io('V', 3);  // arg = shared buffer id

/// mmap offset selecting the still-capture buffer instead of a stream buffer.
inline constexpr std::uint64_t kCaptureMapOffset = 0x4000'0000;

struct FramesourceConfig {
    std::uint32_t width = 640;
    std::uint32_t height = 480;
    std::uint32_t max_buffers = 8;
    double fps = 30.0;
    std::size_t capture_bytes = 8'000'000;
};

/// Deterministic 16-bit test pattern. Pixel (0,0) holds the frame number, so a
/// reader can recover it and check every other pixel.
std::uint16_t frame_pixel(std::uint32_t frame, std::uint32_t x, std::uint32_t y, std::uint32_t width);
void fill_frame(MutableByteSpan out, std::uint32_t frame, std::uint32_t width);
/// Returns the frame number if `in` holds an intact pattern.
std::optional<std::uint32_t> check_frame(ByteSpan in, std::uint32_t width);

class FramesourceDevice final : public Device {
public:
    FramesourceDevice(runtime::EventLoop& loop, KernelMemory& kmem, FramesourceConfig cfg = {},
                      std::string name = "framesource");

    const FramesourceConfig& config() const { return cfg_; }
    void set_resolution(std::uint32_t w, std::uint32_t h) {
        cfg_.width = w;
        cfg_.height = h;
    }
    void set_capture_bytes(std::size_t n) { cfg_.capture_bytes = n; }
    std::size_t frame_bytes() const { return std::size_t{cfg_.width} * cfg_.height * 2; }
    std::size_t buffer_stride() const { return round_up_pages(frame_bytes()); }
    std::size_t live_maps() const override;
    std::uint64_t frames_filled() const { return frames_filled_; }

protected:
    std::int64_t on_open(FileId file, std::uint32_t flags) override;
    void on_release(FileId file) override;
    Task<std::int64_t> on_ioctl(FileId file, std::uint32_t cmd, std::uint64_t arg, MemoryContext& mem) override;
    Task<std::int64_t> on_mmap(FileId file, std::size_t length, std::uint64_t offset, std::uint64_t user_addr,
                               MemoryContext& mem) override;
    void on_close_map(FileId file, MapId map) override;
    std::uint32_t ready_events(FileId file) const override;

private:
    enum class BufState { Idle, Queued, Done, Held };
    struct Buffer {
        std::uint64_t kaddr = 0;
        std::size_t bytes = 0;
        MapId map = 0;
        BufState state = BufState::Idle;
    };
    struct State {
        std::vector<Buffer> buffers;
        std::optional<Buffer> capture;
        std::deque<std::size_t> queued;
        std::deque<std::size_t> done;
        std::optional<std::size_t> held;
        std::uint32_t frame_seq = 0;
        std::optional<runtime::EventLoop::TimerId> tick;
        MapId next_map = 1;
    };
    void tick(FileId file);
    void start_ticking(FileId file, State& s);
    bool any_stream_mapped(const State& s) const;

    FramesourceConfig cfg_;
    std::map<FileId, State> files_;
    std::uint64_t frames_filled_ = 0;
};

// ---- modem ----------------------------------------------------------------

inline constexpr std::uint32_t kModemCall = 1;
inline constexpr std::uint32_t kModemSms = 2;

struct ModemConfig {
    Duration call_delay = from_seconds(7.8);
    Duration sms_delay = from_seconds(6.2);
};

/// Writes carry a record whose first u32 (LE) is the tag. Completion becomes
/// readable (8 bytes: tag u32, status i32) after the carrier delay.
class ModemDevice final : public Device {
public:
    ModemDevice(runtime::EventLoop& loop, KernelMemory& kmem, ModemConfig cfg = {}, std::string name = "modem");

    void set_config(const ModemConfig& cfg) { cfg_ = cfg; }

protected:
    std::int64_t on_open(FileId file, std::uint32_t flags) override;
    void on_release(FileId file) override;
    Task<std::int64_t> on_write(FileId file, std::uint64_t addr, std::size_t len, MemoryContext& mem) override;
    Task<std::int64_t> on_read(FileId file, std::uint64_t addr, std::size_t len, MemoryContext& mem) override;
    std::uint32_t ready_events(FileId file) const override;

private:
    struct State {
        std::deque<std::uint32_t> completed;
        std::vector<runtime::EventLoop::TimerId> pending;
    };
    ModemConfig cfg_;
    std::map<FileId, State> files_;
};

// ---- echodev --------------------------------------------------------------

/// arg[0..4] <- counter, reads arg[4..12], writes arg[12..24] = ~input (8 B)
/// followed by the byte sum of the input (u32 LE).
inline constexpr std::uint32_t kEchoTransform = iowr('E', 1, 24);
/// Four 8-byte copy_from_user calls over a 32-byte record; returns the byte sum.
inline constexpr std::uint32_t kEchoGather = iow('E', 2, 32);
/// Command number carries no size: reads 8 bytes at arg, writes ~input at arg+8.
inline constexpr std::uint32_t kEchoIndirect = io('E', 3);

class EchoDevice final : public Device {
public:
    EchoDevice(runtime::EventLoop& loop, KernelMemory& kmem, std::string name = "echodev");

    std::uint32_t counter() const { return counter_; }

protected:
    std::int64_t on_open(FileId file, std::uint32_t flags) override;
    void on_release(FileId file) override;
    Task<std::int64_t> on_ioctl(FileId file, std::uint32_t cmd, std::uint64_t arg, MemoryContext& mem) override;
    std::uint32_t ready_events(FileId) const override { return kPollIn | kPollOut; }

private:
    std::uint32_t counter_ = 0;
};

/// Registers one of each reference device.
void add_reference_devices(DeviceRegistry& reg, runtime::EventLoop& loop, KernelMemory& kmem);

}  // namespace rio::devmodel
