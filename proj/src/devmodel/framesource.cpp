#include "rio/devmodel/devices.hpp"

#include <algorithm>

namespace rio::devmodel {

std::uint16_t frame_pixel(std::uint32_t frame, std::uint32_t x, std::uint32_t y, std::uint32_t) {
    if (x == 0 && y == 0) return static_cast<std::uint16_t>(frame);
    return static_cast<std::uint16_t>(frame * 31u + x * 7u + y * 13u + (x ^ y));
}

void fill_frame(MutableByteSpan out, std::uint32_t frame, std::uint32_t width) {
    const std::size_t pixels = out.size() / 2;
    std::uint32_t x = 0, y = 0;
    for (std::size_t i = 0; i < pixels; ++i) {
        const auto v = frame_pixel(frame, x, y, width);
        out[2 * i] = std::byte{static_cast<std::uint8_t>(v)};
        out[2 * i + 1] = std::byte{static_cast<std::uint8_t>(v >> 8)};
        if (++x == width) {
            x = 0;
            ++y;
        }
    }
}

std::optional<std::uint32_t> check_frame(ByteSpan in, std::uint32_t width) {
    if (in.size() < 2) return std::nullopt;
    const std::uint32_t frame = load_le<std::uint16_t>(in, 0);
    const std::size_t pixels = in.size() / 2;
    std::uint32_t x = 0, y = 0;
    for (std::size_t i = 0; i < pixels; ++i) {
        if (load_le<std::uint16_t>(in, 2 * i) != frame_pixel(frame, x, y, width)) return std::nullopt;
        if (++x == width) {
            x = 0;
            ++y;
        }
    }
    return frame;
}

FramesourceDevice::FramesourceDevice(runtime::EventLoop& loop, KernelMemory& kmem, FramesourceConfig cfg,
                                     std::string name)
    : Device(loop, kmem, std::move(name)), cfg_(cfg) {}

std::int64_t FramesourceDevice::on_open(FileId file, std::uint32_t) {
    files_[file] = State{};
    return 0;
}

void FramesourceDevice::on_release(FileId file) {
    auto it = files_.find(file);
    if (it == files_.end()) return;
    auto& s = it->second;
    if (s.tick) loop().cancel(*s.tick);
    for (auto& b : s.buffers)
        if (b.kaddr) kernel_memory().free(b.kaddr);
    if (s.capture) kernel_memory().free(s.capture->kaddr);
    files_.erase(it);
}

std::size_t FramesourceDevice::live_maps() const {
    std::size_t n = 0;
    for (const auto& [_, s] : files_) {
        for (const auto& b : s.buffers) n += b.map ? 1 : 0;
        if (s.capture && s.capture->map) ++n;
    }
    return n;
}

bool FramesourceDevice::any_stream_mapped(const State& s) const {
    return std::any_of(s.buffers.begin(), s.buffers.end(), [](const Buffer& b) { return b.map != 0; });
}

Task<std::int64_t> FramesourceDevice::on_mmap(FileId file, std::size_t length, std::uint64_t offset,
                                              std::uint64_t user_addr, MemoryContext& mem) {
    auto& s = files_.at(file);
    Buffer* buf = nullptr;
    std::size_t bytes = 0;
    if (offset == kCaptureMapOffset) {
        bytes = cfg_.capture_bytes;
        if (!s.capture) s.capture = Buffer{};
        buf = &*s.capture;
    } else {
        const auto stride = buffer_stride();
        if (offset % stride != 0) co_return kEINVAL;
        const auto idx = offset / stride;
        if (idx >= cfg_.max_buffers) co_return kEINVAL;
        if (s.buffers.size() <= idx) s.buffers.resize(idx + 1);
        bytes = frame_bytes();
        buf = &s.buffers[idx];
    }
    if (length < bytes || length > round_up_pages(bytes)) co_return kEINVAL;
    if (buf->map) co_return kEBUSY;
    if (!buf->kaddr) {
        auto k = kernel_memory().alloc(bytes);
        if (!k) co_return kENOMEM;
        buf->kaddr = *k;
        buf->bytes = bytes;
    }
    for (std::size_t off = 0; off < round_up_pages(bytes); off += kPageSize) mem.map_page(buf->kaddr + off, user_addr + off);
    buf->map = s.next_map++;
    if (offset != kCaptureMapOffset) {
        const auto idx = static_cast<std::size_t>(buf - s.buffers.data());
        buf->state = BufState::Queued;
        s.queued.push_back(idx);
        start_ticking(file, s);
    }
    co_return buf->map;
}

void FramesourceDevice::on_close_map(FileId file, MapId map) {
    auto it = files_.find(file);
    if (it == files_.end()) return;
    auto& s = it->second;
    if (s.capture && s.capture->map == map) {
        s.capture->map = 0;
        return;
    }
    for (std::size_t i = 0; i < s.buffers.size(); ++i) {
        auto& b = s.buffers[i];
        if (b.map != map) continue;
        b.map = 0;
        b.state = BufState::Idle;
        std::erase(s.queued, i);
        std::erase(s.done, i);
        if (s.held == i) s.held.reset();
    }
    if (!any_stream_mapped(s) && s.tick) {
        loop().cancel(*s.tick);
        s.tick.reset();
    }
}

void FramesourceDevice::start_ticking(FileId file, State& s) {
    if (s.tick) return;
    s.tick = after(from_seconds(1.0 / cfg_.fps), [this, file] { tick(file); });
}

void FramesourceDevice::tick(FileId file) {
    auto it = files_.find(file);
    if (it == files_.end()) return;
    auto& s = it->second;
    s.tick.reset();
    if (!s.queued.empty()) {
        const auto idx = s.queued.front();
        s.queued.pop_front();
        auto& b = s.buffers[idx];
        fill_frame(kernel_memory().span(b.kaddr, frame_bytes()), s.frame_seq++, cfg_.width);
        ++frames_filled_;
        b.state = BufState::Done;
        s.done.push_back(idx);
        if (auto& dma = env(file).dma_complete) dma(b.kaddr, frame_bytes());
        notify();
    }
    if (any_stream_mapped(s)) start_ticking(file, s);
}

Task<std::int64_t> FramesourceDevice::on_ioctl(FileId file, std::uint32_t cmd, std::uint64_t arg, MemoryContext& mem) {
    auto& s = files_.at(file);
    if (cmd == kFrameDequeue) {
        if (!any_stream_mapped(s)) co_return kEINVAL;
        if (s.held) {
            auto& b = s.buffers[*s.held];
            b.state = BufState::Queued;
            s.queued.push_back(*s.held);
            s.held.reset();
        }
        if (s.done.empty()) co_return kEAGAIN;
        const auto idx = s.done.front();
        s.done.pop_front();
        s.buffers[idx].state = BufState::Held;
        s.held = idx;
        co_return static_cast<std::int64_t>(idx);
    }
    if (cmd == kFrameCapture) {
        if (!s.capture || !s.capture->map) co_return kEINVAL;
        fill_frame(kernel_memory().span(s.capture->kaddr, s.capture->bytes), s.frame_seq++, cfg_.width);
        ++frames_filled_;
        mem.dma_complete(s.capture->kaddr, s.capture->bytes);
        co_return 0;
    }
    if (cmd == kFrameFillGlobal) {
        const auto& e = env(file);
        auto g = e.global_buffer ? e.global_buffer(static_cast<std::uint32_t>(arg)) : std::nullopt;
        if (!g) co_return kEINVAL;
        const auto n = std::min(g->second, frame_bytes()) & ~std::size_t{1};
        const auto frame = s.frame_seq++;
        fill_frame(kernel_memory().span(g->first, n), frame, cfg_.width);
        ++frames_filled_;
        mem.dma_complete(g->first, n);
        co_return frame;
    }
    co_return kEINVAL;
}

std::uint32_t FramesourceDevice::ready_events(FileId file) const {
    auto it = files_.find(file);
    return it != files_.end() && !it->second.done.empty() ? kPollIn : 0;
}

}  // namespace rio::devmodel
