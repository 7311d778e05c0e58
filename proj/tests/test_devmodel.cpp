#include <string>
#include <vector>

#include "doctest.h"
#include "rio/devmodel/devices.hpp"

using namespace rio;
using namespace rio::devmodel;

using runtime::EventLoop;
using runtime::run;

namespace {

// Direct access plus a log of every memory operation the device issued.
class RecordingContext final : public MemoryContext {
public:
    struct Op {
        std::string kind;
        std::uint64_t addr;
        Bytes data;
    };

    explicit RecordingContext(UserMemory& m, DeviceEnv env = {}) : inner_(m, std::move(env)), mem_(m) {}

    Task<Bytes> copy_from_user(std::uint64_t addr, std::size_t len) override {
        auto b = mem_.read(addr, len);
        ops.push_back({"from", addr, b});
        co_return b;
    }
    Task<void> copy_to_user(std::uint64_t addr, Bytes data) override {
        ops.push_back({"to", addr, data});
        mem_.write(addr, data);
        co_return;
    }
    Task<void> put_user_bytes(std::uint64_t addr, Bytes data) override {
        ops.push_back({"put", addr, data});
        mem_.write(addr, data);
        co_return;
    }
    void map_page(std::uint64_t k, std::uint64_t u) override {
        ops.push_back({"map", u, {}});
        inner_.map_page(k, u);
    }
    void dma_complete(std::uint64_t k, std::size_t len) override {
        ops.push_back({"dma", k, Bytes(len > 0 ? 1 : 0)});
        dma_lengths.push_back(len);
        inner_.dma_complete(k, len);
    }

    std::vector<Op> ops;
    std::vector<std::size_t> dma_lengths;

private:
    DirectMemoryContext inner_;
    UserMemory& mem_;
};

struct World {
    EventLoop loop;
    KernelMemory kmem{32u << 20};
    UserMemory user;
};

}  // namespace

TEST_CASE("ioctl command packing matches the conventional layout") {
    const std::uint32_t oracle = (3u << 30) | (24u << 16) | (std::uint32_t{'E'} << 8) | 1u;
    CHECK(kEchoTransform == oracle);
    CHECK(kEchoTransform == 0xC0184501u);
    IoctlCommand c(kEchoTransform);
    CHECK(c.dir() == IoctlDir::ReadWrite);
    CHECK(c.size() == 24);
    CHECK(c.type() == 'E');
    CHECK(c.nr() == 1);
    CHECK(c.copies_in());
    CHECK(c.copies_out());

    IoctlCommand a(kAudioXfer);
    CHECK(a.dir() == IoctlDir::Write);
    CHECK(a.size() == 16);
    CHECK(IoctlCommand(kAudioXferCapture).dir() == IoctlDir::Read);
    CHECK(IoctlCommand(kFrameDequeue).dir() == IoctlDir::None);
    CHECK(IoctlCommand(kFrameDequeue).size() == 0);
    CHECK(IoctlCommand::make(IoctlDir::Write, 'x', 9, IoctlCommand::kMaxSize).size() == 16383);
}

TEST_CASE("kernel memory hands out zeroed page-aligned blocks") {
    KernelMemory k(1u << 20);
    auto a = k.alloc(100);
    auto b = k.alloc(8192);
    REQUIRE(a);
    REQUIRE(b);
    CHECK((*a - KernelMemory::kBase) % kPageSize == 0);
    CHECK(*b == *a + kPageSize);
    auto s = k.span(*a, 4096);
    s[0] = std::byte{9};
    CHECK_THROWS_AS(k.span(*a, 4097), std::out_of_range);
    k.free(*a);
    auto c = k.alloc(10);
    REQUIRE(c);
    CHECK(*c == *a);
    CHECK(std::to_integer<int>(k.span(*c, 1)[0]) == 0);
    CHECK_FALSE(k.alloc(2u << 20));
    CHECK(k.allocations() == 2);
}

TEST_CASE("sensor produces one sample per 65 ms and would-blocks otherwise") {
    World w;
    SensorDevice dev(w.loop, w.kmem);
    auto f = dev.open(0);
    REQUIRE(f.ok());
    DirectMemoryContext mem(w.user);
    auto buf = w.user.alloc(12);

    CHECK(run(w.loop, dev.read(*f, buf, 12, mem)) == kEAGAIN);
    CHECK(run(w.loop, dev.poll(*f, kPollIn, kPollForever)) == kPollIn);
    CHECK(to_ms(w.loop.now()) == doctest::Approx(65.0));
    CHECK(run(w.loop, dev.read(*f, buf, 12, mem)) == 12);
    auto s = SensorSample::decode(w.user.read(buf, 12));
    CHECK(s.seq == 0);
    CHECK(s.armed_at_us == 0);
    CHECK(run(w.loop, dev.read(*f, buf, 12, mem)) == kEAGAIN);
    CHECK(run(w.loop, dev.poll(*f, kPollIn, 0)) == 0);

    CHECK(run(w.loop, dev.poll(*f, kPollIn, kPollForever)) == kPollIn);
    CHECK(to_ms(w.loop.now()) == doctest::Approx(130.0));
    CHECK(run(w.loop, dev.read(*f, buf, 12, mem)) == 12);
    s = SensorSample::decode(w.user.read(buf, 12));
    CHECK(s.seq == 1);
    CHECK(s.armed_at_us == 65'000);
}

TEST_CASE("poll with a timeout returns empty when nothing happens") {
    World w;
    SensorDevice dev(w.loop, w.kmem, SensorConfig{from_seconds(10)});
    auto f = dev.open(0);
    CHECK(run(w.loop, dev.poll(*f, kPollIn, from_ms(50).count())) == 0);
    CHECK(to_ms(w.loop.now()) == doctest::Approx(50.0));
}

TEST_CASE("release aborts a blocking poll and the device can be reopened") {
    World w;
    SensorDevice dev(w.loop, w.kmem, SensorConfig{from_seconds(10)});
    auto f = dev.open(0);
    w.loop.schedule_after(from_ms(5), [&] { dev.release(*f); });
    CHECK(run(w.loop, dev.poll(*f, kPollIn, kPollForever)) == kECANCELED);
    CHECK(dev.open_files() == 0);
    auto g = dev.open(0);
    CHECK(g.ok());
    CHECK(dev.open_files() == 1);
}

TEST_CASE("audio playback orders put_user before the header copy") {
    World w;
    AudioDevice dev(w.loop, w.kmem);
    auto f = dev.open(0);
    RecordingContext mem(w.user);
    auto hdr = w.user.alloc(AudioXfer::kSize);
    auto data = w.user.alloc(144 * 4);
    w.user.write(hdr, AudioXfer{static_cast<std::int32_t>(0xDEADBEEF), data, 144}.encode());

    CHECK(run(w.loop, dev.ioctl(*f, kAudioXfer, hdr, mem)) == 144);
    REQUIRE(mem.ops.size() == 4);
    CHECK(mem.ops[0].kind == "put");
    CHECK(mem.ops[0].addr == hdr);
    CHECK(mem.ops[1].kind == "from");
    CHECK(AudioXfer::decode(mem.ops[1].data).result == 0);
    CHECK(mem.ops[2].kind == "from");
    CHECK(mem.ops[2].data.size() == 48'000 * 3 / 1000 * 4);
    CHECK(mem.ops[3].kind == "put");
    CHECK(AudioXfer::decode(w.user.read(hdr, 16)).result == 144);
    CHECK(dev.stats().frames_played == 144);

    mem.ops.clear();
    w.user.write(hdr, AudioXfer{7, data, 0}.encode());
    CHECK(run(w.loop, dev.ioctl(*f, kAudioXfer, hdr, mem)) == 0);
    CHECK(mem.ops.size() == 2);
}

namespace {

Task<std::int64_t> play_for(AudioDevice& dev, FileId f, MemoryContext& mem, std::uint64_t hdr, std::uint64_t data,
                            UserMemory& user, std::uint32_t frames, int segments) {
    std::int64_t total = 0;
    for (int i = 0; i < segments; ++i) {
        user.write(hdr, AudioXfer{0, data, frames}.encode());
        total += co_await dev.ioctl(f, kAudioXfer, hdr, mem);
    }
    co_return total;
}

}  // namespace

TEST_CASE("audio never consumes faster than its clock") {
    World w;
    AudioConfig cfg;
    cfg.playback_ring_frames = 480;
    AudioDevice dev(w.loop, w.kmem, cfg);
    auto f = dev.open(0);
    DirectMemoryContext mem(w.user);
    auto hdr = w.user.alloc(16);
    auto data = w.user.alloc(480 * 4);
    auto total = run(w.loop, play_for(dev, *f, mem, hdr, data, w.user, 480, 100));
    CHECK(total == 48'000);
    const double elapsed = to_seconds(dev.stats().play_end - *dev.stats().first_play);
    CHECK(elapsed == doctest::Approx(1.0));
    // Everything but the final queued segment has been played by now.
    CHECK(static_cast<double>(total - 480) <= 48'000 * to_seconds(w.loop.now()) + 1e-6);
    CHECK(dev.stats().underruns == 0);
}

TEST_CASE("audio capture delivers frames at the device rate") {
    World w;
    AudioConfig cfg;
    cfg.capture_bytes_per_frame = 1;
    AudioDevice dev(w.loop, w.kmem, cfg);
    auto f = dev.open(0);
    DirectMemoryContext mem(w.user);
    auto hdr = w.user.alloc(16);
    auto data = w.user.alloc(4080);
    w.user.write(hdr, AudioXfer{-1, data, 4080}.encode());
    CHECK(run(w.loop, dev.ioctl(*f, kAudioXferCapture, hdr, mem)) == 4080);
    CHECK(to_ms(w.loop.now()) == doctest::Approx(85.0));
    auto got = w.user.read(data, 4080);
    for (std::uint32_t i = 0; i < 4080; ++i) REQUIRE(got[i] == AudioDevice::capture_byte(i, 0));
    CHECK(AudioXfer::decode(w.user.read(hdr, 16)).result == 4080);
}

TEST_CASE("framesource VGA buffers are 150 pages and fill with the test pattern") {
    World w;
    FramesourceDevice dev(w.loop, w.kmem);
    CHECK(dev.frame_bytes() == 640 * 480 * 2);
    CHECK(dev.frame_bytes() == 614'400);
    CHECK(dev.buffer_stride() / kPageSize == 150);

    std::vector<std::pair<std::uint64_t, std::size_t>> dmas;
    DeviceEnv env;
    env.dma_complete = [&](std::uint64_t k, std::size_t n) { dmas.emplace_back(k, n); };
    auto f = dev.open(0, env);
    RecordingContext mem(w.user, env);
    CHECK(run(w.loop, dev.ioctl(*f, kFrameDequeue, 0, mem)) == kEINVAL);

    for (std::uint64_t i = 0; i < 3; ++i)
        CHECK(run(w.loop, dev.mmap(*f, dev.buffer_stride(), i * dev.buffer_stride(), 0x1'0000'0000 + i * dev.buffer_stride(), mem)) > 0);
    CHECK(mem.ops.size() == 450);
    CHECK(dev.live_maps() == 3);
    CHECK(run(w.loop, dev.ioctl(*f, kFrameDequeue, 0, mem)) == kEAGAIN);

    CHECK(run(w.loop, dev.poll(*f, kPollIn, kPollForever)) == kPollIn);
    CHECK(to_ms(w.loop.now()) == doctest::Approx(1000.0 / 30).epsilon(1e-3));
    REQUIRE(dmas.size() == 1);
    CHECK(dmas[0].second == 614'400);
    auto idx = run(w.loop, dev.ioctl(*f, kFrameDequeue, 0, mem));
    CHECK(idx == 0);
    auto frame = check_frame(w.kmem.span(dmas[0].first, 614'400), 640);
    REQUIRE(frame);
    CHECK(*frame == 0);

    w.loop.run_until_time(w.loop.now() + from_seconds(1));
    // Buffer 0 is held; only the other two were refilled.
    CHECK(dmas.size() == 3);
    CHECK(run(w.loop, dev.ioctl(*f, kFrameDequeue, 0, mem)) == 1);
    w.loop.run_until_time(w.loop.now() + from_ms(40));
    CHECK(dmas.size() == 4);
    CHECK(dmas.back().first == dmas[0].first);

    dev.close_map(*f, 1);
    dev.close_map(*f, 2);
    dev.close_map(*f, 3);
    CHECK(dev.live_maps() == 0);
    dev.release(*f);
    CHECK(w.kmem.allocations() == 0);
}

TEST_CASE("framesource capture fills the 8 MB buffer with one DMA completion") {
    World w;
    FramesourceDevice dev(w.loop, w.kmem);
    auto f = dev.open(0);
    RecordingContext mem(w.user);
    CHECK(run(w.loop, dev.ioctl(*f, kFrameCapture, 0, mem)) == kEINVAL);
    CHECK(run(w.loop, dev.mmap(*f, round_up_pages(8'000'000), kCaptureMapOffset, 0x2'0000'0000, mem)) > 0);
    CHECK(mem.ops.size() == 1954);
    CHECK(run(w.loop, dev.ioctl(*f, kFrameCapture, 0, mem)) == 0);
    REQUIRE(mem.dma_lengths.size() == 1);
    CHECK(mem.dma_lengths[0] == 8'000'000);
    CHECK((mem.dma_lengths[0] + kPageSize - 1) / kPageSize == 1954);
}

TEST_CASE("framesource fills a shared buffer by id") {
    World w;
    FramesourceDevice dev(w.loop, w.kmem);
    auto k = w.kmem.alloc(614'400);
    DeviceEnv env;
    env.global_buffer = [&](std::uint32_t id) -> std::optional<std::pair<std::uint64_t, std::size_t>> {
        if (id == 7) return std::make_pair(*k, std::size_t{614'400});
        return std::nullopt;
    };
    auto f = dev.open(0, env);
    RecordingContext mem(w.user);
    CHECK(run(w.loop, dev.ioctl(*f, kFrameFillGlobal, 8, mem)) == kEINVAL);
    CHECK(run(w.loop, dev.ioctl(*f, kFrameFillGlobal, 7, mem)) == 0);
    CHECK(check_frame(w.kmem.span(*k, 614'400), 640) == 0u);
    CHECK(mem.dma_lengths == std::vector<std::size_t>{614'400});
}

TEST_CASE("frame pattern check detects corruption") {
    Bytes b(640 * 4 * 2);
    fill_frame(b, 77, 640);
    CHECK(check_frame(b, 640) == 77u);
    b[1000] ^= std::byte{1};
    CHECK_FALSE(check_frame(b, 640));
}

TEST_CASE("modem completes calls and texts after the carrier delay") {
    World w;
    ModemDevice dev(w.loop, w.kmem);
    auto f = dev.open(0);
    DirectMemoryContext mem(w.user);
    auto rec = w.user.alloc(16);
    auto out = w.user.alloc(8);

    w.user.write(rec, le_bytes<std::uint32_t>(kModemCall));
    CHECK(run(w.loop, dev.write(*f, rec, 16, mem)) == 16);
    CHECK(run(w.loop, dev.read(*f, out, 8, mem)) == kEAGAIN);
    CHECK(run(w.loop, dev.poll(*f, kPollIn, kPollForever)) == kPollIn);
    CHECK(to_seconds(w.loop.now()) == doctest::Approx(7.8));
    CHECK(run(w.loop, dev.read(*f, out, 8, mem)) == 8);
    CHECK(load_le<std::uint32_t>(w.user.read(out, 8), 0) == kModemCall);

    w.user.write(rec, le_bytes<std::uint32_t>(99));
    CHECK(run(w.loop, dev.write(*f, rec, 16, mem)) == kEINVAL);

    dev.set_config(ModemConfig{from_seconds(7.8), Duration::zero()});
    const auto t0 = w.loop.now();
    w.user.write(rec, le_bytes<std::uint32_t>(kModemSms));
    CHECK(run(w.loop, dev.write(*f, rec, 4, mem)) == 4);
    CHECK(run(w.loop, dev.poll(*f, kPollIn, kPollForever)) == kPollIn);
    CHECK(w.loop.now() == t0);
}

TEST_CASE("echodev transform, gather and indirect commands") {
    World w;
    EchoDevice dev(w.loop, w.kmem);
    auto f = dev.open(0);
    RecordingContext mem(w.user);
    auto arg = w.user.alloc(32);
    Bytes in(24);
    for (int i = 0; i < 8; ++i) in[4 + i] = std::byte{static_cast<std::uint8_t>(i)};
    w.user.write(arg, in);

    CHECK(run(w.loop, dev.ioctl(*f, kEchoTransform, arg, mem)) == 0);
    auto after = w.user.read(arg, 24);
    CHECK(load_le<std::uint32_t>(after, 0) == 1);
    for (int i = 0; i < 8; ++i) CHECK(std::to_integer<int>(after[12 + i]) == (0xFF ^ i));
    CHECK(load_le<std::uint32_t>(after, 20) == 28);
    REQUIRE(mem.ops.size() == 3);
    CHECK(mem.ops[0].kind == "put");
    CHECK(mem.ops[0].data.size() == 4);
    CHECK(mem.ops[1].kind == "from");
    CHECK(mem.ops[2].kind == "to");
    CHECK(mem.ops[2].data.size() == 12);

    mem.ops.clear();
    Bytes g(32);
    for (int i = 0; i < 32; ++i) g[i] = std::byte{static_cast<std::uint8_t>(i)};
    w.user.write(arg, g);
    CHECK(run(w.loop, dev.ioctl(*f, kEchoGather, arg, mem)) == 31 * 32 / 2);
    CHECK(mem.ops.size() == 4);

    CHECK(run(w.loop, dev.ioctl(*f, kEchoIndirect, arg, mem)) == 0);
    CHECK(std::to_integer<int>(w.user.read(arg + 8, 1)[0]) == 0xFF);
    CHECK(run(w.loop, dev.ioctl(*f, 0x1234, arg, mem)) == kEINVAL);
}

TEST_CASE("bad user addresses fault") {
    World w;
    EchoDevice dev(w.loop, w.kmem);
    auto f = dev.open(0);
    DirectMemoryContext mem(w.user);
    CHECK_THROWS_AS(run(w.loop, dev.ioctl(*f, kEchoTransform, 0x10, mem)), MemoryFault);
}

TEST_CASE("registry holds one device per class") {
    EventLoop loop;
    KernelMemory kmem;
    DeviceRegistry reg;
    add_reference_devices(reg, loop, kmem);
    CHECK(reg.classes() == std::vector<std::string>{"audio", "echodev", "framesource", "modem", "sensor"});
    CHECK(reg.find("gpu") == nullptr);
    CHECK_THROWS(reg.add(std::make_unique<EchoDevice>(loop, kmem)));
}

TEST_CASE("every device reopens after release") {
    EventLoop loop;
    KernelMemory kmem;
    DeviceRegistry reg;
    add_reference_devices(reg, loop, kmem);
    for (const auto& c : reg.classes()) {
        auto* d = reg.find(c);
        auto a = d->open(0);
        REQUIRE(a.ok());
        d->release(*a);
        CHECK(d->open(0).ok());
    }
}
