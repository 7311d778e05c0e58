#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <fmt/format.h>

#include "rio/common/log.hpp"
#include "rio/harness/bench.hpp"

namespace rio::harness {

using client::Client;
using client::HandleId;
using devmodel::AudioDevice;
using devmodel::AudioXfer;
using devmodel::FramesourceDevice;
using devmodel::UserMemory;
using runtime::run;
using runtime::Task;

namespace {

HandleId open_or_throw(Testbed& tb, const std::string& cls) {
    auto h = run(tb.loop, tb.client.open(cls));
    if (!h) throw std::runtime_error(fmt::format("open {} failed ({})", cls, h.error_code()));
    return *h;
}

std::size_t kernel_arena(std::size_t need) {
    constexpr std::size_t kUnit = 2u << 20;
    return std::max<std::size_t>(32u << 20, (need + kUnit - 1) / kUnit * kUnit);
}

std::int64_t must(std::int64_t rc, std::string_view what) {
    if (rc < 0) throw std::runtime_error(fmt::format("{} failed ({})", what, rc));
    return rc;
}

Task<void> audio_loop(Client& c, UserMemory& mem, HandleId h, std::uint32_t cmd, std::uint64_t hdr,
                      std::uint64_t data, std::uint32_t frames, int segments) {
    for (int i = 0; i < segments; ++i) {
        mem.write(hdr, AudioXfer{0, data, frames}.encode());
        must(co_await c.ioctl(h, cmd, hdr), "audio transfer");
    }
}

Task<void> stream_loop(Client& c, HandleId h, std::vector<std::uint64_t> addrs, std::size_t bytes,
                       std::uint32_t width, std::uint32_t frames, std::vector<TimePoint>& times,
                       std::uint32_t& corrupt, runtime::EventLoop& loop) {
    std::uint32_t expect = 0;
    while (times.size() < frames) {
        auto idx = co_await c.ioctl(h, devmodel::kFrameDequeue, 0);
        if (idx == kEAGAIN) {
            must(co_await c.poll(h, devmodel::kPollIn, devmodel::kPollForever), "poll");
            continue;
        }
        must(idx, "dequeue");
        auto img = co_await c.page_read(addrs.at(static_cast<std::size_t>(idx)), bytes);
        auto n = devmodel::check_frame(img, width);
        if (!n || *n != (expect & 0xffff)) ++corrupt;
        ++expect;
        times.push_back(loop.now());
    }
}

Task<double> capture_once(Client& c, HandleId h, std::uint64_t addr, std::size_t bytes, std::uint32_t width,
                          bool& intact, runtime::EventLoop& loop) {
    const auto t0 = loop.now();
    must(co_await c.ioctl(h, devmodel::kFrameCapture, 0), "capture");
    auto img = co_await c.page_read(addr, bytes);
    const auto t1 = loop.now();
    intact = devmodel::check_frame(img, width).has_value();
    co_return to_seconds(t1 - t0);
}

Task<void> sensor_loop(Client& c, UserMemory& mem, HandleId h, std::uint64_t buf, std::uint32_t n,
                       std::vector<double>& lat_ms, runtime::EventLoop& loop) {
    while (lat_ms.size() < n) {
        must(co_await c.poll(h, devmodel::kPollIn, devmodel::kPollForever), "poll");
        auto rc = co_await c.read(h, buf, devmodel::SensorSample::kSize);
        if (rc == kEAGAIN) continue;
        must(rc, "sensor read");
        auto s = devmodel::SensorSample::decode(mem.read(buf, devmodel::SensorSample::kSize));
        lat_ms.push_back(static_cast<double>(loop.now().time_since_epoch().count() / 1000 -
                                             static_cast<std::int64_t>(s.armed_at_us)) /
                         1000.0);
    }
}

// One modem transaction through the remote stub.
Task<double> modem_remote(Client& c, UserMemory& mem, HandleId h, std::uint32_t tag, runtime::EventLoop& loop) {
    auto rec = mem.alloc(8);
    Bytes w(8);
    store_le<std::uint32_t>(w, 0, tag);
    mem.write(rec, w);
    const auto t0 = loop.now();
    must(co_await c.write(h, rec, 8), "modem write");
    for (;;) {
        must(co_await c.poll(h, devmodel::kPollIn, devmodel::kPollForever), "modem poll");
        auto rc = co_await c.read(h, rec, 8);
        if (rc == kEAGAIN) continue;
        must(rc, "modem read");
        break;
    }
    co_return to_seconds(loop.now() - t0);
}

// The same transaction against an in-process device.
Task<double> modem_local(devmodel::Device& dev, devmodel::FileId f, devmodel::MemoryContext& ctx, UserMemory& mem,
                         std::uint32_t tag, runtime::EventLoop& loop) {
    auto rec = mem.alloc(8);
    Bytes w(8);
    store_le<std::uint32_t>(w, 0, tag);
    mem.write(rec, w);
    const auto t0 = loop.now();
    must(co_await dev.write(f, rec, 8, ctx), "modem write");
    for (;;) {
        must(co_await dev.poll(f, devmodel::kPollIn, devmodel::kPollForever), "modem poll");
        auto rc = co_await dev.read(f, rec, 8, ctx);
        if (rc == kEAGAIN) continue;
        must(rc, "modem read");
        break;
    }
    co_return to_seconds(loop.now() - t0);
}

}  // namespace

AudioResult bench_audio(const Scenario& sc, double buffer_ms, AudioPath path, Duration span) {
    if (buffer_ms <= 0) throw std::invalid_argument("buffer_ms must be positive");
    Testbed tb(sc, TestbedOptions::sized(4u << 20));
    auto& dev = tb.device<AudioDevice>("audio");
    auto cfg = dev.config();
    const auto frames = static_cast<std::uint32_t>(std::lround(buffer_ms * cfg.rate_hz / 1000.0));
    std::uint32_t cmd = devmodel::kAudioXfer;
    std::uint32_t bpf = cfg.playback_bytes_per_frame;
    if (path == AudioPath::Playback) {
        cfg.playback_ring_frames = frames;
    } else {
        cfg.capture_bytes_per_frame = 1;
        cmd = devmodel::kAudioXferCapture;
        bpf = 1;
    }
    dev.set_config(cfg);
    tb.client.prefetch() = client::PrefetchRegistry::reference(cfg.playback_bytes_per_frame);

    auto h = open_or_throw(tb, "audio");
    auto hdr = tb.mem.alloc(AudioXfer::kSize);
    auto data = tb.mem.alloc(std::size_t{frames} * bpf);
    Bytes pcm(std::size_t{frames} * bpf);
    for (std::size_t i = 0; i < pcm.size(); ++i) pcm[i] = std::byte(static_cast<std::uint8_t>(i * 13));
    tb.mem.write(data, pcm);

    const int segments = std::max(1, static_cast<int>(std::llround(to_ms(span) / buffer_ms)));
    const auto before = LinkUse::of(tb.link);
    run(tb.loop, audio_loop(tb.client, tb.mem, h, cmd, hdr, data, frames, segments));

    AudioResult r;
    r.link = LinkUse::of(tb.link) - before;
    const auto& st = dev.stats();
    if (path == AudioPath::Playback) {
        r.frames = st.frames_played;
        r.underruns = st.underruns;
        const double secs = to_seconds(st.play_end - *st.first_play);
        r.rate_khz = static_cast<double>(st.frames_played) / secs / 1000.0;
    } else {
        r.frames = st.frames_captured;
        r.dropped = st.frames_dropped;
        const double secs = to_seconds(st.capture_end - *st.capture_start);
        r.rate_khz = static_cast<double>(st.frames_captured) / secs / 1000.0;
    }
    return r;
}

StreamResult bench_camera_stream(const Scenario& sc, Resolution res, std::uint32_t frames, std::uint32_t skip,
                                 std::uint32_t buffers) {
    if (skip == 0 || frames < skip + 2) throw std::invalid_argument("need at least one skipped frame and two counted");
    Scenario s = sc;
    if (!s.dsm) s.dsm = dsm::DmaPolicy::UpdatePush;
    const std::size_t stride = devmodel::round_up_pages(std::size_t{res.width} * res.height * 2);
    Testbed tb(s, TestbedOptions::sized(kernel_arena(stride * buffers + (2u << 20))));
    auto& dev = tb.device<FramesourceDevice>("framesource");
    dev.set_resolution(res.width, res.height);
    auto h = open_or_throw(tb, "framesource");
    std::vector<std::uint64_t> addrs;
    for (std::uint32_t i = 0; i < buffers; ++i)
        addrs.push_back(static_cast<std::uint64_t>(
            must(run(tb.loop, tb.client.mmap(h, dev.frame_bytes(), std::uint64_t{i} * dev.buffer_stride())), "mmap")));

    StreamResult r;
    std::vector<TimePoint> times;
    const auto before = LinkUse::of(tb.link);
    run(tb.loop, stream_loop(tb.client, h, addrs, dev.frame_bytes(), res.width, frames, times, r.corrupt, tb.loop));
    r.link = LinkUse::of(tb.link) - before;
    r.frames = static_cast<std::uint32_t>(times.size());
    r.fps = static_cast<double>(frames - skip) / to_seconds(times[frames - 1] - times[skip - 1]);
    return r;
}

CaptureResult bench_camera_capture(const Scenario& sc, std::size_t bytes) {
    Scenario s = sc;
    if (!s.dsm) s.dsm = dsm::DmaPolicy::UpdatePush;
    Testbed tb(s, TestbedOptions::sized(kernel_arena(devmodel::round_up_pages(bytes) + (4u << 20))));
    auto& dev = tb.device<FramesourceDevice>("framesource");
    dev.set_capture_bytes(bytes);
    auto h = open_or_throw(tb, "framesource");
    auto addr = must(run(tb.loop, tb.client.mmap(h, bytes, devmodel::kCaptureMapOffset)), "mmap");
    CaptureResult r;
    const auto before = LinkUse::of(tb.link);
    r.seconds = run(tb.loop, capture_once(tb.client, h, static_cast<std::uint64_t>(addr), bytes, dev.config().width,
                                          r.intact, tb.loop));
    r.link = LinkUse::of(tb.link) - before;
    return r;
}

SensorResult bench_sensor(const Scenario& sc, std::uint32_t samples) {
    if (samples == 0) throw std::invalid_argument("need at least one sample");
    Testbed tb(sc, TestbedOptions::sized(4u << 20));
    auto h = open_or_throw(tb, "sensor");
    auto buf = tb.mem.alloc(devmodel::SensorSample::kSize);
    std::vector<double> lat;
    const auto before = LinkUse::of(tb.link);
    run(tb.loop, sensor_loop(tb.client, tb.mem, h, buf, samples, lat, tb.loop));
    SensorResult r;
    r.link = LinkUse::of(tb.link) - before;
    r.samples = samples;
    r.mean_ms = std::accumulate(lat.begin(), lat.end(), 0.0) / static_cast<double>(lat.size());
    r.min_ms = *std::min_element(lat.begin(), lat.end());
    r.max_ms = *std::max_element(lat.begin(), lat.end());
    return r;
}

ModemResult bench_modem(const Scenario& sc) {
    ModemResult r;
    {
        Testbed tb(sc, TestbedOptions::sized(4u << 20));
        auto h = open_or_throw(tb, "modem");
        const auto before = LinkUse::of(tb.link);
        r.remote_call_s = run(tb.loop, modem_remote(tb.client, tb.mem, h, devmodel::kModemCall, tb.loop));
        r.remote_sms_s = run(tb.loop, modem_remote(tb.client, tb.mem, h, devmodel::kModemSms, tb.loop));
        r.link = LinkUse::of(tb.link) - before;
    }
    runtime::EventLoop loop;
    devmodel::KernelMemory kmem(2u << 20);
    devmodel::ModemDevice dev(loop, kmem);
    UserMemory mem(0x10000, 1u << 20);
    devmodel::DirectMemoryContext ctx(mem);
    auto f = dev.open(0);
    if (!f) throw std::runtime_error("local modem open failed");
    r.local_call_s = run(loop, modem_local(dev, *f, ctx, mem, devmodel::kModemCall, loop));
    r.local_sms_s = run(loop, modem_local(dev, *f, ctx, mem, devmodel::kModemSms, loop));
    dev.release(*f);
    return r;
}

CopyResult bench_copy(const Scenario& sc) {
    Testbed tb(sc, TestbedOptions::sized(4u << 20));
    auto h = open_or_throw(tb, "echodev");
    auto arg = tb.mem.alloc(24);
    Bytes in(8);
    std::mt19937_64 rng(sc.seed);
    for (auto& b : in) b = std::byte(static_cast<std::uint8_t>(rng()));
    tb.mem.write(arg + 4, in);
    const auto before = LinkUse::of(tb.link);
    CopyResult r;
    r.result = run(tb.loop, tb.client.ioctl(h, devmodel::kEchoTransform, arg));
    r.link = LinkUse::of(tb.link) - before;

    // Expected layout: counter, input, inverted input, byte sum.
    Bytes expect(24);
    store_le<std::uint32_t>(expect, 0, tb.device<devmodel::EchoDevice>("echodev").counter());
    std::uint32_t sum = 0;
    for (std::size_t i = 0; i < 8; ++i) {
        expect[4 + i] = in[i];
        expect[12 + i] = ~in[i];
        sum += std::to_integer<std::uint8_t>(in[i]);
    }
    store_le<std::uint32_t>(expect, 20, sum);
    r.memory_matches = tb.mem.read(arg, 24) == expect;
    return r;
}

HeaderTrial stale_prefetch_trial(std::mt19937_64& rng) {
    static constexpr std::string_view kLinks[] = {"lan", "wan", "loopback", "lan_avg"};
    auto sc = Scenario::preset(kLinks[rng() % 4], rng());
    sc.optimize = (rng() & 1) != 0;
    Testbed tb(sc, TestbedOptions::sized(2u << 20, 1u << 20));
    auto& dev = tb.device<AudioDevice>("audio");
    const auto frames = static_cast<std::uint32_t>(1 + rng() % 256);
    HeaderTrial t;
    do {
        t.poison = static_cast<std::int32_t>(rng());
    } while (t.poison == 0);
    auto h = open_or_throw(tb, "audio");
    auto hdr = tb.mem.alloc(AudioXfer::kSize);
    auto data = tb.mem.alloc(std::size_t{frames} * dev.config().playback_bytes_per_frame);
    tb.mem.write(hdr, AudioXfer{t.poison, data, frames}.encode());
    t.rc = run(tb.loop, tb.client.ioctl(h, devmodel::kAudioXfer, hdr));
    t.observed = dev.stats().last_header_result;
    t.returned = load_le<std::int32_t>(tb.mem.read(hdr, 4), 0);
    return t;
}

}  // namespace rio::harness
