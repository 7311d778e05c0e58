// rio: run the device server, a demo client, or the simulated benchmarks.

#include <atomic>
#include <csignal>
#include <iostream>
#include <functional>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "rio/harness/bench.hpp"
#include "rio/wire/tcp.hpp"

using namespace rio;

namespace {

std::atomic<bool> g_stop{false};

struct LinkFlags {
    std::string link = "lan";
    std::optional<double> latency_ms;
    std::optional<double> throughput_mbps;
    std::uint64_t seed = 1;
    std::string optimize = "on";
    std::optional<std::string> dsm;
};

void add_link_flags(CLI::App* cmd, LinkFlags& f) {
    cmd->add_option("--link", f.link, "Link preset")
        ->check(CLI::IsMember({"lan", "lan_avg", "wan", "wan_avg", "loopback", "custom"}))
        ->capture_default_str();
    cmd->add_option("--latency-ms", f.latency_ms, "One-way latency override (ms)")->check(CLI::NonNegativeNumber);
    cmd->add_option("--throughput-mbps", f.throughput_mbps, "Throughput override (Mbit/s)")
        ->check(CLI::PositiveNumber);
    cmd->add_option("--seed", f.seed, "Simulation seed")->capture_default_str();
    cmd->add_option("--optimize", f.optimize, "Prefetch and batch ioctl copies")
        ->check(CLI::IsMember({"on", "off"}))
        ->capture_default_str();
    cmd->add_option("--dsm", f.dsm, "Policy after DMA completion")->check(CLI::IsMember({"invalidate", "push"}));
}

harness::Scenario scenario_from(const LinkFlags& f) {
    harness::Scenario sc;
    if (f.link == "custom") {
        if (!f.latency_ms || !f.throughput_mbps)
            throw CLI::ValidationError("--link custom", "needs --latency-ms and --throughput-mbps");
        sc.name = "custom";
        sc.link = wire::LinkConfig{};
    } else {
        sc = harness::Scenario::preset(f.link);
        if (f.latency_ms || f.throughput_mbps) sc.name = "custom";
    }
    if (f.latency_ms) sc.link.one_way_latency_ms = *f.latency_ms;
    if (f.throughput_mbps) sc.link.throughput_bps = *f.throughput_mbps * 1e6;
    sc.link.validate();
    sc.seed = f.seed;
    sc.optimize = f.optimize == "on";
    if (f.dsm) sc.dsm = *f.dsm == "push" ? dsm::DmaPolicy::UpdatePush : dsm::DmaPolicy::InvalidatePeer;
    return sc;
}

int serve(const std::string& bind, std::uint16_t port, double duration_s) {
    runtime::EventLoop loop(runtime::EventLoop::Mode::WallClock);
    devmodel::KernelMemory kmem(64u << 20);
    devmodel::DeviceRegistry devices;
    devmodel::add_reference_devices(devices, loop, kmem);
    server::Server srv(loop, devices, kmem);
    wire::TcpListener listener(loop, bind, port, [&](std::unique_ptr<wire::TcpEndpoint> ep) {
        auto id = srv.attach(std::move(ep));
        std::cerr << fmt::format("session {} attached\n", id);
    });
    std::cerr << fmt::format("serving {} on {}:{}\n", fmt::join(devices.classes(), ","), bind, listener.port());
    std::signal(SIGINT, [](int) { g_stop = true; });
    std::signal(SIGTERM, [](int) { g_stop = true; });
    const auto until = TimePoint{from_seconds(duration_s)};
    std::function<void()> tick = [&] {
        if (g_stop || (duration_s > 0 && loop.now() >= until))
            loop.stop();
        else
            loop.schedule_after(from_ms(100), tick);
    };
    tick();
    loop.run_until([] { return false; });
    return 0;
}

runtime::Task<std::vector<harness::Row>> client_demo(client::Client& c, devmodel::UserMemory& mem,
                                                     wire::Endpoint& ep) {
    std::vector<harness::Row> rows;
    auto use = [&] {
        auto& k = ep.counters();
        return harness::LinkUse{k.responses_received + c.stats().copy_requests_served, k.bytes_sent + k.bytes_received};
    };
    auto h = co_await c.open("echodev");
    if (!h) throw std::runtime_error(fmt::format("open echodev failed ({})", h.error_code()));
    auto arg = mem.alloc(24);
    mem.write(arg + 4, Bytes(8, std::byte{0x5a}));
    auto before = use();
    auto t0 = c.config().optimize;
    auto rc = co_await c.ioctl(*h, devmodel::kEchoTransform, arg);
    auto d = use() - before;
    rows.push_back({"tcp", t0 ? "optimized" : "unoptimized", "echodev_result", static_cast<double>(rc), d.round_trips,
                    d.bytes_on_wire});

    auto s = co_await c.open("sensor");
    if (!s) throw std::runtime_error(fmt::format("open sensor failed ({})", s.error_code()));
    auto buf = mem.alloc(devmodel::SensorSample::kSize);
    for (int i = 0; i < 3; ++i) {
        before = use();
        co_await c.poll(*s, devmodel::kPollIn, devmodel::kPollForever);
        auto n = co_await c.read(*s, buf, devmodel::SensorSample::kSize);
        d = use() - before;
        rows.push_back({"tcp", fmt::format("sample={}", i), "sensor_read_bytes", static_cast<double>(n), d.round_trips,
                        d.bytes_on_wire});
    }
    co_await c.close(*s);
    co_await c.close(*h);
    rows.push_back({"tcp", "heartbeat", "rtt_ms", c.rtt().estimate_ms(), 0, 0});
    co_return rows;
}

int client_main(const std::string& host, std::uint16_t port, bool optimize) {
    runtime::EventLoop loop(runtime::EventLoop::Mode::WallClock);
    auto ep = wire::tcp_connect(loop, host, port);
    devmodel::UserMemory mem;
    client::ClientConfig cc;
    cc.optimize = optimize;
    client::Client c(loop, *ep, mem, cc);
    c.start();
    auto rows = runtime::run(loop, client_demo(c, mem, *ep));
    c.shutdown();
    harness::write_csv(std::cout, rows);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Remote device files over a simulated or real network"};
    app.require_subcommand(1);

    std::string bind = "127.0.0.1";
    std::uint16_t port = 7300;
    double duration_s = 0;
    auto* serve_cmd = app.add_subcommand("serve", "Host the reference devices over TCP");
    serve_cmd->add_option("--bind", bind)->capture_default_str();
    serve_cmd->add_option("--port", port)->capture_default_str();
    serve_cmd->add_option("--duration-s", duration_s, "Exit after this long (0 runs until interrupted)");

    std::string host = "127.0.0.1";
    std::string client_opt = "on";
    auto* client_cmd = app.add_subcommand("client", "Exercise a remote server and print CSV");
    client_cmd->add_option("--host", host)->capture_default_str();
    client_cmd->add_option("--port", port)->capture_default_str();
    client_cmd->add_option("--optimize", client_opt)->check(CLI::IsMember({"on", "off"}))->capture_default_str();

    auto* bench_cmd = app.add_subcommand("bench", "Run a simulated benchmark and print CSV");
    std::string which;
    LinkFlags lf;
    harness::BenchOptions bo;
    std::optional<std::string> mode, path, resolution;
    bench_cmd->add_option("which", which, "Benchmark")
        ->required()
        ->check(CLI::IsMember({"audio", "camera", "sensor", "modem", "copy", "disconnect"}));
    add_link_flags(bench_cmd, lf);
    bench_cmd->add_option("--buffer-ms", bo.buffer_ms, "Audio segment sizes (default: sweep)")
        ->check(CLI::PositiveNumber);
    bench_cmd->add_option("--path", path, "Audio direction")->check(CLI::IsMember({"playback", "capture"}));
    bench_cmd->add_option("--resolution", resolution, "Camera resolution, e.g. 640x480");
    bench_cmd->add_option("--mode", mode, "camera: stream|capture, copy: optimized|unoptimized")
        ->check(CLI::IsMember({"stream", "capture", "optimized", "unoptimized"}));
    bench_cmd->add_option("--frames", bo.frames, "Camera stream frames")->check(CLI::Range(3u, 1'000'000u));
    bench_cmd->add_option("--samples", bo.samples, "Sensor samples")->check(CLI::Range(1u, 1'000'000u));
    bench_cmd->add_option("--points", bo.points, "Disconnect fault points")->check(CLI::Range(1, 100'000));

    CLI11_PARSE(app, argc, argv);

    try {
        if (*serve_cmd) return serve(bind, port, duration_s);
        if (*client_cmd) return client_main(host, port, client_opt == "on");

        bo.scenario = scenario_from(lf);
        if (path) bo.audio_path = *path == "capture" ? harness::AudioPath::Capture : harness::AudioPath::Playback;
        if (resolution) bo.resolution = harness::Resolution::parse(*resolution);
        if (mode) {
            if (which == "camera" && (*mode == "stream" || *mode == "capture"))
                bo.camera_mode = *mode == "capture" ? harness::CameraMode::Capture : harness::CameraMode::Stream;
            else if (which == "copy" && (*mode == "optimized" || *mode == "unoptimized"))
                bo.scenario.optimize = *mode == "optimized";
            else
                throw CLI::ValidationError("--mode", fmt::format("'{}' does not apply to {}", *mode, which));
        }
        harness::write_csv(std::cout, harness::run_bench(which, bo));
        return 0;
    } catch (const CLI::Error& e) {
        return app.exit(e);
    } catch (const std::exception& e) {
        std::cerr << "rio: " << e.what() << '\n';
        return 1;
    }
}
