#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "rio/client/client.hpp"
#include "rio/devmodel/devices.hpp"
#include "rio/server/server.hpp"
#include "rio/wire/sim_link.hpp"

namespace rio::harness {

/// A link plus the knobs every benchmark shares.
struct Scenario {
    std::string name = "lan";
    wire::LinkConfig link = wire::LinkConfig::preset("lan");
    std::uint64_t seed = 1;
    bool optimize = true;
    std::optional<dsm::DmaPolicy> dsm;  // unset: each benchmark picks its natural policy

    /// lan / lan_avg / wan / wan_avg / loopback. Throws std::invalid_argument.
    static Scenario preset(std::string_view name, std::uint64_t seed = 1);
};

struct Resolution {
    std::uint32_t width = 640;
    std::uint32_t height = 480;

    /// "640x480", or one of vga / 720p / 1080p. Throws std::invalid_argument.
    static Resolution parse(std::string_view text);
    std::string str() const;
};

struct TestbedOptions {
    std::size_t kernel_bytes = 32u << 20;
    std::size_t user_bytes = 16u << 20;
    client::ClientConfig client;
    server::ServerConfig server;

    static TestbedOptions sized(std::size_t kernel, std::size_t user = 16u << 20) {
        TestbedOptions o;
        o.kernel_bytes = kernel;
        o.user_bytes = user;
        return o;
    }
};

/// Client and server on one simulated link, with the reference devices.
/// Heartbeats are running once constructed.
class Testbed {
public:
    explicit Testbed(const Scenario& sc, TestbedOptions opts = {});

    runtime::EventLoop loop;
    wire::SimulatedLink link;
    devmodel::KernelMemory kmem;
    devmodel::DeviceRegistry devices;
    server::Server server;
    devmodel::UserMemory mem;
    client::Client client;

    template <typename D>
    D& device(std::string_view cls) {
        return dynamic_cast<D&>(*devices.find(cls));
    }
};

struct LinkUse {
    std::uint64_t round_trips = 0;
    std::uint64_t bytes_on_wire = 0;

    static LinkUse of(const wire::SimulatedLink& link);
    LinkUse operator-(const LinkUse& o) const { return {round_trips - o.round_trips, bytes_on_wire - o.bytes_on_wire}; }
};

enum class AudioPath { Playback, Capture };

struct AudioResult {
    double rate_khz = 0;
    std::uint64_t frames = 0;
    std::uint64_t underruns = 0;
    std::uint64_t dropped = 0;
    LinkUse link;
};

/// Back-to-back transfers of buffer_ms worth of frames for `span` of audio.
/// Playback rate counts device time including gaps; capture uses 8-bit mono.
AudioResult bench_audio(const Scenario& sc, double buffer_ms, AudioPath path = AudioPath::Playback,
                        Duration span = from_seconds(2));

struct StreamResult {
    double fps = 0;
    std::uint32_t frames = 0;
    std::uint32_t corrupt = 0;
    LinkUse link;
};

/// Steady-state rate over `frames` frames, ignoring the first `skip`.
StreamResult bench_camera_stream(const Scenario& sc, Resolution res, std::uint32_t frames = 1000,
                                 std::uint32_t skip = 50, std::uint32_t buffers = 4);

struct CaptureResult {
    double seconds = 0;
    bool intact = false;
    LinkUse link;
};

/// Still capture into a mapped buffer, timed until the client holds the image.
CaptureResult bench_camera_capture(const Scenario& sc, std::size_t bytes = 8'000'000);

struct SensorResult {
    double mean_ms = 0;
    double min_ms = 0;
    double max_ms = 0;
    std::uint32_t samples = 0;
    LinkUse link;
};

/// poll+read cycles; each latency runs from acquisition start to read return.
SensorResult bench_sensor(const Scenario& sc, std::uint32_t samples = 100);

struct ModemResult {
    double remote_call_s = 0;
    double local_call_s = 0;
    double remote_sms_s = 0;
    double local_sms_s = 0;
    LinkUse link;
};

/// write, poll, read for one CALL and one SMS, remote and in-process.
ModemResult bench_modem(const Scenario& sc);

struct CopyResult {
    std::int64_t result = 0;
    bool memory_matches = false;
    LinkUse link;
};

/// One transform ioctl on echodev with the scenario's optimize setting.
CopyResult bench_copy(const Scenario& sc);

enum class DisconnectTarget { Sensor, Modem };
std::string_view to_string(DisconnectTarget t);

struct DisconnectResult {
    DisconnectTarget target = DisconnectTarget::Sensor;
    double cut_at_ms = 0;
    double detect_ms = 0;       // cut to the client noticing
    double op_outcome_ms = 0;   // cut to the interrupted operation resolving
    bool fell_back = false;     // the interrupted operation completed locally
    bool errored = false;       // the interrupted operation failed with ENOLINK
    server::Census census;
    std::size_t kernel_allocations = 0;
    std::size_t device_open_files = 0;
    bool client_clean = false;
    bool fresh_open_ok = false;
    LinkUse link;

    /// Sensor must fall back, modem must error, both within the heartbeat timeout.
    bool ok(Duration heartbeat_timeout) const;
};

/// Runs a closed loop on the device and cuts the link `cut_after` in.
DisconnectResult bench_disconnect(const Scenario& sc, DisconnectTarget target, Duration cut_after);
/// `points` cuts at seeded random instants.
std::vector<DisconnectResult> disconnect_sweep(const Scenario& sc, DisconnectTarget target, int points);

struct HeaderTrial {
    std::int32_t poison = 0;
    std::optional<std::int32_t> observed;  // result field as the driver read it
    std::int64_t rc = 0;
    std::int32_t returned = 0;  // result field in client memory afterwards
};

/// Audio transfer with a client header whose result field holds garbage.
HeaderTrial stale_prefetch_trial(std::mt19937_64& rng);

// ---- reporting ------------------------------------------------------------

struct Row {
    std::string scenario;
    std::string param;
    std::string metric;
    double value = 0;
    std::uint64_t round_trips = 0;
    std::uint64_t bytes_on_wire = 0;
};

std::string csv_header();
std::string to_csv(const Row& r);
void write_csv(std::ostream& out, const std::vector<Row>& rows);

enum class CameraMode { Stream, Capture };

struct BenchOptions {
    Scenario scenario;
    std::vector<double> buffer_ms;  // audio; empty sweeps 3..10 and 85
    std::optional<AudioPath> audio_path;
    CameraMode camera_mode = CameraMode::Stream;
    Resolution resolution;
    std::uint32_t frames = 1000;
    std::uint32_t samples = 100;
    int points = 50;
};

/// audio / camera / sensor / modem / copy / disconnect. Throws std::invalid_argument.
std::vector<Row> run_bench(std::string_view which, const BenchOptions& opts);

}  // namespace rio::harness
