#include <algorithm>
#include <stdexcept>

#include <fmt/format.h>

#include "rio/harness/bench.hpp"

namespace rio::harness {

namespace {

Row row(const Scenario& sc, std::string param, std::string metric, double value, const LinkUse& link) {
    return Row{sc.name, std::move(param), std::move(metric), value, link.round_trips, link.bytes_on_wire};
}

std::string_view path_name(AudioPath p) { return p == AudioPath::Playback ? "playback" : "capture"; }

void audio_rows(const BenchOptions& o, std::vector<Row>& out) {
    std::vector<std::pair<double, AudioPath>> runs;
    if (o.buffer_ms.empty()) {
        if (!o.audio_path || *o.audio_path == AudioPath::Playback)
            for (int ms = 3; ms <= 10; ++ms) runs.push_back({ms, AudioPath::Playback});
        if (!o.audio_path || *o.audio_path == AudioPath::Capture) runs.push_back({85, AudioPath::Capture});
    } else {
        for (double ms : o.buffer_ms) runs.push_back({ms, o.audio_path.value_or(AudioPath::Playback)});
    }
    for (auto [ms, path] : runs) {
        auto r = bench_audio(o.scenario, ms, path);
        auto param = fmt::format("{};buffer_ms={}", path_name(path), ms);
        out.push_back(row(o.scenario, param, "rate_khz", r.rate_khz, r.link));
        out.push_back(row(o.scenario, param, path == AudioPath::Playback ? "underruns" : "dropped_frames",
                          static_cast<double>(path == AudioPath::Playback ? r.underruns : r.dropped), r.link));
    }
}

void camera_rows(const BenchOptions& o, std::vector<Row>& out) {
    if (o.camera_mode == CameraMode::Capture) {
        auto r = bench_camera_capture(o.scenario);
        out.push_back(row(o.scenario, "capture;bytes=8000000", "capture_s", r.seconds, r.link));
        out.push_back(row(o.scenario, "capture;bytes=8000000", "intact", r.intact ? 1 : 0, r.link));
        return;
    }
    const auto skip = std::min<std::uint32_t>(50, o.frames / 2);
    auto r = bench_camera_stream(o.scenario, o.resolution, o.frames, skip);
    auto param = fmt::format("stream;{};frames={}", o.resolution.str(), o.frames);
    out.push_back(row(o.scenario, param, "fps", r.fps, r.link));
    out.push_back(row(o.scenario, param, "corrupt_frames", r.corrupt, r.link));
}

void disconnect_rows(const BenchOptions& o, std::vector<Row>& out) {
    const client::ClientConfig cc;
    const auto timeout = cc.heartbeat_interval * cc.heartbeat_miss_limit;
    for (auto target : {DisconnectTarget::Sensor, DisconnectTarget::Modem}) {
        auto results = disconnect_sweep(o.scenario, target, o.points);
        LinkUse total;
        bool cleaned = true, outcome = true, all_ok = true;
        double worst_detect = 0;
        for (const auto& r : results) {
            total.round_trips += r.link.round_trips;
            total.bytes_on_wire += r.link.bytes_on_wire;
            cleaned = cleaned && r.census.empty() && r.kernel_allocations == 0 && r.device_open_files == 0 &&
                      r.client_clean && r.fresh_open_ok;
            outcome = outcome && (target == DisconnectTarget::Sensor ? r.fell_back : r.errored);
            all_ok = all_ok && r.ok(timeout);
            worst_detect = std::max(worst_detect, r.detect_ms);
        }
        auto param = fmt::format("{};points={}", to_string(target), o.points);
        out.push_back(row(o.scenario, param, "cleanup_complete", cleaned ? 1 : 0, total));
        out.push_back(row(o.scenario, param, target == DisconnectTarget::Sensor ? "fallback_engaged" : "errored",
                          outcome ? 1 : 0, total));
        out.push_back(row(o.scenario, param, "max_detect_ms", worst_detect, total));
        out.push_back(row(o.scenario, param, "all_ok", all_ok ? 1 : 0, total));
    }
}

}  // namespace

std::vector<Row> run_bench(std::string_view which, const BenchOptions& o) {
    std::vector<Row> out;
    const auto& sc = o.scenario;
    if (which == "audio") {
        audio_rows(o, out);
    } else if (which == "camera") {
        camera_rows(o, out);
    } else if (which == "sensor") {
        auto r = bench_sensor(sc, o.samples);
        auto param = fmt::format("samples={}", o.samples);
        out.push_back(row(sc, param, "mean_ms", r.mean_ms, r.link));
        out.push_back(row(sc, param, "min_ms", r.min_ms, r.link));
        out.push_back(row(sc, param, "max_ms", r.max_ms, r.link));
    } else if (which == "modem") {
        auto r = bench_modem(sc);
        out.push_back(row(sc, "call", "remote_s", r.remote_call_s, r.link));
        out.push_back(row(sc, "call", "local_s", r.local_call_s, r.link));
        out.push_back(row(sc, "call", "delta_ms", (r.remote_call_s - r.local_call_s) * 1000, r.link));
        out.push_back(row(sc, "sms", "remote_s", r.remote_sms_s, r.link));
        out.push_back(row(sc, "sms", "local_s", r.local_sms_s, r.link));
        out.push_back(row(sc, "sms", "delta_ms", (r.remote_sms_s - r.local_sms_s) * 1000, r.link));
    } else if (which == "copy") {
        auto r = bench_copy(sc);
        auto param = sc.optimize ? "optimized" : "unoptimized";
        out.push_back(row(sc, param, "round_trips", static_cast<double>(r.link.round_trips), r.link));
        out.push_back(row(sc, param, "memory_matches", r.memory_matches ? 1 : 0, r.link));
    } else if (which == "disconnect") {
        disconnect_rows(o, out);
    } else {
        throw std::invalid_argument(fmt::format("unknown benchmark '{}'", which));
    }
    return out;
}

}  // namespace rio::harness
