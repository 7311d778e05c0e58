#include <stdexcept>

#include <fmt/format.h>

#include "rio/harness/bench.hpp"

namespace rio::harness {

using client::Client;
using client::HandleId;
using devmodel::UserMemory;
using runtime::run;
using runtime::Task;

namespace {

struct OpRecord {
    TimePoint start;
    TimePoint end;
    std::int64_t rc = 0;
    bool local = false;  // served by the fallback device
};

Task<std::int64_t> timed(Task<std::int64_t> op, Client& c, std::vector<OpRecord>& log, runtime::EventLoop& loop) {
    const auto t0 = loop.now();
    const auto fb = c.stats().fallback_ops;
    auto rc = co_await std::move(op);
    log.push_back({t0, loop.now(), rc, c.stats().fallback_ops != fb});
    co_return rc;
}

Task<void> workload(Client& c, UserMemory& mem, HandleId h, DisconnectTarget target, TimePoint stop_at,
                    std::vector<OpRecord>& log, runtime::EventLoop& loop) {
    auto buf = mem.alloc(16);
    while (loop.now() < stop_at) {
        if (target == DisconnectTarget::Sensor) {
            if (co_await timed(c.poll(h, devmodel::kPollIn, devmodel::kPollForever), c, log, loop) < 0) co_return;
            auto rc = co_await timed(c.read(h, buf, devmodel::SensorSample::kSize), c, log, loop);
            if (rc < 0 && rc != kEAGAIN) co_return;
        } else {
            Bytes rec(8);
            store_le<std::uint32_t>(rec, 0, devmodel::kModemSms);
            mem.write(buf, rec);
            if (co_await timed(c.write(h, buf, 8), c, log, loop) < 0) co_return;
            if (co_await timed(c.poll(h, devmodel::kPollIn, devmodel::kPollForever), c, log, loop) < 0) co_return;
            auto rc = co_await timed(c.read(h, buf, 8), c, log, loop);
            if (rc < 0 && rc != kEAGAIN) co_return;
        }
    }
}

Task<bool> probe(Client& c, UserMemory& mem, HandleId h, DisconnectTarget target) {
    auto buf = mem.alloc(16);
    if (target == DisconnectTarget::Sensor) {
        if (co_await c.poll(h, devmodel::kPollIn, devmodel::kPollForever) != devmodel::kPollIn) co_return false;
        co_return co_await c.read(h, buf, devmodel::SensorSample::kSize) ==
            static_cast<std::int64_t>(devmodel::SensorSample::kSize);
    }
    Bytes rec(8);
    store_le<std::uint32_t>(rec, 0, devmodel::kModemCall);
    mem.write(buf, rec);
    co_return co_await c.write(h, buf, 8) == 8;
}

std::string device_class(DisconnectTarget t) { return t == DisconnectTarget::Sensor ? "sensor" : "modem"; }

}  // namespace

std::string_view to_string(DisconnectTarget t) { return t == DisconnectTarget::Sensor ? "sensor" : "modem"; }

bool DisconnectResult::ok(Duration heartbeat_timeout) const {
    const double limit = to_ms(heartbeat_timeout);
    const bool outcome = target == DisconnectTarget::Sensor ? fell_back : (errored && op_outcome_ms <= limit);
    return outcome && detect_ms <= limit && census.empty() && kernel_allocations == 0 && device_open_files == 0 &&
           client_clean && fresh_open_ok;
}

DisconnectResult bench_disconnect(const Scenario& sc, DisconnectTarget target, Duration cut_after) {
    Testbed tb(sc, TestbedOptions::sized(4u << 20));
    devmodel::KernelMemory local_kmem(2u << 20);
    std::unique_ptr<devmodel::SensorDevice> local;
    if (target == DisconnectTarget::Sensor) {
        local = std::make_unique<devmodel::SensorDevice>(tb.loop, local_kmem);
        tb.client.register_local_fallback(*local);
    }
    const auto cls = device_class(target);

    if (run(tb.loop, tb.client.alloc_global_buffer(1, 8192)) < 0) throw std::runtime_error("global buffer failed");
    auto h = run(tb.loop, tb.client.open(cls));
    if (!h) throw std::runtime_error(fmt::format("open {} failed", cls));

    const auto cut = tb.loop.now() + cut_after;
    const auto stop_at = cut + from_seconds(3);
    tb.link.disconnect_at(cut);
    std::vector<OpRecord> log;
    runtime::spawn(tb.loop, workload(tb.client, tb.mem, *h, target, stop_at, log, tb.loop));
    tb.loop.run_until_time(stop_at + from_seconds(1));

    DisconnectResult r;
    r.target = target;
    r.cut_at_ms = to_ms(cut_after);
    r.link = LinkUse::of(tb.link);
    r.detect_ms = tb.client.disconnected_at() ? to_ms(*tb.client.disconnected_at() - cut) : 1e12;
    r.op_outcome_ms = 1e12;
    bool in_flight_local = false, served_after = false;
    for (const auto& op : log) {
        if (op.start <= cut && cut < op.end) {
            r.op_outcome_ms = to_ms(op.end - cut);
            in_flight_local = op.local && op.rc != kENOLINK;
            r.errored = op.rc == kENOLINK;
        }
        // The workload keeps going after the cut; the fallback has to deliver data.
        if (op.start > cut && op.local && op.rc > 0) served_after = true;
    }
    r.fell_back = in_flight_local && served_after;
    r.census = tb.server.census();
    r.kernel_allocations = tb.kmem.allocations();
    r.device_open_files = tb.devices.find(cls)->open_files();
    auto res = tb.client.residuals();
    r.client_clean = res.regions == 0 && res.pending_ops == 0 && res.dsm_waiters == 0;

    // A new session must be able to use the device again.
    wire::SimulatedLink link2(tb.loop, sc.link, sc.seed + 1);
    tb.server.attach(link2.server());
    UserMemory mem2(0x10000, 1u << 20);
    Client c2(tb.loop, link2.client(), mem2);
    c2.start();
    auto h2 = run(tb.loop, c2.open(cls));
    r.fresh_open_ok = h2.ok() && run(tb.loop, probe(c2, mem2, *h2, target));
    c2.shutdown();
    tb.loop.run_until_time(tb.loop.now() + from_ms(500));
    r.fresh_open_ok = r.fresh_open_ok && tb.server.census().empty();
    return r;
}

std::vector<DisconnectResult> disconnect_sweep(const Scenario& sc, DisconnectTarget target, int points) {
    std::mt19937_64 rng(sc.seed * 1'000'003 + static_cast<std::uint64_t>(target));
    std::vector<DisconnectResult> out;
    for (int i = 0; i < points; ++i) {
        const auto us = 100'000 + static_cast<std::int64_t>(rng() % 2'900'000);
        out.push_back(bench_disconnect(sc, target, Duration{us * 1000}));
    }
    return out;
}

}  // namespace rio::harness
