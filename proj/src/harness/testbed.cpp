#include <ostream>
#include <stdexcept>

#include <fmt/format.h>

#include "rio/harness/bench.hpp"

namespace rio::harness {

Scenario Scenario::preset(std::string_view name, std::uint64_t seed) {
    Scenario sc;
    sc.name = std::string(name);
    sc.link = wire::LinkConfig::preset(name);
    sc.seed = seed;
    return sc;
}

Resolution Resolution::parse(std::string_view text) {
    if (text == "vga") return {640, 480};
    if (text == "720p") return {1280, 720};
    if (text == "1080p") return {1920, 1080};
    auto x = text.find('x');
    if (x == std::string_view::npos) throw std::invalid_argument(fmt::format("bad resolution '{}'", text));
    auto num = [&](std::string_view s) {
        std::uint32_t v = 0;
        if (s.empty()) throw std::invalid_argument(fmt::format("bad resolution '{}'", text));
        for (char c : s) {
            if (c < '0' || c > '9') throw std::invalid_argument(fmt::format("bad resolution '{}'", text));
            v = v * 10 + static_cast<std::uint32_t>(c - '0');
            if (v > 16384) throw std::invalid_argument(fmt::format("resolution too large '{}'", text));
        }
        if (v == 0) throw std::invalid_argument(fmt::format("bad resolution '{}'", text));
        return v;
    };
    return {num(text.substr(0, x)), num(text.substr(x + 1))};
}

std::string Resolution::str() const { return fmt::format("{}x{}", width, height); }

Testbed::Testbed(const Scenario& sc, TestbedOptions opts)
    : link(loop, sc.link, sc.seed),
      kmem(opts.kernel_bytes),
      server(loop, devices, kmem, opts.server),
      mem(0x10000, opts.user_bytes),
      client(loop, link.client(), mem, [&] {
          auto cc = opts.client;
          cc.optimize = sc.optimize;
          if (sc.dsm) cc.dsm_policy = *sc.dsm;
          return cc;
      }()) {
    devmodel::add_reference_devices(devices, loop, kmem);
    server.attach(link.server());
    client.start();
}

LinkUse LinkUse::of(const wire::SimulatedLink& link) {
    auto c = link.counters();
    return {c.round_trips, c.bytes_on_wire};
}

std::string csv_header() { return "scenario,param,metric,value,round_trips,bytes_on_wire"; }

std::string to_csv(const Row& r) {
    return fmt::format("{},{},{},{},{},{}", r.scenario, r.param, r.metric, r.value, r.round_trips, r.bytes_on_wire);
}

void write_csv(std::ostream& out, const std::vector<Row>& rows) {
    out << csv_header() << '\n';
    for (const auto& r : rows) out << to_csv(r) << '\n';
}

}  // namespace rio::harness
