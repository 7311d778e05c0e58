#include <random>
#include <thread>

#include "doctest.h"
#include "rio/runtime/task.hpp"
#include "rio/wire/frame.hpp"
#include "rio/wire/payloads.hpp"
#include "rio/wire/sim_link.hpp"
#include "rio/wire/tcp.hpp"

using namespace rio;
using namespace rio::wire;

namespace {

Bytes random_bytes(std::mt19937_64& rng, std::size_t n) {
    Bytes b(n);
    for (auto& x : b) x = std::byte{static_cast<std::uint8_t>(rng())};
    return b;
}

// Header size from the field list: length, kind, channel, session, seq.
constexpr std::size_t kOracleHeader = sizeof(std::uint32_t) + 1 + 1 + sizeof(std::uint64_t) + sizeof(std::uint64_t);

Message msg(Kind k, std::size_t payload, std::uint64_t session = 1, std::uint64_t seq = 0) {
    Message m = make_message(k, Bytes(payload, std::byte{0x5a}), session);
    m.seq = seq;
    return m;
}

}  // namespace

TEST_CASE("minimal heartbeat frame is 22 bytes") {
    auto f = encode_frame(msg(Kind::Heartbeat, 0));
    REQUIRE(f.size() == 22);
    CHECK(std::to_integer<int>(f[0]) == 0);
    CHECK(std::to_integer<int>(f[3]) == 22);
    CHECK(std::to_integer<int>(f[4]) == static_cast<int>(Kind::Heartbeat));
    CHECK(std::to_integer<int>(f[5]) == static_cast<int>(Channel::Heartbeat));
    CHECK(std::to_integer<int>(f[13]) == 1);  // low byte of big-endian session id
}

TEST_CASE("frame length counts header plus payload") {
    auto m = msg(Kind::FileOpRequest, 576);
    auto f = encode_frame(m);
    std::size_t counted = 0;
    for ([[maybe_unused]] auto b : f) ++counted;
    CHECK(counted == kOracleHeader + 576);
    CHECK(counted == 598);
    ByteReader r(f);
    CHECK(r.u32() == 598);
}

TEST_CASE("frames round-trip for randomized messages") {
    std::mt19937_64 rng(42);
    for (int i = 0; i < 1000; ++i) {
        auto kind = static_cast<Kind>(rng() % 13);
        Message m = make_message(kind, random_bytes(rng, rng() % 300), rng());
        m.seq = rng();
        auto f = encode_frame(m);
        auto r = decode_frame(f);
        REQUIRE(r.status == DecodeStatus::Ok);
        CHECK(r.consumed == f.size());
        CHECK(r.message == m);
    }
}

TEST_CASE("decode rejects truncated and malformed frames") {
    auto f = encode_frame(msg(Kind::Heartbeat, 0));
    CHECK(decode_frame(ByteSpan(f).first(21)).status == DecodeStatus::NeedMoreBytes);
    CHECK(decode_frame(ByteSpan(f).first(2)).status == DecodeStatus::NeedMoreBytes);

    auto bad = f;
    bad[4] = std::byte{0xFF};
    CHECK(decode_frame(bad).status == DecodeStatus::ProtocolError);

    auto badch = f;
    badch[5] = std::byte{0x09};
    CHECK(decode_frame(badch).status == DecodeStatus::ProtocolError);

    auto wrong = encode_frame(msg(Kind::PageFetch, 9));
    wrong[5] = std::byte{static_cast<std::uint8_t>(Channel::FileOp)};
    CHECK(decode_frame(wrong).status == DecodeStatus::ProtocolError);

    auto shortlen = f;
    shortlen[3] = std::byte{10};
    CHECK(decode_frame(shortlen).status == DecodeStatus::ProtocolError);
}

TEST_CASE("concatenated frames decode one at a time") {
    auto a = msg(Kind::Open, 17, 3, 0);
    auto b = msg(Kind::OpenAck, 5, 3, 0);
    auto fa = encode_frame(a);
    auto fb = encode_frame(b);
    Bytes both = fa;
    both.insert(both.end(), fb.begin(), fb.end());

    auto r = decode_frame(both);
    REQUIRE(r.status == DecodeStatus::Ok);
    CHECK(r.consumed == fa.size());
    CHECK(r.message == a);

    FrameAssembler as;
    std::vector<Message> got;
    for (std::size_t i = 0; i < both.size(); i += 7) {
        as.feed(ByteSpan(both).subspan(i, std::min<std::size_t>(7, both.size() - i)));
        for (auto d = as.next(); d.status == DecodeStatus::Ok; d = as.next()) got.push_back(d.message);
    }
    REQUIRE(got.size() == 2);
    CHECK(got[0] == a);
    CHECK(got[1] == b);
    CHECK(as.buffered() == 0);
}

TEST_CASE("oversize payload is an encoding error") {
    CHECK_THROWS_AS(frame_size(kMaxFrameSize), EncodeError);
    CHECK(frame_size(kMaxFrameSize - kHeaderSize) == kMaxFrameSize);
}

TEST_CASE("payload codecs round-trip") {
    FileOpRequest q;
    q.op_id = 9;
    q.op = FileOp::Ioctl;
    q.flags = kReqOptimized;
    q.descriptor = 4;
    q.cmd = 0xC0184501;
    q.addr = 0x1000;
    q.length = 24;
    q.timeout_ns = -1;
    q.prefetch = {{0x1000, Bytes(24, std::byte{1})}, {0x9000, Bytes(3, std::byte{2})}};
    CHECK(FileOpRequest::decode(q.encode()) == q);

    FileOpResponse p{9, -22, {{0x1000, Bytes(4)}}, {{3, 0x100000000, 8192, 1}}};
    CHECK(FileOpResponse::decode(p.encode()) == p);

    CopyRequest cr{5, {{1, 2}, {10, 20}}, {{7, Bytes(4, std::byte{9})}}};
    CHECK(CopyRequest::decode(cr.encode()) == cr);
    CopyResponse cs{5, 0, {Bytes(2), Bytes(20)}};
    CHECK(CopyResponse::decode(cs.encode()) == cs);

    Open o{1, "sensor", 2};
    CHECK(Open::decode(o.encode()) == o);
    OpenAck oa{1, -19, 0};
    CHECK(OpenAck::decode(oa.encode()) == oa);
    CHECK(HeartbeatAck::decode(HeartbeatAck{17}.encode()).echo_seq == 17);
    CHECK(Cleanup::decode(Cleanup{CleanupCause::LinkDown}.encode()).cause == CleanupCause::LinkDown);

    PageFetch pf{2, 149, true};
    CHECK(PageFetch::decode(pf.encode()) == pf);
    PageData pd{2, 149, kDataGrantsOwnership, Bytes(kPageSize, std::byte{3})};
    CHECK(PageData::decode(pd.encode()) == pd);
    PageInvalidate pi{2, 0, {0, 1, 2, 149}};
    CHECK(PageInvalidate::decode(pi.encode()) == pi);

    PageUpdateBatch ub;
    ub.region_id = 2;
    for (std::uint32_t i = 0; i < 150; ++i) ub.pages.push_back({i, Bytes(kPageSize, std::byte{static_cast<std::uint8_t>(i)})});
    auto enc = ub.encode();
    CHECK(enc.size() == 8 + 150 * (4 + kPageSize));
    CHECK(PageUpdateBatch::decode(enc) == ub);

    CHECK_THROWS_AS(FileOpRequest::decode(ByteSpan(q.encode()).first(10)), DecodeError);
}

TEST_CASE("link config presets and file format") {
    auto lan = LinkConfig::preset("lan");
    CHECK(lan.rtt_ms() == doctest::Approx(4.4));
    CHECK(lan.throughput_bps == doctest::Approx(14.3e6));
    auto wan = LinkConfig::preset("wan");
    CHECK(wan.rtt_ms() == doctest::Approx(55.2));
    CHECK(wan.throughput_bps == doctest::Approx(1.2e6));
    CHECK(LinkConfig::preset("lan_avg").rtt_ms() == doctest::Approx(13.8));
    CHECK(LinkConfig::preset("loopback").transmit_time(1 << 20) == Duration::zero());
    CHECK_THROWS(LinkConfig::preset("moon"));

    auto c = LinkConfig::parse("# custom\nlatency_ms = 3.5\nthroughput_mbps=73.7\njitter_ms = 0.25\ndisconnect_at_ms = 1200\n");
    CHECK(c.one_way_latency_ms == 3.5);
    CHECK(c.throughput_bps == doctest::Approx(73.7e6));
    CHECK(c.jitter_ms == 0.25);
    REQUIRE(c.disconnect_at_ms);
    CHECK(*c.disconnect_at_ms == 1200);

    auto p = LinkConfig::parse("preset = wan\njitter_ms = 1\n");
    CHECK(p.one_way_latency_ms == doctest::Approx(27.6));
    CHECK(p.jitter_ms == 1);

    CHECK_THROWS(LinkConfig::parse("latency_ms = -1"));
    CHECK_THROWS(LinkConfig::parse("throughput_mbps = 0"));
    CHECK_THROWS(LinkConfig::parse("colour = blue"));
    CHECK_THROWS(LinkConfig::parse("latency_ms = fast"));
}

namespace {

struct Arrival {
    Kind kind;
    TimePoint at;
    std::uint64_t seq;
};

struct Harness {
    runtime::EventLoop loop;
    SimulatedLink link;
    std::vector<Arrival> at_server, at_client;

    explicit Harness(LinkConfig cfg, std::uint64_t seed = 1) : link(loop, cfg, seed) {
        link.server().on_receive([this](Message m) { at_server.push_back({m.kind, loop.now(), m.seq}); });
        link.client().on_receive([this](Message m) { at_client.push_back({m.kind, loop.now(), m.seq}); });
    }
};

LinkConfig custom(double one_way_ms, double mbps) {
    LinkConfig c;
    c.one_way_latency_ms = one_way_ms;
    c.throughput_bps = mbps * 1e6;
    return c;
}

}  // namespace

TEST_CASE("8 MB over 14.3 Mbps takes about 4.5 s") {
    Harness h(custom(0, 14.3));
    h.link.client().send(msg(Kind::PageUpdateBatch, 8'000'000));
    h.loop.run_until_idle();
    REQUIRE(h.at_server.size() == 1);
    const double oracle = (8'000'000.0 + kOracleHeader) * 8 / 14.3e6;
    CHECK(to_seconds(h.at_server[0].at) == doctest::Approx(oracle).epsilon(1e-9));
    CHECK(to_seconds(h.at_server[0].at) == doctest::Approx(4.5).epsilon(0.01));
}

TEST_CASE("empty frame on the lan preset is latency dominated") {
    Harness h(LinkConfig::preset("lan"));
    h.link.client().send(msg(Kind::Heartbeat, 0));
    h.loop.run_until_idle();
    REQUIRE(h.at_server.size() == 1);
    const double oracle = 2.2 + 22 * 8 / 14.3e6 * 1e3;
    CHECK(to_ms(h.at_server[0].at) == doctest::Approx(oracle).epsilon(1e-6));
    CHECK(to_ms(h.at_server[0].at) == doctest::Approx(2.2).epsilon(0.01));
}

TEST_CASE("VGA frames at 73.7 Mbps sustain 15 per second") {
    Harness h(custom(0, 73.7));
    for (int i = 0; i < 30; ++i) h.link.server().send(msg(Kind::PageUpdateBatch, 614'400 - kOracleHeader));
    h.loop.run_until_idle();
    REQUIRE(h.at_client.size() == 30);
    const double per_frame = 614'400.0 * 8 / 73.7e6;
    CHECK(to_ms(h.at_client[0].at) == doctest::Approx(per_frame * 1e3).epsilon(1e-6));
    CHECK(per_frame * 1e3 == doctest::Approx(66.7).epsilon(0.001));
    const double fps = 29 / to_seconds(h.at_client[29].at - h.at_client[0].at);
    CHECK(fps == doctest::Approx(15.0).epsilon(0.01));
}

TEST_CASE("delivery is FIFO per channel even with jitter") {
    auto cfg = custom(5, 10);
    cfg.jitter_ms = 20;
    Harness h(cfg, 7);
    std::mt19937_64 rng(3);
    for (int i = 0; i < 200; ++i) {
        h.loop.schedule_after(from_ms(static_cast<double>(rng() % 50)), [&h, n = rng() % 4000] {
            h.link.client().send(msg(Kind::Heartbeat, 0));
            h.link.client().send(msg(Kind::PageData, n));
        });
    }
    h.loop.run_until_idle();
    REQUIRE(h.at_server.size() == 400);
    for (std::size_t i = 1; i < h.at_server.size(); ++i) CHECK(h.at_server[i - 1].at <= h.at_server[i].at);
}

TEST_CASE("heartbeats overtake a bulk transfer but keep their own order") {
    Harness h(custom(2.2, 14.3));
    h.link.server().send(msg(Kind::PageUpdateBatch, 8'000'000));
    h.loop.schedule_after(from_ms(100), [&] { h.link.server().send(msg(Kind::HeartbeatAck, 8, 1, 0)); });
    h.loop.schedule_after(from_ms(200), [&] { h.link.server().send(msg(Kind::HeartbeatAck, 8, 1, 1)); });
    h.loop.schedule_after(from_ms(300), [&] { h.link.server().send(msg(Kind::FileOpResponse, 10)); });
    h.loop.run_until_idle();
    REQUIRE(h.at_client.size() == 4);
    const double ack_tx = 30 * 8 / 14.3e6 * 1e3;
    CHECK(h.at_client[0].kind == Kind::HeartbeatAck);
    CHECK(to_ms(h.at_client[0].at) == doctest::Approx(100 + ack_tx + 2.2).epsilon(1e-6));
    CHECK(h.at_client[1].kind == Kind::HeartbeatAck);
    CHECK(h.at_client[1].seq == 1);
    CHECK(h.at_client[2].kind == Kind::PageUpdateBatch);
    const double bulk_tx = (8'000'000.0 + kOracleHeader) * 8 / 14.3e6 * 1e3;
    CHECK(to_ms(h.at_client[2].at) == doctest::Approx(bulk_tx + 2.2).epsilon(1e-9));
    // The next bulk-lane frame waits for the time the two acks spent on the wire.
    CHECK(h.at_client[3].kind == Kind::FileOpResponse);
    const double resp_tx = (10.0 + kOracleHeader) * 8 / 14.3e6 * 1e3;
    CHECK(to_ms(h.at_client[3].at) == doctest::Approx(bulk_tx + 2 * ack_tx + resp_tx + 2.2).epsilon(1e-9));
}

TEST_CASE("round trips count FileOp responses delivered") {
    Harness h(LinkConfig::preset("lan"));
    h.link.client().send(msg(Kind::FileOpRequest, 10));
    h.link.server().send(msg(Kind::CopyRequest, 10));
    h.link.client().send(msg(Kind::CopyResponse, 10));
    h.link.server().send(msg(Kind::FileOpResponse, 10));
    h.link.client().send(msg(Kind::Heartbeat, 0));
    h.link.server().send(msg(Kind::HeartbeatAck, 8));
    h.loop.run_until_idle();
    auto c = h.link.counters();
    CHECK(c.round_trips == 2);
    CHECK(c.frames == 6);
    CHECK(c.bytes_on_wire == 4 * (22 + 10) + 22 + 30);
}

TEST_CASE("frames landing after the cut are lost silently") {
    auto cfg = custom(10, 1);
    cfg.disconnect_at_ms = 15;
    Harness h(cfg);
    bool down = false;
    h.link.server().on_down([&](DownReason, const std::string&) { down = true; });
    h.link.client().send(msg(Kind::Heartbeat, 0));          // arrives at ~10.2 ms
    h.link.client().send(msg(Kind::FileOpRequest, 1000));  // would arrive after 15 ms
    h.loop.schedule_after(from_ms(20), [&] { h.link.client().send(msg(Kind::Heartbeat, 0)); });
    h.loop.run_until_idle();
    CHECK(h.at_server.size() == 1);
    CHECK(h.link.counters().frames_dropped == 2);
    CHECK_FALSE(down);
    CHECK(h.link.is_disconnected());
}

TEST_CASE("closing one end reaches the peer one latency later") {
    Harness h(custom(3, 100));
    TimePoint when{};
    h.link.client().on_down([&](DownReason r, const std::string&) {
        CHECK(r == DownReason::Closed);
        when = h.loop.now();
    });
    h.link.server().close();
    h.loop.run_until_idle();
    CHECK(to_ms(when) == doctest::Approx(3.0));
    CHECK_FALSE(h.link.client().connected());
}

namespace {

class ProbeEndpoint final : public Endpoint {
public:
    bool connected() const override { return open; }
    void close() override { open = false; }
    void inject(Message m) { deliver(std::move(m), 22 + m.payload.size()); }
    bool open = true;

protected:
    bool transmit(Message, std::size_t) override { return true; }
};

}  // namespace

TEST_CASE("sequence numbers are per session and channel and gap-free") {
    ProbeEndpoint e;
    std::vector<Message> got;
    std::string why;
    e.on_receive([&](Message m) { got.push_back(m); });
    e.on_down([&](DownReason r, const std::string& d) {
        CHECK(r == DownReason::ProtocolError);
        why = d;
    });
    e.inject(msg(Kind::Heartbeat, 0, 1, 0));
    e.inject(msg(Kind::PageFetch, 9, 1, 0));
    e.inject(msg(Kind::Heartbeat, 0, 1, 1));
    e.inject(msg(Kind::Heartbeat, 0, 2, 0));
    CHECK(got.size() == 4);
    e.inject(msg(Kind::Heartbeat, 0, 1, 3));
    CHECK(got.size() == 4);
    CHECK(why.find("sequence gap") != std::string::npos);
    CHECK_FALSE(e.open);
}

TEST_CASE("tcp endpoints carry frames between loops") {
    runtime::EventLoop loop(runtime::EventLoop::Mode::WallClock);
    std::unique_ptr<TcpEndpoint> accepted;
    std::vector<Message> at_server, at_client;
    TcpListener listener(loop, "127.0.0.1", 0, [&](std::unique_ptr<TcpEndpoint> ep) {
        accepted = std::move(ep);
        accepted->on_receive([&](Message m) {
            at_server.push_back(m);
            accepted->send(make_message(Kind::HeartbeatAck, HeartbeatAck{m.seq}.encode(), m.session_id));
        });
    });
    auto client = tcp_connect(loop, "127.0.0.1", listener.port());
    client->on_receive([&](Message m) { at_client.push_back(m); });
    for (int i = 0; i < 3; ++i) client->send(make_message(Kind::Heartbeat, {}, 11));
    client->send(make_message(Kind::PageData, Bytes(70'000, std::byte{7}), 11));
    loop.run_until([&] { return at_client.size() == 4 || loop.now() > TimePoint{from_seconds(5)}; });
    REQUIRE(at_server.size() == 4);
    CHECK(at_server[3].payload.size() == 70'000);
    REQUIRE(at_client.size() == 4);
    CHECK(HeartbeatAck::decode(at_client[2].payload).echo_seq == 2);
    CHECK(client->counters().bytes_sent == 3 * 22 + 70'022);

    bool down = false;
    client->on_down([&](DownReason, const std::string&) { down = true; });
    accepted->close();
    loop.run_until([&] { return down || loop.now() > TimePoint{from_seconds(5)}; });
    CHECK(down);
}
