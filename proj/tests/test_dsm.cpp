#include <random>
#include <unordered_set>

#include "doctest.h"
#include "dsm_world.hpp"
#include "rio/common/errors.hpp"
#include "rio/dsm/node.hpp"
#include "rio/dsm/section_tracker.hpp"
#include "rio/runtime/task.hpp"
#include "rio/wire/sim_link.hpp"

using namespace rio;
using namespace rio::dsm;
using dsmtest::D;
using dsmtest::Op;
using dsmtest::R;
using dsmtest::SearchResult;
using dsmtest::W;
using dsmtest::World;
using runtime::EventLoop;
using runtime::run;

namespace {

struct Recorder final : EngineListener {
    std::vector<CoherenceMsg> sent;
    std::vector<std::uint64_t> granted;
    std::vector<std::uint64_t> aborted;
    void on_send(CoherenceMsg m) override { sent.push_back(std::move(m)); }
    void on_granted(std::uint64_t id, std::uint32_t, std::uint32_t, AccessMode mode, MutableByteSpan b) override {
        granted.push_back(id);
        if (mode == AccessMode::Write) b[0] = std::byte{static_cast<std::uint8_t>(id)};
    }
    void on_aborted(std::uint64_t id) override { aborted.push_back(id); }
};

// Pumps messages between two engines until both directions are empty.
struct Pair {
    Recorder c, s;
    Bytes cmem, smem;
    CoherenceEngine client, server;
    int exchanged = 0;

    Pair(std::size_t pages, bool fetch_and_own = true, DmaPolicy policy = DmaPolicy::InvalidatePeer)
        : cmem(pages * 4096), smem(pages * 4096), client(Role::Client, &c, 4096, fetch_and_own),
          server(Role::Server, &s, 4096, fetch_and_own) {
        client.add_region(1, cmem, PageState::Invalid, policy);
        server.add_region(1, smem, PageState::ReadWrite, policy);
    }

    void pump() {
        while (!c.sent.empty() || !s.sent.empty()) {
            auto to_server = std::move(c.sent);
            c.sent.clear();
            for (auto& m : to_server) {
                ++exchanged;
                server.receive(m);
            }
            auto to_client = std::move(s.sent);
            s.sent.clear();
            for (auto& m : to_client) {
                ++exchanged;
                client.receive(m);
            }
        }
    }
};

SearchResult search_all(const std::vector<Op>& client_ops, const std::vector<Op>& server_ops, std::size_t len,
                        bool fetch_and_own, DmaPolicy policy, bool coherence) {
    try {
        return dsmtest::check_all(client_ops, server_ops, len, fetch_and_own, policy, coherence);
    } catch (const std::exception& e) {
        FAIL(e.what());
    }
    return {};
}

}  // namespace

// ---- engine basics ------------------------------------------------------------

TEST_CASE("write fault on an invalid page takes one round trip with fetch-and-own") {
    Pair p(1);
    CHECK_FALSE(p.client.access(1, 1, 0, AccessMode::Write));
    REQUIRE(p.c.sent.size() == 1);
    CHECK(std::get<wire::PageFetch>(p.c.sent[0]).want_ownership);
    p.pump();
    CHECK(p.exchanged == 2);
    CHECK(p.c.granted == std::vector<std::uint64_t>{1});
    CHECK(p.client.state(1, 0) == PageState::ReadWrite);
    CHECK(p.server.state(1, 0) == PageState::Invalid);
}

TEST_CASE("write fault without fetch-and-own reads then upgrades") {
    Pair p(1, false);
    p.client.access(1, 1, 0, AccessMode::Write);
    p.pump();
    CHECK(p.exchanged == 4);
    CHECK(p.c.granted.size() == 1);
    CHECK(p.client.state(1, 0) == PageState::ReadWrite);
    CHECK(p.server.state(1, 0) == PageState::Invalid);
}

TEST_CASE("read fault leaves both sides read-only, server write invalidates one-way") {
    Pair p(1);
    p.smem[0] = std::byte{9};
    p.client.access(1, 1, 0, AccessMode::Read);
    p.pump();
    CHECK(p.client.state(1, 0) == PageState::ReadOnly);
    CHECK(p.server.state(1, 0) == PageState::ReadOnly);
    CHECK(p.cmem[0] == std::byte{9});
    auto epoch = p.server.epoch(1, 0);

    CHECK(p.server.access(2, 1, 0, AccessMode::Write));
    CHECK(p.server.epoch(1, 0) == epoch + 1);
    REQUIRE(p.s.sent.size() == 1);
    CHECK(std::get<wire::PageInvalidate>(p.s.sent[0]).flags == 0);
    p.pump();
    CHECK(p.client.state(1, 0) == PageState::Invalid);
    CHECK(p.server.state(1, 0) == PageState::ReadWrite);
}

TEST_CASE("client upgrade of a read-only page waits for the server's ack") {
    Pair p(1);
    p.client.access(1, 1, 0, AccessMode::Read);
    p.pump();
    CHECK_FALSE(p.client.access(2, 1, 0, AccessMode::Write));
    auto& inv = std::get<wire::PageInvalidate>(p.c.sent.at(0));
    CHECK(inv.flags == wire::kInvalidateRequestAck);
    p.pump();
    CHECK(p.c.granted.back() == 2);
    CHECK(p.client.state(1, 0) == PageState::ReadWrite);
    CHECK(p.server.state(1, 0) == PageState::Invalid);
}

TEST_CASE("dma completion coalesces one invalidate per completion") {
    Pair p(4);
    for (std::uint64_t i = 0; i < 4; ++i) p.client.access(i + 1, 1, static_cast<std::uint32_t>(i), AccessMode::Write);
    p.pump();
    p.exchanged = 0;
    p.server.dma_complete(1, 0, 3);
    REQUIRE(p.s.sent.size() == 1);
    auto inv = std::get<wire::PageInvalidate>(p.s.sent[0]);
    CHECK(inv.pages == std::vector<std::uint32_t>{0, 1, 2});
    for (std::uint32_t pg = 0; pg < 3; ++pg) {
        CHECK(p.server.state(1, pg) == PageState::ReadWrite);
        CHECK(p.server.dma_state(1, pg) == PageState::ReadWrite);
    }
    p.pump();
    CHECK(p.exchanged == 1);
    CHECK(p.client.state(1, 0) == PageState::Invalid);
    CHECK(p.client.state(1, 3) == PageState::ReadWrite);
}

TEST_CASE("update-push sends one batch and leaves both sides read-only") {
    Pair p(3, true, DmaPolicy::UpdatePush);
    p.smem[4096] = std::byte{0x44};
    p.server.dma_complete(1, 0, 3);
    REQUIRE(p.s.sent.size() == 1);
    CHECK(std::get<wire::PageUpdateBatch>(p.s.sent[0]).pages.size() == 3);
    p.pump();
    for (std::uint32_t pg = 0; pg < 3; ++pg) {
        CHECK(p.client.state(1, pg) == PageState::ReadOnly);
        CHECK(p.server.state(1, pg) == PageState::ReadOnly);
    }
    CHECK(p.cmem[4096] == std::byte{0x44});
}

TEST_CASE("empty dma completion sends nothing") {
    Pair p(1);
    p.server.dma_complete(1, 0, 0);
    CHECK(p.s.sent.empty());
}

TEST_CASE("fetching a page the peer does not hold is a protocol violation") {
    Pair p(1);
    CHECK_THROWS_AS(p.client.receive(wire::PageFetch{1, 0, false}), ProtocolViolation);
    CHECK_THROWS_AS(p.client.receive(wire::PageFetch{1, 5, false}), ProtocolViolation);
    CHECK_THROWS_AS(p.client.receive(wire::PageData{1, 0, 0, Bytes(4096)}), ProtocolViolation);
    CHECK_NOTHROW(p.client.receive(wire::PageFetch{99, 0, false}));  // unknown region: dropped
}

TEST_CASE("data arriving for a page dma already took is ignored") {
    Pair p(1);
    p.client.access(1, 1, 0, AccessMode::Write);
    p.pump();
    p.cmem[0] = std::byte{0x11};
    p.server.access(2, 1, 0, AccessMode::Read);  // fetch goes out
    p.smem[0] = std::byte{0x22};
    p.server.dma_complete(1, 0, 1);
    p.pump();
    CHECK(p.smem[0] == std::byte{0x22});
    CHECK(p.server.state(1, 0) == PageState::ReadWrite);
    CHECK(p.client.state(1, 0) == PageState::Invalid);
    CHECK(p.s.granted == std::vector<std::uint64_t>{2});
}

TEST_CASE("removing a region aborts queued accesses") {
    Pair p(1);
    p.client.access(5, 1, 0, AccessMode::Read);
    p.client.access(6, 1, 0, AccessMode::Write);
    p.client.remove_region(1);
    CHECK(p.c.aborted == std::vector<std::uint64_t>{5, 6});
    CHECK_FALSE(p.client.has_region(1));
}

TEST_CASE("coherence messages round-trip through wire messages") {
    std::vector<CoherenceMsg> msgs{wire::PageFetch{3, 4, true}, wire::PageData{3, 4, 1, Bytes(4096, std::byte{7})},
                                   wire::PageInvalidate{3, 2, {1, 2}},
                                   wire::PageUpdateBatch{3, {{0, Bytes(4096, std::byte{1})}}}};
    for (auto& m : msgs) {
        auto wm = to_message(m, 77);
        CHECK(wm.channel == wire::Channel::Coherence);
        CHECK(wm.session_id == 77);
        CHECK(from_message(wm) == m);
    }
    CHECK_THROWS_AS(from_message(wire::make_message(wire::Kind::Heartbeat, {})), ProtocolError);
}

// ---- model checking ---------------------------------------------------------------

TEST_CASE("exhaustive interleavings: two nodes, two pages, reads and writes") {
    std::vector<Op> ops{R(0), R(1), W(0, 0), W(1, 0)};
    std::vector<Op> sops{R(0, 1), R(1, 1), W(0, 0, 1), W(1, 0, 1)};
    for (bool own : {true, false}) {
        auto res = search_all(ops, sops, 3, own, DmaPolicy::InvalidatePeer, true);
        MESSAGE("fetch_and_own=" << own << " states=" << res.states << " terminals=" << res.terminals);
        CHECK(res.states > 10000);
    }
}

TEST_CASE("exhaustive interleavings: dma against client readers") {
    std::vector<Op> ops{R(0), R(1)};
    std::vector<Op> sops{R(0, 1), W(1, 0, 1), D(0, 0), D(1, 0)};
    for (auto policy : {DmaPolicy::InvalidatePeer, DmaPolicy::UpdatePush}) {
        auto res = search_all(ops, sops, 3, true, policy, true);
        CHECK(res.terminals > 0);
    }
}

TEST_CASE("exhaustive interleavings: dma racing client writers keeps a single writer") {
    std::vector<Op> ops{R(0), W(0, 0), W(1, 0)};
    std::vector<Op> sops{W(0, 0, 1), D(0, 0), D(1, 0)};
    for (auto policy : {DmaPolicy::InvalidatePeer, DmaPolicy::UpdatePush})
        for (bool own : {true, false}) search_all(ops, sops, 2, own, policy, false);
}

TEST_CASE("randomized coordinated traces match a serial execution") {
    std::mt19937_64 rng(20240611);
    int traces = 0;
    for (; traces < 12000; ++traces) {
        try {
            dsmtest::random_coordinated_trace(rng);
        } catch (const std::exception& e) {
            FAIL("trace " << traces << ": " << e.what());
        }
    }
    CHECK(traces >= 10000);
}

TEST_CASE("randomized uncoordinated traces keep a single writer and converge") {
    std::mt19937_64 rng(77);
    for (int t = 0; t < 3000; ++t) {
        std::size_t pages = 1 + rng() % 3;
        World w(pages, rng() % 2 == 0, rng() % 2 ? DmaPolicy::UpdatePush : DmaPolicy::InvalidatePeer);
        std::vector<Op> cs, ss;
        for (int i = 0; i < 6; ++i) {
            auto page = static_cast<std::uint32_t>(rng() % pages);
            cs.push_back(rng() % 2 ? R(page) : W(page, static_cast<std::uint8_t>(1 + i)));
            auto sp = static_cast<std::uint32_t>(rng() % pages);
            auto k = rng() % 3;
            auto v = static_cast<std::uint8_t>(101 + i);
            ss.push_back(k == 0 ? R(sp, 1) : k == 1 ? W(sp, v, 1) : D(sp, v));
        }
        w.set_scripts(cs, ss);
        w.check_coherence(false);
        try {
            while (!w.done()) {
                std::vector<std::pair<int, bool>> moves;
                for (int n = 0; n < 2; ++n) {
                    if (w.can_deliver(n)) moves.push_back({n, true});
                    if (w.can_issue(n)) moves.push_back({n, false});
                }
                if (moves.empty()) World::fail("stalled");
                auto [n, deliver] = moves[rng() % moves.size()];
                if (deliver) w.deliver(n);
                else w.issue(n);
            }
            w.check_final();
        } catch (const std::exception& e) {
            FAIL("trace " << t << ": " << e.what());
        }
    }
}

// ---- section tracking -------------------------------------------------------------

TEST_CASE("split then coalesce restores section tracking") {
    std::mt19937_64 rng(5);
    const std::uint64_t base = 0xffff'8000'0000'0000;
    for (int t = 0; t < 300; ++t) {
        std::size_t sections = 2 + 2 * (rng() % 8);
        SectionTracker tr(base, sections * SectionTracker::kSectionSize);
        for (std::size_t s = 0; s < sections; ++s)
            tr.set_section_state(base + s * SectionTracker::kSectionSize, static_cast<PageState>(rng() % 3));
        auto before = tr.snapshot();
        auto off = rng() % (sections * SectionTracker::kSectionSize - 4096);
        auto len = 1 + rng() % std::min<std::uint64_t>(sections * SectionTracker::kSectionSize - off, 5 << 20);
        tr.split(base + off, len);
        CHECK(tr.granularity(base + off) == Granularity::Page);
        CHECK(tr.granularity(base + off + len - 1) == Granularity::Page);
        CHECK(tr.state(base + off) == before.section_state[off / SectionTracker::kSectionSize]);
        CHECK(tr.coalesce(base + off, len));
        CHECK(tr.snapshot() == before);
        CHECK(tr.split_units() == 0);
    }
}

TEST_CASE("split works in 2 MB units") {
    const std::uint64_t base = 0x4000'0000;
    SectionTracker tr(base, 8 << 20);
    tr.split(base + (3 << 20) + 100, 10);  // inside the second unit
    CHECK(tr.split_units() == 1);
    CHECK(tr.granularity(base + (2 << 20)) == Granularity::Page);
    CHECK(tr.granularity(base + (4 << 20) - 1) == Granularity::Page);
    CHECK(tr.granularity(base + (4 << 20)) == Granularity::Section);
    CHECK(tr.granularity(base) == Granularity::Section);
}

TEST_CASE("coalesce is refused while pages are mapped and folds to the most restrictive state") {
    const std::uint64_t base = 0x4000'0000;
    SectionTracker tr(base, 4 << 20);
    tr.split(base, 4096);
    tr.map(base, 2 * 4096);
    tr.set_page_state(base + 4096, PageState::ReadOnly);
    CHECK_FALSE(tr.coalesce(base, 4096));
    CHECK(tr.granularity(base) == Granularity::Page);
    tr.unmap(base, 2 * 4096);
    CHECK(tr.coalesce(base, 4096));
    CHECK(tr.state(base) == PageState::ReadOnly);
    CHECK(tr.state(base + (1 << 20)) == PageState::ReadWrite);
    CHECK_THROWS(tr.set_page_state(base, PageState::Invalid));
}

// ---- coroutine node over a link ---------------------------------------------------

TEST_CASE("dsm node reads and writes byte ranges across pages over a link") {
    EventLoop loop;
    wire::SimulatedLink link(loop, wire::LinkConfig::preset("lan"));
    DsmNode client(loop, Role::Client, [&](wire::Message m) { link.client().send(std::move(m)); });
    DsmNode server(loop, Role::Server, [&](wire::Message m) { link.server().send(std::move(m)); });
    link.client().on_receive([&](wire::Message m) { client.receive(m); });
    link.server().on_receive([&](wire::Message m) { server.receive(m); });

    Bytes smem(3 * 4096), cmem(3 * 4096);
    for (std::size_t i = 0; i < smem.size(); ++i) smem[i] = std::byte{static_cast<std::uint8_t>(i * 7)};
    server.engine().add_region(9, smem, PageState::ReadWrite);
    client.engine().add_region(9, cmem, PageState::Invalid);

    auto got = run(loop, client.read(9, 4000, 300));
    for (std::size_t i = 0; i < got.size(); ++i) REQUIRE(got[i] == smem[4000 + i]);
    CHECK(client.stats().faults == 2);
    auto t_read = loop.now();
    CHECK(to_ms(t_read) > 2 * 4.4);

    run(loop, client.write(9, 4090, Bytes(10, std::byte{0xEE})));
    auto back = run(loop, server.read(9, 4088, 14));
    CHECK(back[1] == std::byte{7 * 4089 & 0xff});
    for (int i = 2; i < 12; ++i) CHECK(back[i] == std::byte{0xEE});
    CHECK(client.engine().state(9, 0) == PageState::ReadOnly);
    CHECK(server.engine().state(9, 1) == PageState::ReadOnly);
}

TEST_CASE("aborting a node fails waiting accesses with Cancelled") {
    EventLoop loop;
    std::vector<wire::Message> outbox;
    DsmNode client(loop, Role::Client, [&](wire::Message m) { outbox.push_back(std::move(m)); });
    Bytes cmem(4096);
    client.engine().add_region(1, cmem, PageState::Invalid);
    bool cancelled = false;
    runtime::spawn(loop, [](DsmNode& c, bool& flag) -> runtime::Task<void> {
        try {
            co_await c.read(1, 0, 4);
        } catch (const Cancelled&) {
            flag = true;
        }
    }(client, cancelled));
    loop.run_until_idle();
    CHECK(outbox.size() == 1);
    CHECK(client.waiting() == 1);
    client.abort_all();
    loop.run_until_idle();
    CHECK(cancelled);
}
