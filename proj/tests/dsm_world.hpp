#pragma once

// Two coherence engines joined by FIFO channels, stepped by hand. Copyable so
// a search can branch on every choice point.

#include <array>
#include <cstdint>
#include <deque>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <variant>
#include <vector>

#include <fmt/format.h>

#include "rio/dsm/engine.hpp"

namespace dsmtest {

using namespace rio;
using namespace rio::dsm;

inline constexpr std::size_t kTinyPage = 2;
inline constexpr std::uint32_t kRegion = 7;
enum : int { kClient = 0, kServer = 1 };

struct Op {
    enum Kind : std::uint8_t { Read, Write, Dma } kind;
    std::uint32_t page;
    std::uint8_t value = 0;  // Write / Dma
    int node = kClient;
};

struct Token {};
using Packet = std::variant<CoherenceMsg, Token>;

class World {
public:
    struct Node {
        std::vector<Op> script;
        std::size_t next = 0;
        bool busy = false;
        std::vector<std::uint8_t> reads;
        std::vector<int> last_seen;  // per page: ordinal of newest write observed
    };

    World(std::size_t pages, bool fetch_and_own, DmaPolicy policy) : pages_(pages) {
        for (int i = 0; i < 2; ++i) {
            mem_[i].assign(pages * kTinyPage, std::byte{0});
            eng_.emplace_back(i == kServer ? Role::Server : Role::Client, nullptr, kTinyPage, fetch_and_own);
            node_[i].last_seen.assign(pages, 0);
        }
        order_.assign(256, -1);
        order_[0] = 0;
        wire_up();
        eng_[kClient].add_region(kRegion, mem_[kClient], PageState::Invalid, policy);
        eng_[kServer].add_region(kRegion, mem_[kServer], PageState::ReadWrite, policy);
    }

    World(const World& o)
        : pages_(o.pages_), mem_(o.mem_), eng_(o.eng_), chan_(o.chan_), node_(o.node_), current_(o.current_), order_(o.order_),
          writes_(o.writes_), coordinated_(o.coordinated_), global_(o.global_), gnext_(o.gnext_),
          expected_(o.expected_), check_serial_(o.check_serial_), check_coherence_(o.check_coherence_) {
        wire_up();
    }
    World& operator=(const World&) = delete;

    // Each node runs its own script concurrently.
    void set_scripts(std::vector<Op> client, std::vector<Op> server) {
        node_[kClient].script = std::move(client);
        node_[kServer].script = std::move(server);
    }

    // One global program; control passes between nodes through the channels.
    void set_coordinated(std::vector<Op> ops) {
        coordinated_ = true;
        global_ = std::move(ops);
        expected_.assign(pages_, 0);
    }

    void check_serial(bool on) { check_serial_ = on; }
    void check_coherence(bool on) { check_coherence_ = on; }

    // ---- choice points ----------------------------------------------------

    bool can_deliver(int to) const { return !chan_[to].empty(); }
    bool can_issue(int n) const {
        if (coordinated_) return false;
        auto& nd = node_[n];
        return !nd.busy && nd.next < nd.script.size();
    }

    void deliver(int to) {
        Packet p = std::move(chan_[to].front());
        chan_[to].pop_front();
        if (auto* m = std::get_if<CoherenceMsg>(&p)) {
            eng_[to].receive(*m);
        } else {
            issue_global(to);
        }
    }

    void issue(int n) {
        auto& nd = node_[n];
        Op op = nd.script[nd.next++];
        start(n, op);
    }

    // Kicks off a coordinated run (first op issued directly on its node).
    void begin() {
        if (coordinated_ && gnext_ < global_.size()) issue_global(global_[gnext_].node);
    }

    bool done() const {
        if (!chan_[0].empty() || !chan_[1].empty()) return false;
        if (coordinated_) return gnext_ == global_.size() && !node_[0].busy && !node_[1].busy;
        for (auto& nd : node_)
            if (nd.busy || nd.next < nd.script.size()) return false;
        return true;
    }

    bool stuck() const {
        return !done() && !can_deliver(0) && !can_deliver(1) && !can_issue(0) && !can_issue(1);
    }

    // ---- checks -------------------------------------------------------------

    // Holds whenever nothing is in flight.
    void check_quiescent() const {
        for (std::uint32_t p = 0; p < pages_; ++p) {
            auto c = eng_[kClient].state(kRegion, p);
            auto s = eng_[kServer].state(kRegion, p);
            if (c == PageState::ReadWrite && s != PageState::Invalid)
                fail(fmt::format("page {}: client RW while server {}", p, to_string(s)));
            if (s == PageState::ReadWrite && c != PageState::Invalid)
                fail(fmt::format("page {}: server RW while client {}", p, to_string(c)));
            if (c == PageState::Invalid && s == PageState::Invalid) fail(fmt::format("page {}: nobody holds it", p));
            if (c != PageState::Invalid && s != PageState::Invalid && value(kClient, p) != value(kServer, p))
                fail(fmt::format("page {}: copies disagree ({} vs {})", p, value(kClient, p), value(kServer, p)));
        }
    }

    // Value held by whoever has a valid copy.
    std::uint8_t final_value(std::uint32_t p) const {
        return eng_[kServer].state(kRegion, p) != PageState::Invalid ? value(kServer, p) : value(kClient, p);
    }

    // Final value must be the newest write in grant order (and, when
    // coordinated, in program order).
    void check_final() const {
        check_quiescent();
        for (std::uint32_t p = 0; p < pages_; ++p) {
            std::uint8_t want = 0;
            for (auto& [pg, v] : writes_)
                if (pg == p) want = v;
            if (check_coherence_ && final_value(p) != want) fail(fmt::format("page {}: final {} but last write was {}", p, final_value(p), want));
            if (coordinated_ && final_value(p) != expected_[p])
                fail(fmt::format("page {}: final {} but serial order says {}", p, final_value(p), expected_[p]));
        }
    }

    std::string fingerprint() const {
        std::string out;
        for (int i = 0; i < 2; ++i) {
            eng_[i].fingerprint(out);
            out += '|';
            for (auto& p : chan_[i]) {
                if (auto* m = std::get_if<CoherenceMsg>(&p)) {
                    out += fmt::format("m{}", m->index());
                    std::visit([&](const auto& x) { auto b = x.encode(); out.append(reinterpret_cast<const char*>(b.data()), b.size()); }, *m);
                } else {
                    out += 't';
                }
            }
            auto& nd = node_[i];
            out += fmt::format("|{}{}", nd.next, nd.busy ? 'b' : '-');
            for (auto s : nd.last_seen) out += fmt::format(",{}", s);
            out += '|';
        }
        for (auto& [p, v] : writes_) out += fmt::format("{}:{};", p, v);
        out += fmt::format("g{}", gnext_);
        return out;
    }

    const Node& node(int n) const { return node_[n]; }
    const CoherenceEngine& engine(int n) const { return eng_[n]; }
    std::uint8_t value(int n, std::uint32_t p) const { return static_cast<std::uint8_t>(mem_[n][p * kTinyPage]); }

    [[noreturn]] static void fail(const std::string& why) { throw std::logic_error(why); }

private:
    struct Hook final : EngineListener {
        World* w = nullptr;
        int side = 0;
        void on_send(CoherenceMsg msg) override { w->chan_[1 - side].push_back(std::move(msg)); }
        void on_granted(std::uint64_t id, std::uint32_t, std::uint32_t page, AccessMode mode, MutableByteSpan bytes) override {
            w->granted(side, id, page, mode, bytes);
        }
        void on_aborted(std::uint64_t) override { World::fail("access aborted"); }
    };

    void wire_up() {
        for (int i = 0; i < 2; ++i) {
            hooks_[i].w = this;
            hooks_[i].side = i;
            eng_[i].set_listener(&hooks_[i]);
            if (eng_[i].has_region(kRegion)) eng_[i].rebind(kRegion, mem_[i]);
        }
    }

    void start(int n, const Op& op) {
        auto& nd = node_[n];
        nd.busy = true;
        current_[n] = op;
        if (op.kind == Op::Dma) {
            if (n != kServer) fail("dma on the client");
            for (std::size_t b = 0; b < kTinyPage; ++b) mem_[n][op.page * kTinyPage + b] = std::byte{op.value};
            wrote(n, op.page, op.value);
            eng_[n].dma_complete(kRegion, op.page, 1);
            finished(n);
            return;
        }
        eng_[n].access(op.value, kRegion, op.page, op.kind == Op::Write ? AccessMode::Write : AccessMode::Read);
    }

    void granted(int n, std::uint64_t, std::uint32_t page, AccessMode mode, MutableByteSpan bytes) {
        auto& op = current_[n];
        if (page != op.page) fail("grant for the wrong page");
        if (mode == AccessMode::Write) {
            for (auto& b : bytes) b = std::byte{op.value};
            wrote(n, page, op.value);
        } else {
            auto v = static_cast<std::uint8_t>(bytes[0]);
            if (static_cast<std::uint8_t>(bytes[1]) != v) fail("torn page");
            node_[n].reads.push_back(v);
            if (order_[v] < 0) fail(fmt::format("read {} which was never written", v));
            if (check_coherence_ && order_[v] < node_[n].last_seen[page])
                fail(fmt::format("node {} page {}: read {} after seeing a newer write", n, page, v));
            node_[n].last_seen[page] = std::max(node_[n].last_seen[page], order_[v]);
            if (check_serial_ && coordinated_ && v != expected_[page])
                fail(fmt::format("node {} page {}: read {} but serial order says {}", n, page, v, expected_[page]));
        }
        finished(n);
    }

    void wrote(int n, std::uint32_t page, std::uint8_t v) {
        writes_.push_back({page, v});
        order_[v] = static_cast<int>(writes_.size());
        node_[n].last_seen[page] = order_[v];
        if (coordinated_) expected_[page] = v;
    }

    void finished(int n) {
        node_[n].busy = false;
        if (!coordinated_) return;
        ++gnext_;
        if (gnext_ >= global_.size()) return;
        int to = global_[gnext_].node;
        if (to == n) issue_global(n);
        else chan_[to].push_back(Token{});
    }

    void issue_global(int n) {
        const Op& op = global_[gnext_];
        if (op.node != n) fail("token delivered to the wrong node");
        start(n, op);
    }

    std::size_t pages_;
    std::array<Bytes, 2> mem_;
    std::vector<CoherenceEngine> eng_;
    std::array<std::deque<Packet>, 2> chan_;
    std::array<Node, 2> node_;
    std::array<Op, 2> current_{};
    std::array<Hook, 2> hooks_;
    std::vector<int> order_;  // value -> position in write order
    std::vector<std::pair<std::uint32_t, std::uint8_t>> writes_;
    bool coordinated_ = false;
    std::vector<Op> global_;
    std::size_t gnext_ = 0;
    std::vector<std::uint8_t> expected_;
    bool check_serial_ = true;
    bool check_coherence_ = true;
};

inline Op R(std::uint32_t p, int node = kClient) { return Op{Op::Read, p, 0, node}; }
inline Op W(std::uint32_t p, std::uint8_t v, int node = kClient) { return Op{Op::Write, p, v, node}; }
inline Op D(std::uint32_t p, std::uint8_t v) { return Op{Op::Dma, p, v, kServer}; }

struct SearchResult {
    std::size_t states = 0;
    std::size_t terminals = 0;
};

// Depth-first over every interleaving of deliveries and issues.
inline void explore(const World& start, SearchResult& res, std::unordered_set<std::string>& seen) {
    std::vector<World> stack;
    stack.push_back(start);
    while (!stack.empty()) {
        World w = std::move(stack.back());
        stack.pop_back();
        if (!seen.insert(w.fingerprint()).second) continue;
        ++res.states;
        if (w.done()) {
            w.check_final();
            ++res.terminals;
            continue;
        }
        if (w.stuck()) World::fail("no move possible before the program finished");
        if (!w.can_deliver(0) && !w.can_deliver(1) && !w.node(0).busy && !w.node(1).busy) w.check_quiescent();
        for (int to = 0; to < 2; ++to) {
            if (w.can_deliver(to)) {
                World next(w);
                next.deliver(to);
                stack.push_back(std::move(next));
            }
            if (w.can_issue(to)) {
                World next(w);
                next.issue(to);
                stack.push_back(std::move(next));
            }
        }
    }
}

inline std::vector<std::vector<Op>> programs(const std::vector<Op>& alphabet, std::size_t len, std::uint8_t first_value) {
    std::vector<std::vector<Op>> out{{}};
    for (std::size_t i = 0; i < len; ++i) {
        std::vector<std::vector<Op>> grown;
        for (auto& p : out)
            for (auto op : alphabet) {
                auto q = p;
                if (op.kind != Op::Read) op.value = static_cast<std::uint8_t>(first_value + i);
                q.push_back(op);
                grown.push_back(std::move(q));
            }
        out = std::move(grown);
    }
    return out;
}

inline SearchResult check_all(const std::vector<Op>& client_ops, const std::vector<Op>& server_ops, std::size_t len,
                       bool fetch_and_own, DmaPolicy policy, bool coherence) {
    SearchResult res;
    for (auto& cp : programs(client_ops, len, 1)) {
        for (auto& sp : programs(server_ops, len, 101)) {
            World w(2, fetch_and_own, policy);
            w.set_scripts(cp, sp);
            w.check_coherence(coherence);
            std::unordered_set<std::string> seen;
            try {
                explore(w, res, seen);
            } catch (const std::exception& e) {
                std::string prog;
                for (auto& o : cp) prog += fmt::format("c{}{}={} ", "RWD"[o.kind], o.page, o.value);
                for (auto& o : sp) prog += fmt::format("s{}{}={} ", "RWD"[o.kind], o.page, o.value);
                World::fail(prog + ": " + e.what());
            }
        }
    }
    return res;
}

// One random program run under a random delivery order, checked against a
// serial execution.
template <class Rng>
void random_coordinated_trace(Rng& rng) {
    std::size_t pages = 1 + rng() % 4;
    auto policy = rng() % 2 ? DmaPolicy::UpdatePush : DmaPolicy::InvalidatePeer;
    World w(pages, rng() % 4 != 0, policy);
    std::vector<Op> prog;
    std::size_t n = 1 + rng() % 12;
    for (std::size_t i = 0; i < n; ++i) {
        auto page = static_cast<std::uint32_t>(rng() % pages);
        int node = static_cast<int>(rng() % 2);
        auto v = static_cast<std::uint8_t>(i + 1);
        switch (rng() % 5) {
            case 0:
            case 1: prog.push_back(R(page, node)); break;
            case 2:
            case 3: prog.push_back(W(page, v, node)); break;
            default: prog.push_back(D(page, v)); break;
        }
    }
    w.set_coordinated(prog);
    w.begin();
    while (!w.done()) {
        bool a = w.can_deliver(0), b = w.can_deliver(1);
        if (!a && !b) World::fail("stalled");
        int to = a && b ? static_cast<int>(rng() % 2) : (a ? 0 : 1);
        w.deliver(to);
    }
    w.check_final();
}

}  // namespace dsmtest
