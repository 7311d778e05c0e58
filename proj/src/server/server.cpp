#include "rio/server/server.hpp"

#include <algorithm>
#include <cstring>
#include <set>

#include <fmt/format.h>

#include "rio/common/errors.hpp"
#include "rio/common/log.hpp"

namespace rio::server {

using devmodel::kPageSize;
using wire::Chunk;
using wire::CleanupCause;
using wire::FileOp;
using wire::Kind;
using wire::Range;

namespace {

class CopyLimitExceeded : public std::runtime_error {
public:
    CopyLimitExceeded() : std::runtime_error("too many copy rounds") {}
};

bool overlaps(std::uint64_t a, std::size_t alen, std::uint64_t b, std::size_t blen) {
    return a < b + blen && b < a + alen;
}

}  // namespace

struct Server::Session {
    struct Desc {
        devmodel::Device* dev;
        devmodel::FileId file;
        std::uint32_t flags;
    };
    struct Mapping {
        std::uint32_t desc;
        devmodel::MapId map;
        std::uint64_t kaddr;
        std::size_t length;
        std::uint64_t user_addr;
    };
    struct Global {
        std::uint64_t kaddr;
        std::size_t length;
    };

    std::uint64_t id = 0;
    wire::Endpoint* ep = nullptr;
    std::shared_ptr<wire::Endpoint> owned;
    bool live = true;
    runtime::CancelSource cancel;
    std::map<std::uint32_t, Desc> descs;
    std::uint32_t next_desc = 1;
    std::map<std::uint32_t, Mapping> maps;  // by region id
    std::uint32_t next_region = 1;
    std::map<std::uint32_t, Global> globals;  // by buffer id
    std::unique_ptr<dsm::DsmNode> dsm;
    std::map<std::uint64_t, runtime::Promise<wire::CopyResponse>> copies;
    std::set<OpContext*> running;
    TimePoint last_heartbeat{};
    std::optional<runtime::EventLoop::TimerId> watchdog;

    std::optional<std::pair<std::uint64_t, std::size_t>> region_extent(std::uint32_t rid) const {
        if (rid & dsm::kGlobalRegionBit) {
            auto it = globals.find(rid & ~dsm::kGlobalRegionBit);
            if (it == globals.end()) return std::nullopt;
            return std::pair{it->second.kaddr, it->second.length};
        }
        auto it = maps.find(rid);
        if (it == maps.end()) return std::nullopt;
        return std::pair{it->second.kaddr, it->second.length};
    }
};

/// Process memory as seen by one in-flight file operation. Optimized
/// requests serve copies from the shipped prefetch set and return all writes
/// in one batch; unoptimized ones go back to the client for every copy.
class Server::OpContext final : public devmodel::MemoryContext {
public:
    OpContext(Server& srv, std::shared_ptr<Session> s, std::uint64_t op_id, bool optimized, std::vector<Chunk> prefetch)
        : srv_(srv), s_(std::move(s)), op_id_(op_id), optimized_(optimized), cache_(std::move(prefetch)) {
        s_->running.insert(this);
    }
    ~OpContext() override { s_->running.erase(this); }

    runtime::Task<Bytes> copy_from_user(std::uint64_t addr, std::size_t len) override {
        if (len == 0) co_return Bytes{};
        Bytes out(len);
        std::vector<bool> have(len, false);
        if (optimized_) {
            for (auto& c : cache_) {
                auto lo = std::max(addr, c.addr);
                auto hi = std::min(addr + len, c.addr + c.data.size());
                for (auto a = lo; a < hi; ++a) {
                    out[a - addr] = c.data[a - c.addr];
                    have[a - addr] = true;
                }
            }
        }
        std::vector<Range> missing;
        for (std::size_t i = 0; i < len;) {
            if (have[i]) {
                ++i;
                continue;
            }
            std::size_t j = i;
            while (j < len && !have[j]) ++j;
            missing.push_back({addr + i, j - i});
            i = j;
        }
        if (missing.empty()) {
            ++srv_.stats_.cache_hits;
            co_return out;
        }
        ++srv_.stats_.cache_misses;
        auto resp = co_await round(missing, std::exchange(deferred_, {}));
        if (resp.data.size() != missing.size()) throw ProtocolError("copy response does not match the request");
        for (std::size_t k = 0; k < missing.size(); ++k) {
            auto& d = resp.data[k];
            if (d.size() != missing[k].len) throw ProtocolError("copy response range has the wrong size");
            std::memcpy(out.data() + (missing[k].addr - addr), d.data(), d.size());
            if (optimized_) cache_.push_back(Chunk{missing[k].addr, std::move(d)});
        }
        co_return out;
    }

    runtime::Task<void> copy_to_user(std::uint64_t addr, Bytes data) override {
        if (data.empty()) co_return;
        if (optimized_) {
            stage(addr, std::move(data));
            co_return;
        }
        auto writes = std::exchange(deferred_, {});
        writes.push_back(Chunk{addr, std::move(data)});
        co_await round({}, std::move(writes));
    }

    runtime::Task<void> put_user_bytes(std::uint64_t addr, Bytes data) override {
        if (optimized_) stage(addr, std::move(data));
        else deferred_.push_back(Chunk{addr, std::move(data)});
        co_return;
    }

    void map_page(std::uint64_t kaddr, std::uint64_t uaddr) override { mapped_.push_back({kaddr, uaddr}); }

    void dma_complete(std::uint64_t kaddr, std::size_t len) override { srv_.dma_complete(*s_, kaddr, len); }

    std::vector<Chunk> take_batch() {
        auto out = std::move(batch_);
        for (auto& d : deferred_) out.push_back(std::move(d));
        batch_.clear();
        deferred_.clear();
        return out;
    }

    std::size_t cache_entries() const { return cache_.size(); }
    const std::vector<std::pair<std::uint64_t, std::uint64_t>>& mapped() const { return mapped_; }

private:
    // Queues a write for the response and keeps overlapping prefetched bytes current.
    void stage(std::uint64_t addr, Bytes data) {
        for (auto& c : cache_) {
            if (!overlaps(addr, data.size(), c.addr, c.data.size())) continue;
            auto lo = std::max(addr, c.addr);
            auto hi = std::min(addr + data.size(), c.addr + c.data.size());
            std::memcpy(c.data.data() + (lo - c.addr), data.data() + (lo - addr), hi - lo);
        }
        batch_.push_back(Chunk{addr, std::move(data)});
    }

    runtime::Task<wire::CopyResponse> round(std::vector<Range> reads, std::vector<Chunk> writes) {
        if (++rounds_ > srv_.cfg_.max_copy_rounds) throw CopyLimitExceeded();
        if (!s_->live) throw Cancelled();
        runtime::Promise<wire::CopyResponse> p(srv_.loop_);
        s_->copies.emplace(op_id_, p);
        ++srv_.stats_.copy_requests;
        wire::CopyRequest req{op_id_, std::move(reads), std::move(writes)};
        srv_.send(*s_, wire::make_message(Kind::CopyRequest, req.encode()));
        auto resp = co_await p.future();
        if (resp.status < 0) throw MemoryFault(fmt::format("client could not serve copy ({})", resp.status));
        co_return resp;
    }

    Server& srv_;
    std::shared_ptr<Session> s_;
    std::uint64_t op_id_;
    bool optimized_;
    std::vector<Chunk> cache_;
    std::vector<Chunk> batch_;
    std::vector<Chunk> deferred_;
    std::vector<std::pair<std::uint64_t, std::uint64_t>> mapped_;
    int rounds_ = 0;
};

Server::Server(runtime::EventLoop& loop, devmodel::DeviceRegistry& devices, devmodel::KernelMemory& kmem,
               ServerConfig cfg)
    : loop_(loop), devices_(devices), kmem_(kmem), cfg_(cfg), sections_(devmodel::KernelMemory::kBase, kmem.capacity()) {}

Server::~Server() {
    for (auto id : sessions()) cleanup_session(id, CleanupCause::LinkDown);
}

std::vector<std::uint64_t> Server::sessions() const {
    std::vector<std::uint64_t> out;
    for (auto& [id, s] : sessions_) out.push_back(id);
    return out;
}

std::uint64_t Server::attach(std::unique_ptr<wire::Endpoint> ep) {
    std::shared_ptr<wire::Endpoint> shared(std::move(ep));
    auto id = attach(*shared);
    sessions_.at(id)->owned = std::move(shared);
    return id;
}

std::uint64_t Server::attach(wire::Endpoint& ep) {
    auto s = std::make_shared<Session>();
    s->id = next_session_++;
    s->ep = &ep;
    s->last_heartbeat = loop_.now();
    std::weak_ptr<Session> weak = s;
    s->dsm = std::make_unique<dsm::DsmNode>(loop_, dsm::Role::Server, [this, weak](wire::Message m) {
        if (auto sp = weak.lock()) send(*sp, std::move(m));
    });
    s->dsm->set_session(s->id);
    s->dsm->on_state_change([this, weak](std::uint32_t rid, std::uint32_t page, dsm::PageState st) {
        auto sp = weak.lock();
        if (!sp) return;
        if (auto ext = sp->region_extent(rid)) sections_.set_page_state(ext->first + std::uint64_t{page} * kPageSize, st);
    });
    ep.on_receive([this, weak](wire::Message m) {
        if (auto sp = weak.lock(); sp && sp->live) on_message(sp, std::move(m));
    });
    ep.on_down([this, weak](wire::DownReason why, const std::string& detail) {
        auto sp = weak.lock();
        if (!sp || !sp->live) return;
        log::info("server: session {} link down ({})", sp->id, detail);
        cleanup_session(sp->id, CleanupCause::LinkDown);
        (void)why;
    });
    sessions_.emplace(s->id, s);
    ++stats_.sessions_opened;
    if (cfg_.heartbeat_miss_limit > 0) watchdog(s->id);
    log::debug("server: session {} attached", s->id);
    return s->id;
}

void Server::watchdog(std::uint64_t session) {
    auto it = sessions_.find(session);
    if (it == sessions_.end()) return;
    std::weak_ptr<int> life = life_;
    it->second->watchdog = loop_.schedule_after(cfg_.heartbeat_interval, [this, life, session] {
        if (life.expired()) return;
        auto it = sessions_.find(session);
        if (it == sessions_.end()) return;
        it->second->watchdog.reset();
        if (loop_.now() - it->second->last_heartbeat >= cfg_.heartbeat_interval * cfg_.heartbeat_miss_limit) {
            log::info("server: session {} missed heartbeats", session);
            cleanup_session(session, CleanupCause::HeartbeatTimeout);
            return;
        }
        watchdog(session);
    });
}

void Server::send(Session& s, wire::Message msg) {
    if (!s.live) return;
    msg.session_id = s.id;
    s.ep->send(std::move(msg));
}

void Server::on_message(const std::shared_ptr<Session>& s, wire::Message msg) {
    try {
        switch (msg.kind) {
            case Kind::FileOpRequest: {
                auto req = wire::FileOpRequest::decode(msg.payload);
                runtime::spawn(loop_, run_op(s, std::move(req)), [](std::exception_ptr e) {
                    try {
                        std::rethrow_exception(e);
                    } catch (const std::exception& ex) {
                        log::error("server: op failed: {}", ex.what());
                    }
                });
                break;
            }
            case Kind::CopyResponse: {
                auto resp = wire::CopyResponse::decode(msg.payload);
                auto it = s->copies.find(resp.op_id);
                if (it == s->copies.end()) throw ProtocolError(fmt::format("copy response for unknown op {}", resp.op_id));
                auto p = it->second;
                s->copies.erase(it);
                p.set_value(std::move(resp));
                break;
            }
            case Kind::Open: on_open(s, msg); break;
            case Kind::Heartbeat:
                s->last_heartbeat = loop_.now();
                send(*s, wire::make_message(Kind::HeartbeatAck, wire::HeartbeatAck{msg.seq}.encode()));
                break;
            case Kind::Cleanup: cleanup_session(s->id, CleanupCause::ClientClose); break;
            case Kind::PageFetch:
            case Kind::PageData:
            case Kind::PageInvalidate:
            case Kind::PageUpdateBatch: s->dsm->receive(msg); break;
            default: throw ProtocolError(fmt::format("unexpected {} from client", wire::to_string(msg.kind)));
        }
    } catch (const std::exception& e) {
        log::error("server: session {}: {}", s->id, e.what());
        cleanup_session(s->id, CleanupCause::LinkDown);
    }
}

void Server::on_open(const std::shared_ptr<Session>& s, const wire::Message& msg) {
    auto o = wire::Open::decode(msg.payload);
    wire::OpenAck ack{o.req_id, 0, 0};
    auto* dev = devices_.find(o.device_class);
    if (!dev) {
        ack.status = kENODEV;
    } else {
        std::weak_ptr<Session> weak = s;
        devmodel::DeviceEnv env;
        env.dma_complete = [this, weak](std::uint64_t k, std::size_t len) {
            if (auto sp = weak.lock(); sp && sp->live) dma_complete(*sp, k, len);
        };
        env.global_buffer = [weak](std::uint32_t id) -> std::optional<std::pair<std::uint64_t, std::size_t>> {
            auto sp = weak.lock();
            if (!sp) return std::nullopt;
            auto it = sp->globals.find(id);
            if (it == sp->globals.end()) return std::nullopt;
            return std::pair{it->second.kaddr, it->second.length};
        };
        auto r = dev->open(o.flags, std::move(env));
        if (!r) {
            ack.status = r.error_code();
        } else {
            ack.descriptor = s->next_desc++;
            s->descs.emplace(ack.descriptor, Session::Desc{dev, *r, o.flags});
        }
    }
    send(*s, wire::make_message(Kind::OpenAck, ack.encode()));
}

runtime::Task<void> Server::run_op(std::shared_ptr<Session> s, wire::FileOpRequest req) {
    ++stats_.ops;
    const bool optimized = (req.flags & wire::kReqOptimized) != 0;
    OpContext ctx(*this, s, req.op_id, optimized, std::move(req.prefetch));
    wire::FileOpResponse resp{req.op_id, 0, {}, {}};
    try {
        resp.result = co_await execute(s, req, ctx, resp);
    } catch (const MemoryFault& e) {
        log::debug("server: op {} faulted: {}", req.op_id, e.what());
        resp.result = kEFAULT;
    } catch (const CopyLimitExceeded&) {
        log::error("server: op {} exceeded {} copy rounds", req.op_id, cfg_.max_copy_rounds);
        resp.result = kEIO;
    } catch (const Cancelled&) {
        co_return;
    }
    if (!s->live) co_return;
    resp.batch = ctx.take_batch();
    for (auto& c : resp.batch) stats_.batch_bytes += c.data.size();
    send(*s, wire::make_message(Kind::FileOpResponse, resp.encode()));
}

runtime::Task<std::int64_t> Server::execute(std::shared_ptr<Session> s, const wire::FileOpRequest& req, OpContext& ctx,
                                            wire::FileOpResponse& resp) {
    if (req.op == FileOp::AllocGlobal) {
        const auto id = req.cmd;
        if (req.length == 0 || (id & dsm::kGlobalRegionBit)) co_return kEINVAL;
        if (s->globals.count(id)) co_return kEEXIST;
        const auto len = devmodel::round_up_pages(req.length);
        auto k = kmem_.alloc(len);
        if (!k) co_return kENOMEM;
        const auto rid = id | dsm::kGlobalRegionBit;
        s->globals.emplace(id, Session::Global{*k, len});
        s->dsm->engine().add_region(rid, kmem_.span(*k, len), dsm::PageState::Invalid,
                                    (req.flags & wire::kReqUpdatePush) ? dsm::DmaPolicy::UpdatePush
                                                                        : dsm::DmaPolicy::InvalidatePeer);
        sections_.split(*k, len);
        sections_.map(*k, len);
        for (std::size_t off = 0; off < len; off += kPageSize) sections_.set_page_state(*k + off, dsm::PageState::Invalid);
        resp.regions.push_back({rid, req.addr, len, (req.flags & wire::kReqUpdatePush) ? std::uint8_t{1} : std::uint8_t{0}});
        co_return 0;
    }
    if (req.op == FileOp::FreeGlobal) {
        auto it = s->globals.find(req.cmd);
        if (it == s->globals.end()) co_return kEINVAL;
        auto g = it->second;
        s->dsm->engine().remove_region(req.cmd | dsm::kGlobalRegionBit);
        s->globals.erase(it);
        sections_.unmap(g.kaddr, g.length);
        sections_.coalesce(g.kaddr, g.length);
        kmem_.free(g.kaddr);
        co_return 0;
    }

    auto it = s->descs.find(req.descriptor);
    if (it == s->descs.end()) co_return kEBADF;
    auto desc = it->second;
    auto& dev = *desc.dev;

    switch (req.op) {
        case FileOp::Read: co_return co_await dev.read(desc.file, req.addr, req.length, ctx);
        case FileOp::Write: co_return co_await dev.write(desc.file, req.addr, req.length, ctx);
        case FileOp::Ioctl: co_return co_await dev.ioctl(desc.file, req.cmd, req.addr, ctx);
        case FileOp::Poll: co_return co_await dev.poll(desc.file, req.cmd, req.timeout_ns, s->cancel.token());
        case FileOp::Mmap: {
            auto rc = co_await dev.mmap(desc.file, req.length, req.offset, req.addr, ctx);
            if (rc <= 0) co_return rc;
            if (!s->live) throw Cancelled();
            auto policy = (req.flags & wire::kReqUpdatePush) ? dsm::DmaPolicy::UpdatePush : dsm::DmaPolicy::InvalidatePeer;
            co_return register_region(*s, req.descriptor, static_cast<devmodel::MapId>(rc), ctx, req.addr, req.length,
                                      policy, resp);
        }
        case FileOp::Munmap: {
            for (auto& [rid, m] : s->maps) {
                if (m.desc == req.descriptor && m.user_addr == req.addr) {
                    drop_mapping(*s, rid, true);
                    co_return 0;
                }
            }
            co_return kEINVAL;
        }
        case FileOp::Release: {
            std::vector<std::uint32_t> rids;
            for (auto& [rid, m] : s->maps)
                if (m.desc == req.descriptor) rids.push_back(rid);
            for (auto rid : rids) drop_mapping(*s, rid, true);
            s->descs.erase(req.descriptor);
            dev.release(desc.file);
            co_return 0;
        }
        default: co_return kENOSYS;
    }
}

std::int64_t Server::register_region(Session& s, std::uint32_t desc, devmodel::MapId map, OpContext& ctx,
                                     std::uint64_t user_addr, std::size_t length, dsm::DmaPolicy policy,
                                     wire::FileOpResponse& resp) {
    const auto& pages = ctx.mapped();
    auto reject = [&] {
        s.descs.at(desc).dev->close_map(s.descs.at(desc).file, map);
        return kEINVAL;
    };
    if (pages.empty()) return reject();
    for (std::size_t i = 0; i < pages.size(); ++i) {
        // One region needs one contiguous kernel range mapped in order.
        if (pages[i].first != pages[0].first + i * kPageSize || pages[i].second != user_addr + i * kPageSize)
            return reject();
    }
    const auto kaddr = pages[0].first;
    const auto len = pages.size() * kPageSize;
    if (devmodel::round_up_pages(length) != len) return reject();
    const auto rid = s.next_region++;
    s.maps.emplace(rid, Session::Mapping{desc, map, kaddr, len, user_addr});
    s.dsm->engine().add_region(rid, kmem_.span(kaddr, len), dsm::PageState::ReadWrite, policy);
    sections_.split(kaddr, len);
    sections_.map(kaddr, len);
    for (std::size_t off = 0; off < len; off += kPageSize) sections_.set_page_state(kaddr + off, dsm::PageState::ReadWrite);
    resp.regions.push_back({rid, user_addr, len, static_cast<std::uint8_t>(policy)});
    return 0;
}

void Server::drop_mapping(Session& s, std::uint32_t rid, bool close_device_map) {
    auto it = s.maps.find(rid);
    if (it == s.maps.end()) return;
    auto m = it->second;
    if (close_device_map) {
        auto d = s.descs.find(m.desc);
        if (d != s.descs.end()) d->second.dev->close_map(d->second.file, m.map);
    }
    s.dsm->engine().remove_region(rid);
    s.maps.erase(it);
    sections_.unmap(m.kaddr, m.length);
    sections_.coalesce(m.kaddr, m.length);
}

void Server::dma_complete(Session& s, std::uint64_t kaddr, std::size_t len) {
    if (len == 0) return;
    auto& eng = s.dsm->engine();
    for (auto rid : eng.region_ids()) {
        auto ext = s.region_extent(rid);
        if (!ext || !overlaps(kaddr, len, ext->first, ext->second)) continue;
        auto lo = std::max(kaddr, ext->first) - ext->first;
        auto hi = std::min(kaddr + len, ext->first + ext->second) - ext->first;
        auto first = static_cast<std::uint32_t>(lo / kPageSize);
        auto last = static_cast<std::uint32_t>((hi - 1) / kPageSize);
        eng.dma_complete(rid, first, last - first + 1);
    }
}

void Server::cleanup_session(std::uint64_t session, CleanupCause cause) {
    auto it = sessions_.find(session);
    if (it == sessions_.end()) return;
    auto s = it->second;
    sessions_.erase(it);
    log::info("server: cleaning up session {} (cause {})", session, static_cast<int>(cause));

    s->live = false;
    s->cancel.cancel();
    if (s->watchdog) loop_.cancel(*s->watchdog);
    auto copies = std::move(s->copies);
    s->copies.clear();
    for (auto& [op, p] : copies) p.set_exception(std::make_exception_ptr(Cancelled{}));

    for (auto& [rid, m] : s->maps) {
        auto d = s->descs.find(m.desc);
        if (d != s->descs.end()) d->second.dev->close_map(d->second.file, m.map);
    }
    for (auto& [id, d] : s->descs) d.dev->release(d.file);
    s->descs.clear();

    for (auto& [rid, m] : s->maps) {
        s->dsm->engine().remove_region(rid);
        sections_.unmap(m.kaddr, m.length);
        sections_.coalesce(m.kaddr, m.length);
    }
    s->maps.clear();
    for (auto& [id, g] : s->globals) {
        s->dsm->engine().remove_region(id | dsm::kGlobalRegionBit);
        sections_.unmap(g.kaddr, g.length);
        sections_.coalesce(g.kaddr, g.length);
        kmem_.free(g.kaddr);
    }
    s->globals.clear();
    s->dsm->abort_all();

    if (cause == CleanupCause::HeartbeatTimeout && s->ep->connected())
        s->ep->send(wire::make_message(Kind::Cleanup, wire::Cleanup{cause}.encode(), s->id));
    if (s->ep->connected()) s->ep->close();
    if (s->owned) {
        // The endpoint may be mid-callback; let it unwind first.
        auto owned = std::move(s->owned);
        loop_.post([owned] {});
    }

    cleanups_.push_back({session, cause, loop_.now()});
    ++stats_.cleanups;
}

dsm::DsmNode* Server::dsm(std::uint64_t session) {
    auto it = sessions_.find(session);
    return it == sessions_.end() ? nullptr : it->second->dsm.get();
}

Census Server::census() const {
    Census c;
    c.sessions = sessions_.size();
    for (auto& [id, s] : sessions_) {
        c.descriptors += s->descs.size();
        c.mappings += s->maps.size();
        c.regions += s->dsm->engine().region_count();
        c.global_buffers += s->globals.size();
        c.pending_copies += s->copies.size();
        c.running_ops += s->running.size();
        for (auto* op : s->running) c.cache_entries += op->cache_entries();
    }
    return c;
}

}  // namespace rio::server
