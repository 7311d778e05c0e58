#include "rio/client/client.hpp"

#include <fmt/format.h>

#include "rio/common/log.hpp"
#include "rio/devmodel/kernel_memory.hpp"

namespace rio::client {

using wire::FileOp;
using wire::Kind;

void RttEstimator::sample(Duration rtt) {
    if (samples_++ == 0) {
        estimate_ = rtt;
        return;
    }
    const double next = (1.0 - kAlpha) * static_cast<double>(estimate_.count()) + kAlpha * static_cast<double>(rtt.count());
    estimate_ = Duration(static_cast<Duration::rep>(next));
}

std::string_view to_string(HandleState s) {
    switch (s) {
        case HandleState::Connected: return "connected";
        case HandleState::FallingBack: return "falling-back";
        case HandleState::Failed: return "failed";
    }
    return "?";
}

Client::Client(runtime::EventLoop& loop, wire::Endpoint& ep, devmodel::UserMemory& mem, ClientConfig cfg)
    : loop_(loop), ep_(ep), mem_(mem), cfg_(cfg) {
    dsm_ = std::make_unique<dsm::DsmNode>(
        loop_, dsm::Role::Client,
        [this](wire::Message m) {
            if (!disconnected_) ep_.send(std::move(m));
        },
        wire::kPageSize, cfg_.fetch_and_own);
    ep_.on_receive([this](wire::Message m) { on_message(std::move(m)); });
    ep_.on_down([this](wire::DownReason, const std::string& detail) { declare_disconnect(detail); });
}

Client::~Client() {
    if (beat_timer_) loop_.cancel(*beat_timer_);
    if (deadline_timer_) loop_.cancel(*deadline_timer_);
    ep_.on_receive({});
    ep_.on_down({});
}

void Client::start() {
    if (started_ || cfg_.heartbeat_miss_limit <= 0) return;
    started_ = true;
    last_ack_ = loop_.now();
    heartbeat();
    arm_deadline();
}

void Client::shutdown() {
    if (disconnected_) return;
    if (ep_.connected()) ep_.send(wire::make_message(Kind::Cleanup, wire::Cleanup{wire::CleanupCause::ClientClose}.encode()));
    declare_disconnect("client shutdown");
}

void Client::heartbeat() {
    beat_timer_.reset();
    if (disconnected_ || !ep_.connected()) return;
    const auto now = loop_.now();
    const auto seq = ep_.send(wire::make_message(Kind::Heartbeat, {}));
    beats_[seq] = now;
    ++stats_.heartbeats_sent;
    const auto horizon = cfg_.heartbeat_interval * (cfg_.heartbeat_miss_limit + 1);
    std::erase_if(beats_, [&](const auto& kv) { return now - kv.second > horizon; });
    std::weak_ptr<int> life = life_;
    beat_timer_ = loop_.schedule_after(cfg_.heartbeat_interval, [this, life] {
        if (!life.expired()) heartbeat();
    });
}

void Client::arm_deadline() {
    if (deadline_timer_) loop_.cancel(*deadline_timer_);
    std::weak_ptr<int> life = life_;
    deadline_timer_ = loop_.schedule_at(last_ack_ + cfg_.heartbeat_interval * cfg_.heartbeat_miss_limit, [this, life] {
        if (life.expired()) return;
        deadline_timer_.reset();
        declare_disconnect("heartbeat acks stopped");
    });
}

void Client::declare_disconnect(const std::string& why) {
    if (disconnected_) return;
    disconnected_ = true;
    disconnected_at_ = loop_.now();
    log::info("client: disconnected ({})", why);
    if (beat_timer_) loop_.cancel(*beat_timer_);
    if (deadline_timer_) loop_.cancel(*deadline_timer_);
    beat_timer_.reset();
    deadline_timer_.reset();
    beats_.clear();

    auto pending = std::move(pending_);
    pending_.clear();
    auto opens = std::move(opens_);
    opens_.clear();
    for (auto& [id, p] : pending) p.promise.set_exception(std::make_exception_ptr(Disconnected(why)));
    for (auto& [id, p] : opens) p.set_exception(std::make_exception_ptr(Disconnected(why)));

    for (auto rid : dsm_->engine().region_ids()) dsm_->engine().remove_region(rid);
    dsm_->abort_all();
    regions_.clear();

    for (auto& [id, h] : handles_) {
        if (h.closed) continue;
        h.state = h.fallback ? HandleState::FallingBack : HandleState::Failed;
    }
    if (ep_.connected()) ep_.close();
}

ClientResiduals Client::residuals() const {
    return {dsm_->engine().region_count() + regions_.size(), pending_.size() + opens_.size(), dsm_->waiting()};
}

void Client::register_local_fallback(devmodel::Device& dev) { fallbacks_[dev.device_class()] = &dev; }

HandleState Client::state(HandleId h) const { return handles_.at(h).state; }
const std::string& Client::name(HandleId h) const { return handles_.at(h).name; }

Client::Handle& Client::handle(HandleId h) {
    auto it = handles_.find(h);
    if (it == handles_.end() || it->second.closed) throw std::invalid_argument(fmt::format("bad handle {}", h));
    return it->second;
}

std::uint64_t Client::alloc_shadow(std::size_t len) {
    auto base = next_shadow_;
    next_shadow_ += devmodel::round_up_pages(std::max<std::size_t>(len, 1)) + wire::kPageSize;
    return base;
}

void Client::on_message(wire::Message msg) {
    if (disconnected_) return;
    try {
        switch (msg.kind) {
            case Kind::FileOpResponse: {
                auto resp = wire::FileOpResponse::decode(msg.payload);
                auto it = pending_.find(resp.op_id);
                if (it == pending_.end()) throw ProtocolError(fmt::format("response for unknown op {}", resp.op_id));
                auto p = std::move(it->second);
                pending_.erase(it);
                apply_batch(resp.batch);
                if (resp.result >= 0) install_regions(p.handle, resp.regions);
                p.promise.set_value(std::move(resp));
                break;
            }
            case Kind::CopyRequest: on_copy_request(wire::CopyRequest::decode(msg.payload)); break;
            case Kind::OpenAck: {
                auto ack = wire::OpenAck::decode(msg.payload);
                auto it = opens_.find(ack.req_id);
                if (it == opens_.end()) throw ProtocolError(fmt::format("open ack for unknown request {}", ack.req_id));
                auto p = it->second;
                opens_.erase(it);
                p.set_value(ack);
                break;
            }
            case Kind::HeartbeatAck: {
                auto ack = wire::HeartbeatAck::decode(msg.payload);
                ++stats_.heartbeat_acks;
                if (auto it = beats_.find(ack.echo_seq); it != beats_.end()) {
                    rtt_.sample(loop_.now() - it->second);
                    beats_.erase(it);
                }
                last_ack_ = loop_.now();
                if (started_) arm_deadline();
                break;
            }
            case Kind::Cleanup: declare_disconnect("server cleaned up the session"); break;
            case Kind::PageFetch:
            case Kind::PageData:
            case Kind::PageInvalidate:
            case Kind::PageUpdateBatch: dsm_->receive(msg); break;
            default: throw ProtocolError(fmt::format("unexpected {} from server", wire::to_string(msg.kind)));
        }
    } catch (const std::exception& e) {
        log::error("client: {}", e.what());
        declare_disconnect(e.what());
    }
}

void Client::on_copy_request(const wire::CopyRequest& req) {
    ++stats_.copy_requests_served;
    wire::CopyResponse resp{req.op_id, 0, {}};
    try {
        for (auto& w : req.writes) mem_.write(w.addr, w.data);
        for (auto& r : req.reads) resp.data.push_back(mem_.read(r.addr, r.len));
    } catch (const MemoryFault&) {
        resp.status = static_cast<std::int32_t>(kEFAULT);
        resp.data.clear();
    }
    ep_.send(wire::make_message(Kind::CopyResponse, resp.encode()));
}

void Client::apply_batch(const std::vector<wire::Chunk>& batch) {
    for (auto& c : batch) {
        try {
            mem_.write(c.addr, c.data);
            ++stats_.batch_entries_applied;
        } catch (const MemoryFault& e) {
            log::error("client: batch entry at {:#x} dropped: {}", c.addr, e.what());
        }
    }
}

void Client::install_regions(HandleId h, const std::vector<wire::RegionInfo>& regions) {
    for (auto& info : regions) {
        Region r{info.region_id, info.base, std::make_unique<Bytes>(info.length), h, std::nullopt};
        const bool global = (info.region_id & dsm::kGlobalRegionBit) != 0;
        if (global) r.global_id = info.region_id & ~dsm::kGlobalRegionBit;
        dsm_->engine().add_region(info.region_id, MutableByteSpan(*r.storage),
                                  global ? dsm::PageState::ReadWrite : dsm::PageState::Invalid,
                                  static_cast<dsm::DmaPolicy>(info.policy));
        regions_.emplace(info.base, std::move(r));
    }
}

void Client::drop_region(std::uint64_t base) {
    auto it = regions_.find(base);
    if (it == regions_.end()) return;
    dsm_->engine().remove_region(it->second.id);
    regions_.erase(it);
}

std::optional<std::tuple<std::uint32_t, std::uint64_t, std::size_t>> Client::region_at(std::uint64_t addr) const {
    auto it = regions_.upper_bound(addr);
    if (it == regions_.begin()) return std::nullopt;
    --it;
    const auto& r = it->second;
    if (addr >= r.base + r.storage->size()) return std::nullopt;
    return std::tuple{r.id, r.base, r.storage->size()};
}

Task<wire::FileOpResponse> Client::call(HandleId h, wire::FileOpRequest req) {
    if (disconnected_) throw Disconnected();
    req.op_id = next_req_++;
    runtime::Promise<wire::FileOpResponse> p(loop_);
    pending_.emplace(req.op_id, Pending{h, p});
    ++stats_.ops;
    ep_.send(wire::make_message(Kind::FileOpRequest, req.encode()));
    auto resp = co_await p.future();
    co_return resp;
}

Task<std::int64_t> Client::remote(HandleId h, wire::FileOpRequest req, std::int64_t local_timeout_ns) {
    auto& hd = handle(h);
    if (hd.state == HandleState::Failed) co_return kENOLINK;
    bool lost = hd.state != HandleState::Connected;
    std::int64_t result = 0;
    if (!lost) {
        req.descriptor = hd.descriptor;
        try {
            auto resp = co_await call(h, req);
            result = resp.result;
        } catch (const Disconnected&) {
            lost = true;
        }
    }
    if (!lost) co_return result;
    auto& again = handle(h);
    if (!again.fallback) co_return kENOLINK;
    req.prefetch.clear();
    co_return co_await local(h, req, local_timeout_ns);
}

Task<std::int64_t> Client::local(HandleId h, const wire::FileOpRequest& req, std::int64_t timeout_ns) {
    auto& hd = handle(h);
    auto* dev = hd.fallback;
    if (!hd.local_file) {
        auto f = dev->open(0);
        if (!f) co_return f.error_code();
        hd.local_file = *f;
        log::info("client: {} now served by the local device", hd.name);
    }
    const auto file = *hd.local_file;
    ++stats_.fallback_ops;
    devmodel::DirectMemoryContext ctx(mem_);
    switch (req.op) {
        case FileOp::Read: co_return co_await dev->read(file, req.addr, req.length, ctx);
        case FileOp::Write: co_return co_await dev->write(file, req.addr, req.length, ctx);
        case FileOp::Ioctl: co_return co_await dev->ioctl(file, req.cmd, req.addr, ctx);
        case FileOp::Poll: co_return co_await dev->poll(file, req.cmd, timeout_ns);
        default: co_return kENODEV;
    }
}

Task<Result<HandleId>> Client::open(std::string device_class, std::uint32_t flags) {
    auto fb = fallbacks_.find(device_class);
    Handle hd;
    hd.device_class = device_class;
    hd.fallback = fb == fallbacks_.end() ? nullptr : fb->second;
    hd.name = hd.fallback ? device_class + "_rio" : device_class;

    bool lost = disconnected_;
    if (!lost) {
        const auto req_id = next_req_++;
        runtime::Promise<wire::OpenAck> p(loop_);
        opens_.emplace(req_id, p);
        ep_.send(wire::make_message(Kind::Open, wire::Open{req_id, device_class, flags}.encode()));
        try {
            auto ack = co_await p.future();
            if (ack.status < 0) co_return Result<HandleId>::error(ack.status);
            hd.descriptor = ack.descriptor;
        } catch (const Disconnected&) {
            lost = true;
        }
    }
    if (lost) {
        if (!hd.fallback) co_return Result<HandleId>::error(kENOLINK);
        hd.state = HandleState::FallingBack;
    }
    const auto id = next_handle_++;
    handles_.emplace(id, std::move(hd));
    co_return id;
}

Task<std::int64_t> Client::read(HandleId h, std::uint64_t addr, std::size_t len) {
    wire::FileOpRequest req;
    req.op = FileOp::Read;
    req.flags = wire::kReqOptimized;
    req.addr = addr;
    req.length = len;
    co_return co_await remote(h, std::move(req));
}

Task<std::int64_t> Client::write(HandleId h, std::uint64_t addr, std::size_t len) {
    wire::FileOpRequest req;
    req.op = FileOp::Write;
    req.flags = wire::kReqOptimized;
    req.addr = addr;
    req.length = len;
    if (len > 0 && mem_.contains(addr, len)) req.prefetch.push_back({addr, mem_.read(addr, len)});
    co_return co_await remote(h, std::move(req));
}

Task<std::int64_t> Client::ioctl(HandleId h, std::uint32_t cmd, std::uint64_t arg) {
    wire::FileOpRequest req;
    req.op = FileOp::Ioctl;
    req.cmd = cmd;
    req.addr = arg;
    if (cfg_.optimize) {
        req.flags = wire::kReqOptimized;
        for (auto& r : prefetch_.ranges(handle(h).device_class, cmd, arg, mem_))
            req.prefetch.push_back({r.addr, mem_.read(r.addr, r.len)});
    }
    co_return co_await remote(h, std::move(req));
}

Task<std::int64_t> Client::poll(HandleId h, std::uint32_t events, double timeout_ms) {
    wire::FileOpRequest req;
    req.op = FileOp::Poll;
    req.cmd = events;
    std::int64_t local_ns = wire::kPollBlocking;
    if (timeout_ms >= 0) {
        local_ns = from_ms(timeout_ms).count();
        // The answer needs one round trip to come back; leave room for it.
        req.timeout_ns = std::max<std::int64_t>(0, local_ns - rtt_.estimate().count());
    } else {
        req.timeout_ns = wire::kPollBlocking;
    }
    co_return co_await remote(h, std::move(req), local_ns);
}

Task<std::int64_t> Client::mmap(HandleId h, std::size_t length, std::uint64_t offset) {
    auto& hd = handle(h);
    if (hd.state != HandleState::Connected) co_return hd.state == HandleState::Failed ? kENOLINK : kENODEV;
    if (length == 0) co_return kEINVAL;
    const auto base = alloc_shadow(length);
    wire::FileOpRequest req;
    req.op = FileOp::Mmap;
    req.descriptor = hd.descriptor;
    req.addr = base;
    req.length = length;
    req.offset = offset;
    if (cfg_.dsm_policy == dsm::DmaPolicy::UpdatePush) req.flags |= wire::kReqUpdatePush;
    try {
        auto resp = co_await call(h, req);
        if (resp.result < 0) co_return resp.result;
    } catch (const Disconnected&) {
        co_return kENOLINK;
    }
    co_return static_cast<std::int64_t>(base);
}

Task<std::int64_t> Client::munmap(HandleId h, std::uint64_t addr) {
    auto& hd = handle(h);
    auto it = regions_.find(addr);
    if (it == regions_.end() || it->second.handle != h || it->second.global_id) co_return kEINVAL;
    if (hd.state != HandleState::Connected) co_return kENOLINK;
    wire::FileOpRequest req;
    req.op = FileOp::Munmap;
    req.descriptor = hd.descriptor;
    req.addr = addr;
    drop_region(addr);
    try {
        auto resp = co_await call(h, req);
        co_return resp.result;
    } catch (const Disconnected&) {
        co_return kENOLINK;
    }
}

Task<std::int64_t> Client::close(HandleId h) {
    auto& hd = handle(h);
    std::int64_t rc = 0;
    std::vector<std::uint64_t> bases;
    for (auto& [base, r] : regions_)
        if (r.handle == h && !r.global_id) bases.push_back(base);
    for (auto b : bases) drop_region(b);
    if (hd.state == HandleState::Connected) {
        wire::FileOpRequest req;
        req.op = FileOp::Release;
        req.descriptor = hd.descriptor;
        try {
            auto resp = co_await call(h, req);
            rc = resp.result;
        } catch (const Disconnected&) {
        }
    }
    auto& again = handles_.at(h);
    if (again.local_file) again.fallback->release(*again.local_file);
    again.local_file.reset();
    again.closed = true;
    co_return rc;
}

Task<std::int64_t> Client::alloc_global_buffer(std::uint32_t id, std::size_t size) {
    if (size == 0 || (id & dsm::kGlobalRegionBit)) co_return kEINVAL;
    for (auto& [base, r] : regions_)
        if (r.global_id == id) co_return kEEXIST;
    if (disconnected_) co_return kENOLINK;
    const auto base = alloc_shadow(size);
    wire::FileOpRequest req;
    req.op = FileOp::AllocGlobal;
    req.cmd = id;
    req.addr = base;
    req.length = size;
    if (cfg_.dsm_policy == dsm::DmaPolicy::UpdatePush) req.flags |= wire::kReqUpdatePush;
    try {
        auto resp = co_await call(0, req);
        if (resp.result < 0) co_return resp.result;
    } catch (const Disconnected&) {
        co_return kENOLINK;
    }
    co_return static_cast<std::int64_t>(base);
}

Task<std::int64_t> Client::free_global_buffer(std::uint32_t id) {
    std::optional<std::uint64_t> base;
    for (auto& [b, r] : regions_)
        if (r.global_id == id) base = b;
    if (!base) co_return kEINVAL;
    drop_region(*base);
    if (disconnected_) co_return kENOLINK;
    wire::FileOpRequest req;
    req.op = FileOp::FreeGlobal;
    req.cmd = id;
    try {
        auto resp = co_await call(0, req);
        co_return resp.result;
    } catch (const Disconnected&) {
        co_return kENOLINK;
    }
}

Task<Bytes> Client::page_read(std::uint64_t addr, std::size_t len) {
    auto r = region_at(addr);
    if (!r) throw MemoryFault(fmt::format("{:#x} is not in a shared region", addr));
    auto [rid, base, size] = *r;
    if (addr + len > base + size) throw MemoryFault("access runs past the end of the region");
    auto out = co_await dsm_->read(rid, addr - base, len);
    co_return out;
}

Task<void> Client::page_write(std::uint64_t addr, Bytes data) {
    auto r = region_at(addr);
    if (!r) throw MemoryFault(fmt::format("{:#x} is not in a shared region", addr));
    auto [rid, base, size] = *r;
    if (addr + data.size() > base + size) throw MemoryFault("access runs past the end of the region");
    co_await dsm_->write(rid, addr - base, std::move(data));
}

}  // namespace rio::client
