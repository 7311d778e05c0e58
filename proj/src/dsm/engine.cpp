#include "rio/dsm/engine.hpp"

#include <algorithm>
#include <cstring>

#include <fmt/format.h>

#include "rio/common/log.hpp"

namespace rio::dsm {

std::string_view to_string(PageState s) {
    switch (s) {
        case PageState::Invalid: return "Invalid";
        case PageState::ReadOnly: return "ReadOnly";
        case PageState::ReadWrite: return "ReadWrite";
    }
    return "?";
}

CoherenceEngine::CoherenceEngine(Role role, EngineListener* listener, std::size_t page_size, bool fetch_and_own)
    : role_(role), listener_(listener), page_size_(page_size), fetch_and_own_(fetch_and_own) {
    if (page_size_ == 0) throw std::invalid_argument("page size must be positive");
}

void CoherenceEngine::add_region(std::uint32_t id, MutableByteSpan storage, PageState initial, DmaPolicy policy) {
    if (regions_.count(id)) throw std::invalid_argument(fmt::format("region {} already registered", id));
    if (storage.size() % page_size_ != 0) throw std::invalid_argument("region storage is not a whole number of pages");
    Region r;
    r.storage = storage;
    r.policy = policy;
    r.pages.resize(storage.size() / page_size_);
    for (auto& e : r.pages) e.state = initial;
    regions_.emplace(id, std::move(r));
}

void CoherenceEngine::remove_region(std::uint32_t id) {
    auto it = regions_.find(id);
    if (it == regions_.end()) return;
    std::vector<std::uint64_t> aborted;
    for (auto& e : it->second.pages)
        for (auto& p : e.queue) aborted.push_back(p.id);
    regions_.erase(it);
    for (auto a : aborted) listener_->on_aborted(a);
}

void CoherenceEngine::rebind(std::uint32_t id, MutableByteSpan storage) {
    auto& r = region(id);
    if (storage.size() != r.storage.size()) throw std::invalid_argument("rebind must keep the region size");
    r.storage = storage;
}

std::vector<std::uint32_t> CoherenceEngine::region_ids() const {
    std::vector<std::uint32_t> ids;
    for (auto& [id, r] : regions_) ids.push_back(id);
    return ids;
}

std::size_t CoherenceEngine::page_count(std::uint32_t id) const { return region(id).pages.size(); }

void CoherenceEngine::set_policy(std::uint32_t id, DmaPolicy policy) { region(id).policy = policy; }

CoherenceEngine::Region& CoherenceEngine::region(std::uint32_t id) {
    auto it = regions_.find(id);
    if (it == regions_.end()) throw std::out_of_range(fmt::format("no region {}", id));
    return it->second;
}

const CoherenceEngine::Region& CoherenceEngine::region(std::uint32_t id) const {
    auto it = regions_.find(id);
    if (it == regions_.end()) throw std::out_of_range(fmt::format("no region {}", id));
    return it->second;
}

CoherenceEngine::Entry& CoherenceEngine::entry(Region& r, std::uint32_t region_id, std::uint32_t page) {
    if (page >= r.pages.size())
        throw ProtocolViolation(fmt::format("page {} out of range for region {} ({} pages)", page, region_id, r.pages.size()));
    return r.pages[page];
}

MutableByteSpan CoherenceEngine::page_bytes(Region& r, std::uint32_t page) {
    return r.storage.subspan(std::size_t{page} * page_size_, page_size_);
}

PageState CoherenceEngine::state(std::uint32_t region_id, std::uint32_t page) const {
    return region(region_id).pages.at(page).state;
}

PageState CoherenceEngine::dma_state(std::uint32_t region_id, std::uint32_t page) const {
    return region(region_id).pages.at(page).dma_state;
}

std::uint64_t CoherenceEngine::epoch(std::uint32_t region_id, std::uint32_t page) const {
    return region(region_id).pages.at(page).epoch;
}

ByteSpan CoherenceEngine::bytes(std::uint32_t region_id, std::uint32_t page) const {
    auto& r = region(region_id);
    if (page >= r.pages.size()) throw std::out_of_range("page out of range");
    return ByteSpan(r.storage).subspan(std::size_t{page} * page_size_, page_size_);
}

bool CoherenceEngine::busy(std::uint32_t region_id, std::uint32_t page) const {
    auto& e = region(region_id).pages.at(page);
    return e.waiting != Wait::None || !e.queue.empty();
}

bool CoherenceEngine::idle() const {
    for (auto& [id, r] : regions_)
        for (auto& e : r.pages)
            if (e.waiting != Wait::None || !e.queue.empty()) return false;
    return true;
}

bool CoherenceEngine::permits(const Entry& e, AccessMode mode) const {
    if (mode == AccessMode::Read) return e.state != PageState::Invalid;
    return e.state == PageState::ReadWrite;
}

void CoherenceEngine::set_state(std::uint32_t region_id, std::uint32_t page, Entry& e, PageState s) {
    if (e.state == s) return;
    e.state = s;
    if (s == PageState::Invalid) e.dma_state = PageState::Invalid;
    listener_->on_state_change(region_id, page, s);
}

void CoherenceEngine::grant(std::uint32_t region_id, Region& r, std::uint32_t page, const Pending& p) {
    listener_->on_granted(p.id, region_id, page, p.mode, page_bytes(r, page));
    if (p.mode == AccessMode::Write) ++r.pages[page].epoch;
}

bool CoherenceEngine::start_request(std::uint32_t region_id, Region& r, std::uint32_t page, AccessMode mode) {
    auto& e = r.pages[page];
    if (e.state == PageState::Invalid) {
        bool own = mode == AccessMode::Write && fetch_and_own_;
        e.waiting = own ? Wait::FetchOwn : Wait::Fetch;
        listener_->on_send(wire::PageFetch{region_id, page, own});
        return false;
    }
    // Read-only page, write wanted.
    if (role_ == Role::Server) {
        listener_->on_send(wire::PageInvalidate{region_id, 0, {page}});
        set_state(region_id, page, e, PageState::ReadWrite);
        return true;
    }
    e.waiting = Wait::Upgrade;
    listener_->on_send(wire::PageInvalidate{region_id, wire::kInvalidateRequestAck, {page}});
    return false;
}

bool CoherenceEngine::access(std::uint64_t access_id, std::uint32_t region_id, std::uint32_t page, AccessMode mode) {
    auto& r = region(region_id);
    if (page >= r.pages.size()) throw std::out_of_range(fmt::format("page {} out of range for region {}", page, region_id));
    auto& e = r.pages[page];
    Pending p{access_id, mode};
    if (e.waiting != Wait::None || !e.queue.empty()) {
        e.queue.push_back(p);
        return false;
    }
    if (permits(e, mode) || start_request(region_id, r, page, mode)) {
        grant(region_id, r, page, p);
        return true;
    }
    e.queue.push_back(p);
    return false;
}

void CoherenceEngine::drain(std::uint32_t region_id, std::uint32_t page) {
    auto it = regions_.find(region_id);
    if (it == regions_.end()) return;
    auto& r = it->second;
    while (true) {
        auto& e = r.pages[page];
        if (e.waiting != Wait::None || e.queue.empty()) return;
        Pending p = e.queue.front();
        if (!permits(e, p.mode) && !start_request(region_id, r, page, p.mode)) return;
        e.queue.pop_front();
        grant(region_id, r, page, p);
    }
}

void CoherenceEngine::receive(const CoherenceMsg& msg) {
    std::visit(
        [this](const auto& m) {
            using T = std::decay_t<decltype(m)>;
            if (!regions_.count(m.region_id)) {
                log::debug("dsm: dropping message for unknown region {}", m.region_id);
                return;
            }
            if constexpr (std::is_same_v<T, wire::PageFetch>) on_fetch(m);
            else if constexpr (std::is_same_v<T, wire::PageData>) on_data(m);
            else if constexpr (std::is_same_v<T, wire::PageInvalidate>) on_invalidate(m);
            else on_update(m);
        },
        msg);
}

void CoherenceEngine::on_fetch(const wire::PageFetch& m) {
    auto& r = region(m.region_id);
    auto& e = entry(r, m.region_id, m.page_index);
    if (e.state == PageState::Invalid)
        throw ProtocolViolation(fmt::format("fetch of page {}:{} which is invalid here", m.region_id, m.page_index));
    auto src = page_bytes(r, m.page_index);
    wire::PageData reply{m.region_id, m.page_index, m.want_ownership ? wire::kDataGrantsOwnership : std::uint8_t{0},
                         Bytes(src.begin(), src.end())};
    listener_->on_send(std::move(reply));
    if (m.want_ownership)
        set_state(m.region_id, m.page_index, e, PageState::Invalid);
    else if (e.state == PageState::ReadWrite)
        set_state(m.region_id, m.page_index, e, PageState::ReadOnly);
}

void CoherenceEngine::on_data(const wire::PageData& m) {
    auto& r = region(m.region_id);
    auto& e = entry(r, m.region_id, m.page_index);
    if (e.waiting == Wait::None)
        throw ProtocolViolation(fmt::format("unsolicited data for page {}:{}", m.region_id, m.page_index));
    if (m.data.size() != page_size_)
        throw ProtocolViolation(fmt::format("page data is {} bytes, expected {}", m.data.size(), page_size_));
    bool grants = (m.flags & wire::kDataGrantsOwnership) != 0;
    bool stale = e.stale;
    e.stale = false;
    e.waiting = Wait::None;
    // A DMA completion already replaced this page locally; the reply predates it.
    if (!stale && e.state != PageState::ReadWrite) {
        std::memcpy(page_bytes(r, m.page_index).data(), m.data.data(), page_size_);
        ++e.epoch;
        set_state(m.region_id, m.page_index, e, grants ? PageState::ReadWrite : PageState::ReadOnly);
    }
    drain(m.region_id, m.page_index);
}

void CoherenceEngine::on_invalidate(const wire::PageInvalidate& m) {
    auto& r = region(m.region_id);
    if (m.flags & wire::kInvalidateRequestAck) {
        if (role_ != Role::Server) throw ProtocolViolation("upgrade request sent to the client");
        for (auto page : m.pages) {
            auto& e = entry(r, m.region_id, page);
            if (e.state == PageState::ReadWrite) {
                auto src = page_bytes(r, page);
                listener_->on_send(wire::PageData{m.region_id, page, wire::kDataGrantsOwnership, Bytes(src.begin(), src.end())});
            } else if (e.state == PageState::ReadOnly) {
                listener_->on_send(wire::PageInvalidate{m.region_id, wire::kInvalidateAck, {page}});
            } else {
                throw ProtocolViolation(fmt::format("upgrade request for page {}:{} not held here", m.region_id, page));
            }
            set_state(m.region_id, page, e, PageState::Invalid);
        }
        return;
    }
    if (m.flags & wire::kInvalidateAck) {
        for (auto page : m.pages) {
            auto& e = entry(r, m.region_id, page);
            if (e.waiting != Wait::Upgrade || e.state != PageState::ReadOnly)
                throw ProtocolViolation(fmt::format("unexpected upgrade ack for page {}:{}", m.region_id, page));
            e.waiting = Wait::None;
            set_state(m.region_id, page, e, PageState::ReadWrite);
            drain(m.region_id, page);
        }
        return;
    }
    for (auto page : m.pages) {
        auto& e = entry(r, m.region_id, page);
        set_state(m.region_id, page, e, PageState::Invalid);
    }
}

void CoherenceEngine::on_update(const wire::PageUpdateBatch& m) {
    if (role_ != Role::Client) throw ProtocolViolation("update batch sent to the server");
    auto& r = region(m.region_id);
    for (auto& p : m.pages) {
        auto& e = entry(r, m.region_id, p.index);
        if (p.data.size() != page_size_) throw ProtocolViolation("update batch page has the wrong size");
        std::memcpy(page_bytes(r, p.index).data(), p.data.data(), page_size_);
        ++e.epoch;
        set_state(m.region_id, p.index, e, PageState::ReadOnly);
        e.dma_state = PageState::ReadOnly;
    }
    for (auto& p : m.pages) drain(m.region_id, p.index);
}

void CoherenceEngine::dma_complete(std::uint32_t region_id, std::uint32_t first, std::uint32_t count) {
    if (role_ != Role::Server) throw std::logic_error("dma completion on the client");
    if (count == 0) return;
    auto& r = region(region_id);
    if (std::size_t{first} + count > r.pages.size()) throw std::out_of_range("dma range outside region");
    bool push = r.policy == DmaPolicy::UpdatePush;
    for (std::uint32_t p = first; p < first + count; ++p) {
        auto& e = r.pages[p];
        if (e.waiting != Wait::None) e.stale = true;
        ++e.epoch;
        set_state(region_id, p, e, push ? PageState::ReadOnly : PageState::ReadWrite);
        e.dma_state = e.state;
    }
    if (push) {
        wire::PageUpdateBatch batch{region_id, {}};
        batch.pages.reserve(count);
        for (std::uint32_t p = first; p < first + count; ++p) {
            auto src = page_bytes(r, p);
            batch.pages.push_back({p, Bytes(src.begin(), src.end())});
        }
        listener_->on_send(std::move(batch));
    } else {
        wire::PageInvalidate inv{region_id, 0, {}};
        inv.pages.reserve(count);
        for (std::uint32_t p = first; p < first + count; ++p) inv.pages.push_back(p);
        listener_->on_send(std::move(inv));
    }
    for (std::uint32_t p = first; p < first + count; ++p) drain(region_id, p);
}

void CoherenceEngine::fingerprint(std::string& out) const {
    for (auto& [id, r] : regions_) {
        out += fmt::format("R{}:", id);
        for (std::size_t p = 0; p < r.pages.size(); ++p) {
            auto& e = r.pages[p];
            out += fmt::format("{}{}{}{}", static_cast<int>(e.state), static_cast<int>(e.dma_state),
                               static_cast<int>(e.waiting), e.stale ? 's' : '-');
            for (auto& q : e.queue) out += fmt::format("q{}{}", q.id, q.mode == AccessMode::Write ? 'w' : 'r');
            out += '[';
            auto b = ByteSpan(r.storage).subspan(p * page_size_, page_size_);
            for (auto x : b) out += fmt::format("{:02x}", static_cast<unsigned>(x));
            out += ']';
        }
    }
}

}  // namespace rio::dsm
