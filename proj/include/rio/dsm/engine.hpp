#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "rio/common/bytes.hpp"
#include "rio/wire/payloads.hpp"

namespace rio::dsm {

enum class PageState : std::uint8_t { Invalid = 0, ReadOnly = 1, ReadWrite = 2 };
enum class AccessMode : std::uint8_t { Read, Write };
enum class Role : std::uint8_t { Client, Server };
enum class DmaPolicy : std::uint8_t { InvalidatePeer = 0, UpdatePush = 1 };

std::string_view to_string(PageState s);

using CoherenceMsg = std::variant<wire::PageFetch, wire::PageData, wire::PageInvalidate, wire::PageUpdateBatch>;

/// A coherence message that cannot happen under the protocol; the session
/// carrying it must be torn down.
class ProtocolViolation : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class EngineListener {
public:
    virtual ~EngineListener() = default;
    virtual void on_send(CoherenceMsg msg) = 0;
    /// The access may touch `page` now; runs synchronously inside the engine.
    virtual void on_granted(std::uint64_t access_id, std::uint32_t region, std::uint32_t page, AccessMode mode,
                            MutableByteSpan page_bytes) = 0;
    virtual void on_aborted(std::uint64_t /*access_id*/) {}
    virtual void on_state_change(std::uint32_t /*region*/, std::uint32_t /*page*/, PageState /*now*/) {}
};

/// Page-granular write-invalidate coherence for one node of a client/server
/// pair. The server is the home node: it orders competing ownership requests,
/// upgrades its own read-only pages with a one-way invalidate, and absorbs DMA
/// completions. The client upgrades read-only pages by asking the server and
/// waiting for an acknowledgement or fresh data.
///
/// Purely synchronous: messages go out through the listener and come back in
/// through receive(). Requires FIFO delivery per direction.
class CoherenceEngine {
public:
    CoherenceEngine(Role role, EngineListener* listener, std::size_t page_size = wire::kPageSize,
                    bool fetch_and_own = true);

    Role role() const { return role_; }
    std::size_t page_size() const { return page_size_; }
    void set_listener(EngineListener* l) { listener_ = l; }
    void set_fetch_and_own(bool on) { fetch_and_own_ = on; }

    /// `storage` must be a whole number of pages and outlive the registration.
    void add_region(std::uint32_t id, MutableByteSpan storage, PageState initial,
                    DmaPolicy policy = DmaPolicy::InvalidatePeer);
    /// Drops the region; queued accesses are aborted.
    void remove_region(std::uint32_t id);
    void rebind(std::uint32_t id, MutableByteSpan storage);
    bool has_region(std::uint32_t id) const { return regions_.count(id) != 0; }
    std::size_t region_count() const { return regions_.size(); }
    std::vector<std::uint32_t> region_ids() const;
    std::size_t page_count(std::uint32_t id) const;
    void set_policy(std::uint32_t id, DmaPolicy policy);

    /// Requests access to one page. Returns true if granted before returning
    /// (on_granted has already run); otherwise on_granted fires later.
    bool access(std::uint64_t access_id, std::uint32_t region, std::uint32_t page, AccessMode mode);

    void receive(const CoherenceMsg& msg);

    /// Server only: the device wrote [first, first+count) behind the page
    /// permissions. Takes ownership and tells the client per the region policy.
    void dma_complete(std::uint32_t region, std::uint32_t first, std::uint32_t count);

    PageState state(std::uint32_t region, std::uint32_t page) const;
    PageState dma_state(std::uint32_t region, std::uint32_t page) const;
    std::uint64_t epoch(std::uint32_t region, std::uint32_t page) const;
    ByteSpan bytes(std::uint32_t region, std::uint32_t page) const;
    bool busy(std::uint32_t region, std::uint32_t page) const;
    /// No outstanding requests and no queued accesses anywhere.
    bool idle() const;

    /// Canonical encoding of the full state, for model checking.
    void fingerprint(std::string& out) const;

private:
    enum class Wait : std::uint8_t { None, Fetch, FetchOwn, Upgrade };

    struct Pending {
        std::uint64_t id;
        AccessMode mode;
    };

    struct Entry {
        PageState state = PageState::Invalid;
        PageState dma_state = PageState::Invalid;
        std::uint64_t epoch = 0;
        Wait waiting = Wait::None;
        // Local data was replaced (DMA) while a fetch was out; its reply is stale.
        bool stale = false;
        std::deque<Pending> queue;
    };

    struct Region {
        MutableByteSpan storage;
        std::vector<Entry> pages;
        DmaPolicy policy = DmaPolicy::InvalidatePeer;
    };

    Region& region(std::uint32_t id);
    const Region& region(std::uint32_t id) const;
    Entry& entry(Region& r, std::uint32_t region_id, std::uint32_t page);
    MutableByteSpan page_bytes(Region& r, std::uint32_t page);

    bool permits(const Entry& e, AccessMode mode) const;
    void set_state(std::uint32_t region, std::uint32_t page, Entry& e, PageState s);
    void grant(std::uint32_t region_id, Region& r, std::uint32_t page, const Pending& p);
    // Starts whatever request `mode` needs; returns true if it completed locally.
    bool start_request(std::uint32_t region_id, Region& r, std::uint32_t page, AccessMode mode);
    void drain(std::uint32_t region_id, std::uint32_t page);

    void on_fetch(const wire::PageFetch& m);
    void on_data(const wire::PageData& m);
    void on_invalidate(const wire::PageInvalidate& m);
    void on_update(const wire::PageUpdateBatch& m);

    Role role_;
    EngineListener* listener_;
    std::size_t page_size_;
    bool fetch_and_own_;
    std::map<std::uint32_t, Region> regions_;
};

}  // namespace rio::dsm
