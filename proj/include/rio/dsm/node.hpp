#pragma once

#include <cstdint>
#include <functional>
#include <map>

#include "rio/dsm/engine.hpp"
#include "rio/runtime/sync.hpp"
#include "rio/runtime/task.hpp"
#include "rio/wire/message.hpp"

namespace rio::dsm {

/// Region ids at or above this bit name shared buffers rather than mappings.
inline constexpr std::uint32_t kGlobalRegionBit = 0x8000'0000;

wire::Message to_message(const CoherenceMsg& msg, std::uint64_t session);
/// Throws DecodeError for malformed payloads and ProtocolError for
/// non-coherence kinds.
CoherenceMsg from_message(const wire::Message& msg, std::size_t page_size = wire::kPageSize);

struct NodeStats {
    std::uint64_t messages_sent = 0;
    std::uint64_t messages_received = 0;
    std::uint64_t faults = 0;  // accesses that had to wait on the peer
};

/// Coroutine front end to a CoherenceEngine: byte-range reads and writes that
/// suspend while pages are fetched or upgraded.
class DsmNode final : public EngineListener {
public:
    using Sender = std::function<void(wire::Message)>;
    using StateHook = std::function<void(std::uint32_t region, std::uint32_t page, PageState)>;

    DsmNode(runtime::EventLoop& loop, Role role, Sender send, std::size_t page_size = wire::kPageSize,
            bool fetch_and_own = true);
    ~DsmNode() override;

    DsmNode(const DsmNode&) = delete;
    DsmNode& operator=(const DsmNode&) = delete;

    CoherenceEngine& engine() { return engine_; }
    const CoherenceEngine& engine() const { return engine_; }
    void set_session(std::uint64_t session) { session_ = session; }
    void on_state_change(StateHook hook) { state_hook_ = std::move(hook); }

    runtime::Task<Bytes> read(std::uint32_t region, std::uint64_t offset, std::size_t len);
    runtime::Task<void> write(std::uint32_t region, std::uint64_t offset, Bytes data);

    /// Feeds one Coherence-channel message to the engine.
    void receive(const wire::Message& msg);

    /// Fails every waiting access with Cancelled.
    void abort_all();
    std::size_t waiting() const { return ops_.size(); }
    const NodeStats& stats() const { return stats_; }

    void on_send(CoherenceMsg msg) override;
    void on_granted(std::uint64_t access_id, std::uint32_t region, std::uint32_t page, AccessMode mode,
                    MutableByteSpan page_bytes) override;
    void on_aborted(std::uint64_t access_id) override;
    void on_state_change(std::uint32_t region, std::uint32_t page, PageState now) override;

private:
    struct Op {
        std::byte* dst = nullptr;
        const std::byte* src = nullptr;
        std::size_t offset = 0;
        std::size_t len = 0;
        runtime::Promise<bool> done;
    };

    runtime::Task<void> touch(std::uint32_t region, std::uint64_t offset, std::size_t len, AccessMode mode,
                              std::byte* dst, const std::byte* src);

    runtime::EventLoop& loop_;
    Sender send_;
    CoherenceEngine engine_;
    std::uint64_t session_ = 0;
    std::uint64_t next_op_ = 1;
    std::map<std::uint64_t, Op> ops_;
    StateHook state_hook_;
    NodeStats stats_;
};

}  // namespace rio::dsm
