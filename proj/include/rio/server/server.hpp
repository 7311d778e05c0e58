#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <vector>

#include "rio/devmodel/device.hpp"
#include "rio/dsm/node.hpp"
#include "rio/dsm/section_tracker.hpp"
#include "rio/runtime/event_loop.hpp"
#include "rio/wire/endpoint.hpp"
#include "rio/wire/payloads.hpp"

namespace rio::server {

struct ServerConfig {
    Duration heartbeat_interval = from_ms(500);
    int heartbeat_miss_limit = 3;  // 0 disables the watchdog
    int max_copy_rounds = 16;
};

struct ServerStats {
    std::uint64_t ops = 0;
    std::uint64_t cache_hits = 0;
    std::uint64_t cache_misses = 0;
    std::uint64_t copy_requests = 0;
    std::uint64_t batch_bytes = 0;
    std::uint64_t sessions_opened = 0;
    std::uint64_t cleanups = 0;
};

/// Bookkeeping still held by the server; all zero means nothing leaked.
struct Census {
    std::size_t sessions = 0;
    std::size_t descriptors = 0;
    std::size_t mappings = 0;
    std::size_t regions = 0;
    std::size_t global_buffers = 0;
    std::size_t cache_entries = 0;
    std::size_t pending_copies = 0;
    std::size_t running_ops = 0;

    bool empty() const {
        return sessions + descriptors + mappings + regions + global_buffers + cache_entries + pending_copies +
                   running_ops ==
               0;
    }
};

struct CleanupRecord {
    std::uint64_t session;
    wire::CleanupCause cause;
    TimePoint at;
};

/// Hosts devices for remote clients. Each attached endpoint is one session;
/// file operations from it are executed against the local devices with
/// process memory reached through the wire.
class Server {
public:
    Server(runtime::EventLoop& loop, devmodel::DeviceRegistry& devices, devmodel::KernelMemory& kmem,
           ServerConfig cfg = {});
    ~Server();

    Server(const Server&) = delete;
    Server& operator=(const Server&) = delete;

    /// The endpoint must outlive the session.
    std::uint64_t attach(wire::Endpoint& ep);
    std::uint64_t attach(std::unique_ptr<wire::Endpoint> ep);

    /// Idempotent. Unmaps, then releases, then drops coherence state.
    void cleanup_session(std::uint64_t session, wire::CleanupCause cause);

    bool session_live(std::uint64_t session) const { return sessions_.count(session) != 0; }
    std::vector<std::uint64_t> sessions() const;
    Census census() const;
    const ServerStats& stats() const { return stats_; }
    const std::vector<CleanupRecord>& cleanups() const { return cleanups_; }
    const dsm::SectionTracker& sections() const { return sections_; }
    dsm::DsmNode* dsm(std::uint64_t session);
    const ServerConfig& config() const { return cfg_; }

private:
    struct Session;
    class OpContext;

    void on_message(const std::shared_ptr<Session>& s, wire::Message msg);
    void on_open(const std::shared_ptr<Session>& s, const wire::Message& msg);
    runtime::Task<void> run_op(std::shared_ptr<Session> s, wire::FileOpRequest req);
    runtime::Task<std::int64_t> execute(std::shared_ptr<Session> s, const wire::FileOpRequest& req, OpContext& ctx,
                                        wire::FileOpResponse& resp);
    void watchdog(std::uint64_t session);
    void dma_complete(Session& s, std::uint64_t kaddr, std::size_t len);
    std::int64_t register_region(Session& s, std::uint32_t desc, devmodel::MapId map, OpContext& ctx,
                                 std::uint64_t user_addr, std::size_t length, dsm::DmaPolicy policy,
                                 wire::FileOpResponse& resp);
    void drop_mapping(Session& s, std::uint32_t region_id, bool close_device_map);
    void send(Session& s, wire::Message msg);

    runtime::EventLoop& loop_;
    devmodel::DeviceRegistry& devices_;
    devmodel::KernelMemory& kmem_;
    ServerConfig cfg_;
    dsm::SectionTracker sections_;
    std::map<std::uint64_t, std::shared_ptr<Session>> sessions_;
    std::uint64_t next_session_ = 1;
    ServerStats stats_;
    std::vector<CleanupRecord> cleanups_;
    std::shared_ptr<int> life_ = std::make_shared<int>(0);
};

}  // namespace rio::server
