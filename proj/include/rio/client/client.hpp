#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "rio/client/prefetch.hpp"
#include "rio/common/errors.hpp"
#include "rio/devmodel/device.hpp"
#include "rio/dsm/node.hpp"
#include "rio/runtime/event_loop.hpp"
#include "rio/runtime/sync.hpp"
#include "rio/runtime/task.hpp"
#include "rio/wire/endpoint.hpp"
#include "rio/wire/payloads.hpp"

namespace rio::client {

using runtime::Task;

struct ClientConfig {
    Duration heartbeat_interval = from_ms(500);
    int heartbeat_miss_limit = 3;  // 0 disables heartbeats
    bool optimize = true;
    dsm::DmaPolicy dsm_policy = dsm::DmaPolicy::InvalidatePeer;
    bool fetch_and_own = true;
};

/// Smoothed heartbeat round-trip time.
class RttEstimator {
public:
    static constexpr double kAlpha = 0.125;

    void sample(Duration rtt);
    bool has_estimate() const { return samples_ > 0; }
    Duration estimate() const { return estimate_; }
    double estimate_ms() const { return to_ms(estimate_); }
    std::uint64_t samples() const { return samples_; }

private:
    Duration estimate_{};
    std::uint64_t samples_ = 0;
};

enum class HandleState { Connected, FallingBack, Failed };
std::string_view to_string(HandleState s);

using HandleId = std::uint32_t;

struct ClientStats {
    std::uint64_t ops = 0;
    std::uint64_t copy_requests_served = 0;  // device copies the prefetch set did not cover
    std::uint64_t batch_entries_applied = 0;
    std::uint64_t heartbeats_sent = 0;
    std::uint64_t heartbeat_acks = 0;
    std::uint64_t fallback_ops = 0;
};

/// Client-side bookkeeping still held; all zero once disconnect cleanup ran.
struct ClientResiduals {
    std::size_t regions = 0;
    std::size_t pending_ops = 0;
    std::size_t dsm_waiters = 0;
};

/// Client stub: virtual device handles whose file operations run on a remote
/// server, with process memory kept in `mem` and mapped device memory kept
/// coherent through the DSM.
class Client {
public:
    static constexpr std::uint64_t kShadowBase = 0x1'0000'0000ull;

    Client(runtime::EventLoop& loop, wire::Endpoint& ep, devmodel::UserMemory& mem, ClientConfig cfg = {});
    ~Client();

    Client(const Client&) = delete;
    Client& operator=(const Client&) = delete;

    /// Starts heartbeats.
    void start();
    /// Tells the server to clean up and closes the transport.
    void shutdown();

    PrefetchRegistry& prefetch() { return prefetch_; }
    const RttEstimator& rtt() const { return rtt_; }
    const ClientStats& stats() const { return stats_; }
    const ClientConfig& config() const { return cfg_; }
    void set_optimize(bool on) { cfg_.optimize = on; }
    void set_dsm_policy(dsm::DmaPolicy p) { cfg_.dsm_policy = p; }
    bool connected() const { return !disconnected_; }
    std::optional<TimePoint> disconnected_at() const { return disconnected_at_; }
    ClientResiduals residuals() const;
    dsm::DsmNode& dsm() { return *dsm_; }

    /// A local device of the same class takes over when the server is lost.
    void register_local_fallback(devmodel::Device& dev);

    Task<Result<HandleId>> open(std::string device_class, std::uint32_t flags = 0);
    HandleState state(HandleId h) const;
    const std::string& name(HandleId h) const;

    Task<std::int64_t> read(HandleId h, std::uint64_t addr, std::size_t len);
    Task<std::int64_t> write(HandleId h, std::uint64_t addr, std::size_t len);
    Task<std::int64_t> ioctl(HandleId h, std::uint32_t cmd, std::uint64_t arg);
    /// timeout_ms < 0 blocks, 0 answers immediately.
    Task<std::int64_t> poll(HandleId h, std::uint32_t events, double timeout_ms);
    /// Returns the shadow address of the mapping or a negated errno.
    Task<std::int64_t> mmap(HandleId h, std::size_t length, std::uint64_t offset);
    Task<std::int64_t> munmap(HandleId h, std::uint64_t addr);
    Task<std::int64_t> close(HandleId h);

    /// Shared buffer usable by both sides; returns its shadow address.
    Task<std::int64_t> alloc_global_buffer(std::uint32_t id, std::size_t size);
    Task<std::int64_t> free_global_buffer(std::uint32_t id);

    /// Coherent access to mapped or shared memory.
    Task<Bytes> page_read(std::uint64_t addr, std::size_t len);
    Task<void> page_write(std::uint64_t addr, Bytes data);
    /// Region containing addr, if any: (region id, base, length).
    std::optional<std::tuple<std::uint32_t, std::uint64_t, std::size_t>> region_at(std::uint64_t addr) const;

private:
    struct Handle {
        std::string device_class;
        std::string name;
        std::uint32_t descriptor = 0;
        HandleState state = HandleState::Connected;
        devmodel::Device* fallback = nullptr;
        std::optional<devmodel::FileId> local_file;
        bool closed = false;
    };
    struct Region {
        std::uint32_t id;
        std::uint64_t base;
        std::unique_ptr<Bytes> storage;
        HandleId handle;
        std::optional<std::uint32_t> global_id;
    };

    void on_message(wire::Message msg);
    void on_copy_request(const wire::CopyRequest& req);
    void apply_batch(const std::vector<wire::Chunk>& batch);
    void heartbeat();
    void arm_deadline();
    void declare_disconnect(const std::string& why);

    Task<wire::FileOpResponse> call(HandleId h, wire::FileOpRequest req);
    // Runs on the server, or on the local fallback once the server is gone.
    Task<std::int64_t> remote(HandleId h, wire::FileOpRequest req, std::int64_t local_timeout_ns = 0);
    Task<std::int64_t> local(HandleId h, const wire::FileOpRequest& req, std::int64_t timeout_ns);
    void install_regions(HandleId h, const std::vector<wire::RegionInfo>& regions);
    void drop_region(std::uint64_t base);
    Handle& handle(HandleId h);
    std::uint64_t alloc_shadow(std::size_t len);

    runtime::EventLoop& loop_;
    wire::Endpoint& ep_;
    devmodel::UserMemory& mem_;
    ClientConfig cfg_;
    PrefetchRegistry prefetch_ = PrefetchRegistry::reference();
    RttEstimator rtt_;
    ClientStats stats_;
    std::unique_ptr<dsm::DsmNode> dsm_;

    std::map<HandleId, Handle> handles_;
    HandleId next_handle_ = 1;
    std::map<std::string, devmodel::Device*, std::less<>> fallbacks_;
    std::map<std::uint64_t, Region> regions_;  // by base address
    std::uint64_t next_shadow_ = kShadowBase;

    std::uint64_t next_req_ = 1;
    struct Pending {
        HandleId handle;
        runtime::Promise<wire::FileOpResponse> promise;
    };
    std::map<std::uint64_t, Pending> pending_;
    std::map<std::uint64_t, runtime::Promise<wire::OpenAck>> opens_;

    std::map<std::uint64_t, TimePoint> beats_;  // heartbeat seq -> send time
    TimePoint last_ack_{};
    std::optional<runtime::EventLoop::TimerId> beat_timer_;
    std::optional<runtime::EventLoop::TimerId> deadline_timer_;
    bool started_ = false;
    bool disconnected_ = false;
    std::optional<TimePoint> disconnected_at_;
    std::shared_ptr<int> life_ = std::make_shared<int>(0);
};

}  // namespace rio::client
