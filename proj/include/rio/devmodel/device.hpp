#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "rio/common/bytes.hpp"
#include "rio/common/errors.hpp"
#include "rio/devmodel/kernel_memory.hpp"
#include "rio/devmodel/user_memory.hpp"
#include "rio/runtime/sync.hpp"
#include "rio/runtime/task.hpp"

namespace rio::devmodel {

using runtime::Task;

inline constexpr std::uint32_t kPollIn = 0x0001;
inline constexpr std::uint32_t kPollOut = 0x0004;
inline constexpr std::uint32_t kPollErr = 0x0008;
inline constexpr std::int64_t kPollForever = -1;

/// The only way a driver reaches process memory during a file operation.
/// Failed accesses throw MemoryFault.
class MemoryContext {
public:
    virtual ~MemoryContext() = default;

    virtual Task<Bytes> copy_from_user(std::uint64_t addr, std::size_t len) = 0;
    virtual Task<void> copy_to_user(std::uint64_t addr, Bytes data) = 0;
    virtual Task<void> put_user_bytes(std::uint64_t addr, Bytes data) = 0;
    /// Maps one kernel page frame at a process address (mmap handlers only).
    virtual void map_page(std::uint64_t kernel_addr, std::uint64_t user_addr) = 0;
    virtual void dma_complete(std::uint64_t kernel_addr, std::size_t len) = 0;

    template <typename T>
    Task<void> put_user(std::uint64_t addr, T value) {
        static_assert(sizeof(T) == 1 || sizeof(T) == 2 || sizeof(T) == 4 || sizeof(T) == 8);
        return put_user_bytes(addr, le_bytes<T>(value));
    }
};

/// Services the opener provides to a device for the lifetime of a descriptor.
struct DeviceEnv {
    // Device finished writing kernel memory behind the CPU's back.
    std::function<void(std::uint64_t kernel_addr, std::size_t len)> dma_complete;
    // Kernel-side mirror of a shared buffer registered under `id`.
    std::function<std::optional<std::pair<std::uint64_t, std::size_t>>(std::uint32_t id)> global_buffer;
};

using FileId = std::uint32_t;
using MapId = std::uint32_t;

struct DeviceEvent {
    enum class Kind { Open, Release, Read, Write, Ioctl, Mmap, CloseMap, Poll };
    Kind kind;
    FileId file;
    TimePoint at;
    std::int64_t result = 0;
};

std::string_view to_string(DeviceEvent::Kind k);

/// Device-file contract. Handlers run as coroutines on the event loop; every
/// touch of process memory goes through the MemoryContext passed in.
class Device {
public:
    Device(runtime::EventLoop& loop, KernelMemory& kmem, std::string device_class);
    virtual ~Device() = default;

    Device(const Device&) = delete;
    Device& operator=(const Device&) = delete;

    const std::string& device_class() const { return class_; }
    runtime::EventLoop& loop() const { return loop_; }
    KernelMemory& kernel_memory() { return kmem_; }

    Result<FileId> open(std::uint32_t flags, DeviceEnv env = {});
    /// Always legal after open; cancels whatever the descriptor was waiting on.
    void release(FileId file);

    Task<std::int64_t> read(FileId file, std::uint64_t addr, std::size_t len, MemoryContext& mem);
    Task<std::int64_t> write(FileId file, std::uint64_t addr, std::size_t len, MemoryContext& mem);
    Task<std::int64_t> ioctl(FileId file, std::uint32_t cmd, std::uint64_t arg, MemoryContext& mem);
    /// Returns a positive map id or a negated errno.
    Task<std::int64_t> mmap(FileId file, std::size_t length, std::uint64_t offset, std::uint64_t user_addr,
                            MemoryContext& mem);
    void close_map(FileId file, MapId map);

    /// timeout_ns < 0 blocks until an event is ready, 0 answers immediately,
    /// > 0 waits at most that long. Returns ready events or a negated errno.
    Task<std::int64_t> poll(FileId file, std::uint32_t events, std::int64_t timeout_ns, runtime::CancelToken cancel = {});

    bool is_open(FileId file) const { return files_.count(file) != 0; }
    std::size_t open_files() const { return files_.size(); }
    virtual std::size_t live_maps() const { return 0; }
    const std::vector<DeviceEvent>& events() const { return log_; }
    void clear_events() { log_.clear(); }

protected:
    virtual std::int64_t on_open(FileId file, std::uint32_t flags) = 0;
    virtual void on_release(FileId file) = 0;
    virtual Task<std::int64_t> on_read(FileId, std::uint64_t, std::size_t, MemoryContext&);
    virtual Task<std::int64_t> on_write(FileId, std::uint64_t, std::size_t, MemoryContext&);
    virtual Task<std::int64_t> on_ioctl(FileId, std::uint32_t, std::uint64_t, MemoryContext&);
    virtual Task<std::int64_t> on_mmap(FileId, std::size_t, std::uint64_t, std::uint64_t, MemoryContext&);
    virtual void on_close_map(FileId, MapId) {}
    virtual std::uint32_t ready_events(FileId file) const = 0;

    /// Timer that is silently dropped if the device is gone by the time it fires.
    runtime::EventLoop::TimerId after(Duration delay, std::function<void()> fn);

    /// Wakes pollers after a state change.
    void notify() { events_changed_.notify_all(); }
    /// Cancelled when the descriptor is released.
    runtime::CancelToken file_token(FileId file) const;
    const DeviceEnv& env(FileId file) const;
    void record(DeviceEvent::Kind k, FileId file, std::int64_t result = 0);

private:
    struct File {
        DeviceEnv env;
        runtime::CancelSource cancel;
    };

    runtime::EventLoop& loop_;
    KernelMemory& kmem_;
    std::string class_;
    std::map<FileId, File> files_;
    FileId next_file_ = 1;
    runtime::Notifier events_changed_;
    std::vector<DeviceEvent> log_;
    std::shared_ptr<int> life_ = std::make_shared<int>(0);
};

/// Devices available on a host, keyed by class name.
class DeviceRegistry {
public:
    Device& add(std::unique_ptr<Device> dev);
    Device* find(std::string_view device_class) const;
    std::vector<std::string> classes() const;

private:
    std::map<std::string, std::unique_ptr<Device>, std::less<>> devices_;
};

/// MemoryContext over a local address space, for devices used in-process.
class DirectMemoryContext final : public MemoryContext {
public:
    explicit DirectMemoryContext(UserMemory& mem, DeviceEnv env = {}) : mem_(mem), env_(std::move(env)) {}

    Task<Bytes> copy_from_user(std::uint64_t addr, std::size_t len) override;
    Task<void> copy_to_user(std::uint64_t addr, Bytes data) override;
    Task<void> put_user_bytes(std::uint64_t addr, Bytes data) override;
    void map_page(std::uint64_t kernel_addr, std::uint64_t user_addr) override;
    void dma_complete(std::uint64_t kernel_addr, std::size_t len) override;

    const std::vector<std::pair<std::uint64_t, std::uint64_t>>& mapped() const { return mapped_; }

private:
    UserMemory& mem_;
    DeviceEnv env_;
    std::vector<std::pair<std::uint64_t, std::uint64_t>> mapped_;
};

}  // namespace rio::devmodel
