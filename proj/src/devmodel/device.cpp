#include "rio/devmodel/device.hpp"

#include <stdexcept>

namespace rio::devmodel {

std::string_view to_string(DeviceEvent::Kind k) {
    switch (k) {
        case DeviceEvent::Kind::Open: return "open";
        case DeviceEvent::Kind::Release: return "release";
        case DeviceEvent::Kind::Read: return "read";
        case DeviceEvent::Kind::Write: return "write";
        case DeviceEvent::Kind::Ioctl: return "ioctl";
        case DeviceEvent::Kind::Mmap: return "mmap";
        case DeviceEvent::Kind::CloseMap: return "close_map";
        case DeviceEvent::Kind::Poll: return "poll";
    }
    return "?";
}

Device::Device(runtime::EventLoop& loop, KernelMemory& kmem, std::string device_class)
    : loop_(loop), kmem_(kmem), class_(std::move(device_class)), events_changed_(loop) {}

Result<FileId> Device::open(std::uint32_t flags, DeviceEnv env) {
    const FileId id = next_file_++;
    files_.emplace(id, File{std::move(env), {}});
    auto rc = on_open(id, flags);
    record(DeviceEvent::Kind::Open, id, rc);
    if (rc < 0) {
        files_.erase(id);
        return Result<FileId>::error(rc);
    }
    return id;
}

void Device::release(FileId file) {
    auto it = files_.find(file);
    if (it == files_.end()) return;
    it->second.cancel.cancel();
    on_release(file);
    files_.erase(file);
    record(DeviceEvent::Kind::Release, file);
    notify();
}

Task<std::int64_t> Device::read(FileId file, std::uint64_t addr, std::size_t len, MemoryContext& mem) {
    if (!is_open(file)) co_return kEBADF;
    auto rc = co_await on_read(file, addr, len, mem);
    record(DeviceEvent::Kind::Read, file, rc);
    co_return rc;
}

Task<std::int64_t> Device::write(FileId file, std::uint64_t addr, std::size_t len, MemoryContext& mem) {
    if (!is_open(file)) co_return kEBADF;
    auto rc = co_await on_write(file, addr, len, mem);
    record(DeviceEvent::Kind::Write, file, rc);
    co_return rc;
}

Task<std::int64_t> Device::ioctl(FileId file, std::uint32_t cmd, std::uint64_t arg, MemoryContext& mem) {
    if (!is_open(file)) co_return kEBADF;
    auto rc = co_await on_ioctl(file, cmd, arg, mem);
    record(DeviceEvent::Kind::Ioctl, file, rc);
    co_return rc;
}

Task<std::int64_t> Device::mmap(FileId file, std::size_t length, std::uint64_t offset, std::uint64_t user_addr,
                                MemoryContext& mem) {
    if (!is_open(file)) co_return kEBADF;
    auto rc = co_await on_mmap(file, length, offset, user_addr, mem);
    record(DeviceEvent::Kind::Mmap, file, rc);
    co_return rc;
}

void Device::close_map(FileId file, MapId map) {
    on_close_map(file, map);
    record(DeviceEvent::Kind::CloseMap, file, map);
}

Task<std::int64_t> Device::poll(FileId file, std::uint32_t events, std::int64_t timeout_ns, runtime::CancelToken cancel) {
    if (!is_open(file)) co_return kEBADF;
    std::optional<TimePoint> deadline;
    if (timeout_ns > 0) deadline = loop_.now() + Duration{timeout_ns};
    for (;;) {
        if (!is_open(file)) co_return kECANCELED;
        const std::uint32_t ready = ready_events(file) & (events | kPollErr);
        if (ready != 0 || timeout_ns == 0) {
            record(DeviceEvent::Kind::Poll, file, ready);
            co_return ready;
        }
        auto why = co_await events_changed_.wait(cancel, deadline);
        if (why == runtime::Wake::Cancelled) co_return kECANCELED;
        if (why == runtime::Wake::Timeout) {
            const std::uint32_t last = is_open(file) ? ready_events(file) & events : 0;
            record(DeviceEvent::Kind::Poll, file, last);
            co_return last;
        }
    }
}

Task<std::int64_t> Device::on_read(FileId, std::uint64_t, std::size_t, MemoryContext&) { co_return kEINVAL; }
Task<std::int64_t> Device::on_write(FileId, std::uint64_t, std::size_t, MemoryContext&) { co_return kEINVAL; }
Task<std::int64_t> Device::on_ioctl(FileId, std::uint32_t, std::uint64_t, MemoryContext&) { co_return kEINVAL; }
Task<std::int64_t> Device::on_mmap(FileId, std::size_t, std::uint64_t, std::uint64_t, MemoryContext&) {
    co_return kENODEV;
}

runtime::CancelToken Device::file_token(FileId file) const {
    auto it = files_.find(file);
    if (it == files_.end()) {
        runtime::CancelSource gone;
        gone.cancel();
        return gone.token();
    }
    return it->second.cancel.token();
}

const DeviceEnv& Device::env(FileId file) const {
    static const DeviceEnv empty;
    auto it = files_.find(file);
    return it == files_.end() ? empty : it->second.env;
}

runtime::EventLoop::TimerId Device::after(Duration delay, std::function<void()> fn) {
    std::weak_ptr<int> life = life_;
    return loop_.schedule_after(delay, [life, fn = std::move(fn)] {
        if (!life.expired()) fn();
    });
}

void Device::record(DeviceEvent::Kind k, FileId file, std::int64_t result) {
    log_.push_back(DeviceEvent{k, file, loop_.now(), result});
}

Device& DeviceRegistry::add(std::unique_ptr<Device> dev) {
    auto name = dev->device_class();
    auto [it, inserted] = devices_.emplace(name, std::move(dev));
    if (!inserted) throw std::invalid_argument("device class already registered: " + name);
    return *it->second;
}

Device* DeviceRegistry::find(std::string_view device_class) const {
    auto it = devices_.find(device_class);
    return it == devices_.end() ? nullptr : it->second.get();
}

std::vector<std::string> DeviceRegistry::classes() const {
    std::vector<std::string> out;
    for (const auto& [k, _] : devices_) out.push_back(k);
    return out;
}

Task<Bytes> DirectMemoryContext::copy_from_user(std::uint64_t addr, std::size_t len) { co_return mem_.read(addr, len); }

Task<void> DirectMemoryContext::copy_to_user(std::uint64_t addr, Bytes data) {
    mem_.write(addr, data);
    co_return;
}

Task<void> DirectMemoryContext::put_user_bytes(std::uint64_t addr, Bytes data) {
    mem_.write(addr, data);
    co_return;
}

void DirectMemoryContext::map_page(std::uint64_t kernel_addr, std::uint64_t user_addr) {
    mapped_.emplace_back(kernel_addr, user_addr);
}

void DirectMemoryContext::dma_complete(std::uint64_t kernel_addr, std::size_t len) {
    if (env_.dma_complete) env_.dma_complete(kernel_addr, len);
}

}  // namespace rio::devmodel
