#include "rio/devmodel/devices.hpp"

namespace rio::devmodel {

Bytes SensorSample::encode() const {
    Bytes out(kSize);
    store_le<std::uint32_t>(out, 0, seq);
    store_le<std::uint64_t>(out, 4, armed_at_us);
    return out;
}

SensorSample SensorSample::decode(ByteSpan in) {
    return SensorSample{load_le<std::uint32_t>(in, 0), load_le<std::uint64_t>(in, 4)};
}

SensorDevice::SensorDevice(runtime::EventLoop& loop, KernelMemory& kmem, SensorConfig cfg, std::string name)
    : Device(loop, kmem, std::move(name)), cfg_(cfg) {}

std::int64_t SensorDevice::on_open(FileId file, std::uint32_t) {
    files_[file] = State{};
    arm(file);
    return 0;
}

void SensorDevice::on_release(FileId file) {
    auto it = files_.find(file);
    if (it == files_.end()) return;
    if (it->second.timer) loop().cancel(*it->second.timer);
    files_.erase(it);
}

void SensorDevice::arm(FileId file) {
    auto& s = files_.at(file);
    s.armed_at = loop().now();
    s.ready = false;
    s.timer = after(cfg_.period, [this, file] {
        auto it = files_.find(file);
        if (it == files_.end()) return;
        it->second.ready = true;
        it->second.timer.reset();
        notify();
    });
}

Task<std::int64_t> SensorDevice::on_read(FileId file, std::uint64_t addr, std::size_t len, MemoryContext& mem) {
    if (len < SensorSample::kSize) co_return kEINVAL;
    auto& s = files_.at(file);
    if (!s.ready) co_return kEAGAIN;
    SensorSample sample{s.seq++, static_cast<std::uint64_t>(s.armed_at.time_since_epoch().count() / 1000)};
    arm(file);
    co_await mem.copy_to_user(addr, sample.encode());
    co_return static_cast<std::int64_t>(SensorSample::kSize);
}

std::uint32_t SensorDevice::ready_events(FileId file) const {
    auto it = files_.find(file);
    return it != files_.end() && it->second.ready ? kPollIn : 0;
}

}  // namespace rio::devmodel
