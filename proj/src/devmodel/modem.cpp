#include "rio/devmodel/devices.hpp"

namespace rio::devmodel {

ModemDevice::ModemDevice(runtime::EventLoop& loop, KernelMemory& kmem, ModemConfig cfg, std::string name)
    : Device(loop, kmem, std::move(name)), cfg_(cfg) {}

std::int64_t ModemDevice::on_open(FileId file, std::uint32_t) {
    files_[file] = State{};
    return 0;
}

void ModemDevice::on_release(FileId file) {
    auto it = files_.find(file);
    if (it == files_.end()) return;
    for (auto t : it->second.pending) loop().cancel(t);
    files_.erase(it);
}

Task<std::int64_t> ModemDevice::on_write(FileId file, std::uint64_t addr, std::size_t len, MemoryContext& mem) {
    if (len < 4) co_return kEINVAL;
    auto rec = co_await mem.copy_from_user(addr, len);
    const auto tag = load_le<std::uint32_t>(rec, 0);
    Duration delay;
    if (tag == kModemCall)
        delay = cfg_.call_delay;
    else if (tag == kModemSms)
        delay = cfg_.sms_delay;
    else
        co_return kEINVAL;
    auto it = files_.find(file);
    if (it == files_.end()) co_return kECANCELED;
    auto id = std::make_shared<runtime::EventLoop::TimerId>();
    *id = after(delay, [this, file, tag, id] {
        auto f = files_.find(file);
        if (f == files_.end()) return;
        std::erase(f->second.pending, *id);
        f->second.completed.push_back(tag);
        notify();
    });
    it->second.pending.push_back(*id);
    co_return static_cast<std::int64_t>(len);
}

Task<std::int64_t> ModemDevice::on_read(FileId file, std::uint64_t addr, std::size_t len, MemoryContext& mem) {
    if (len < 8) co_return kEINVAL;
    auto& s = files_.at(file);
    if (s.completed.empty()) co_return kEAGAIN;
    const auto tag = s.completed.front();
    s.completed.pop_front();
    Bytes out(8);
    store_le<std::uint32_t>(out, 0, tag);
    store_le<std::int32_t>(out, 4, 0);
    co_await mem.copy_to_user(addr, std::move(out));
    co_return 8;
}

std::uint32_t ModemDevice::ready_events(FileId file) const {
    auto it = files_.find(file);
    return it != files_.end() && !it->second.completed.empty() ? kPollIn : 0;
}

}  // namespace rio::devmodel
