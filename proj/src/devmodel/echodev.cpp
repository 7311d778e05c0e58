#include "rio/devmodel/devices.hpp"

namespace rio::devmodel {

EchoDevice::EchoDevice(runtime::EventLoop& loop, KernelMemory& kmem, std::string name)
    : Device(loop, kmem, std::move(name)) {}

std::int64_t EchoDevice::on_open(FileId, std::uint32_t) { return 0; }
void EchoDevice::on_release(FileId) {}

Task<std::int64_t> EchoDevice::on_ioctl(FileId, std::uint32_t cmd, std::uint64_t arg, MemoryContext& mem) {
    if (cmd == kEchoTransform) {
        co_await mem.put_user<std::uint32_t>(arg, ++counter_);
        auto in = co_await mem.copy_from_user(arg + 4, 8);
        Bytes out(12);
        std::uint32_t sum = 0;
        for (std::size_t i = 0; i < 8; ++i) {
            out[i] = ~in[i];
            sum += std::to_integer<std::uint32_t>(in[i]);
        }
        store_le<std::uint32_t>(out, 8, sum);
        co_await mem.copy_to_user(arg + 12, std::move(out));
        co_return 0;
    }
    if (cmd == kEchoGather) {
        std::int64_t sum = 0;
        for (std::uint64_t off = 0; off < 32; off += 8) {
            auto part = co_await mem.copy_from_user(arg + off, 8);
            for (auto b : part) sum += std::to_integer<int>(b);
        }
        co_return sum;
    }
    if (cmd == kEchoIndirect) {
        auto in = co_await mem.copy_from_user(arg, 8);
        for (auto& b : in) b = ~b;
        co_await mem.copy_to_user(arg + 8, std::move(in));
        co_return 0;
    }
    co_return kEINVAL;
}

void add_reference_devices(DeviceRegistry& reg, runtime::EventLoop& loop, KernelMemory& kmem) {
    reg.add(std::make_unique<SensorDevice>(loop, kmem));
    reg.add(std::make_unique<AudioDevice>(loop, kmem));
    reg.add(std::make_unique<FramesourceDevice>(loop, kmem));
    reg.add(std::make_unique<ModemDevice>(loop, kmem));
    reg.add(std::make_unique<EchoDevice>(loop, kmem));
}

}  // namespace rio::devmodel
