#include "rio/devmodel/kernel_memory.hpp"

#include <cstring>
#include <stdexcept>

namespace rio::devmodel {

KernelMemory::KernelMemory(std::size_t capacity)
    : capacity_(round_up_pages(capacity)), mem_(new std::byte[capacity_]) {}

std::optional<std::uint64_t> KernelMemory::alloc(std::size_t len) {
    if (len == 0) return std::nullopt;
    const auto need = round_up_pages(len);
    std::size_t cursor = 0;
    for (const auto& [off, n] : blocks_) {
        if (off - cursor >= need) break;
        cursor = off + n;
    }
    if (cursor + need > capacity_) return std::nullopt;
    blocks_.emplace(cursor, need);
    used_ += need;
    std::memset(mem_.get() + cursor, 0, need);
    return kBase + cursor;
}

void KernelMemory::free(std::uint64_t addr) {
    if (addr < kBase) return;
    auto it = blocks_.find(static_cast<std::size_t>(addr - kBase));
    if (it == blocks_.end()) return;
    used_ -= it->second;
    blocks_.erase(it);
}

MutableByteSpan KernelMemory::span(std::uint64_t addr, std::size_t len) {
    if (addr < kBase) throw std::out_of_range("not a kernel address");
    const auto off = static_cast<std::size_t>(addr - kBase);
    auto it = blocks_.upper_bound(off);
    if (it == blocks_.begin()) throw std::out_of_range("kernel address not allocated");
    --it;
    if (off + len > it->first + it->second) throw std::out_of_range("kernel range crosses allocation end");
    return {mem_.get() + off, len};
}

}  // namespace rio::devmodel
