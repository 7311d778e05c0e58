#include "rio/devmodel/user_memory.hpp"

#include <algorithm>
#include <new>

#include <fmt/format.h>

#include "rio/common/errors.hpp"

namespace rio::devmodel {

UserMemory::UserMemory(std::uint64_t base, std::size_t size) : base_(base), mem_(size) {}

bool UserMemory::contains(std::uint64_t addr, std::size_t len) const {
    return addr >= base_ && addr - base_ <= mem_.size() && len <= mem_.size() - (addr - base_);
}

MutableByteSpan UserMemory::view(std::uint64_t addr, std::size_t len) {
    if (!contains(addr, len)) throw MemoryFault(fmt::format("bad user address {:#x}+{}", addr, len));
    return MutableByteSpan(mem_).subspan(addr - base_, len);
}

Bytes UserMemory::read(std::uint64_t addr, std::size_t len) const {
    if (!contains(addr, len)) throw MemoryFault(fmt::format("bad user address {:#x}+{}", addr, len));
    auto first = mem_.begin() + static_cast<std::ptrdiff_t>(addr - base_);
    return Bytes(first, first + static_cast<std::ptrdiff_t>(len));
}

void UserMemory::write(std::uint64_t addr, ByteSpan data) {
    auto v = view(addr, data.size());
    std::copy(data.begin(), data.end(), v.begin());
}

std::uint64_t UserMemory::alloc(std::size_t len, std::size_t align) {
    auto start = (next_ + align - 1) / align * align;
    if (start + len > mem_.size()) throw std::bad_alloc();
    next_ = start + len;
    return base_ + start;
}

}  // namespace rio::devmodel
