#pragma once

#include <cstddef>
#include <cstdint>

#include "rio/common/bytes.hpp"

namespace rio::devmodel {

/// Flat byte arena standing in for a process address space. Accesses outside
/// [base, base+size) raise MemoryFault.
class UserMemory {
public:
    explicit UserMemory(std::uint64_t base = 0x10000, std::size_t size = 16u << 20);

    std::uint64_t base() const { return base_; }
    std::size_t size() const { return mem_.size(); }
    bool contains(std::uint64_t addr, std::size_t len) const;

    Bytes read(std::uint64_t addr, std::size_t len) const;
    void write(std::uint64_t addr, ByteSpan data);
    MutableByteSpan view(std::uint64_t addr, std::size_t len);

    /// Bump allocation for buffers handed to devices. Throws std::bad_alloc when full.
    std::uint64_t alloc(std::size_t len, std::size_t align = 16);
    void reset_allocations() { next_ = 0; }

private:
    std::uint64_t base_;
    Bytes mem_;
    std::size_t next_ = 0;
};

}  // namespace rio::devmodel
