#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>

#include "rio/common/bytes.hpp"

namespace rio::devmodel {

inline constexpr std::size_t kPageSize = 4096;

constexpr std::size_t round_up_pages(std::size_t n) { return (n + kPageSize - 1) / kPageSize * kPageSize; }

/// Physically contiguous, page-aligned memory owned by the server's drivers.
/// Addresses are opaque 64-bit kernel addresses; allocations are zeroed.
class KernelMemory {
public:
    static constexpr std::uint64_t kBase = 0xffff'8000'0000'0000ull;

    explicit KernelMemory(std::size_t capacity = 32u << 20);

    std::optional<std::uint64_t> alloc(std::size_t len);
    void free(std::uint64_t addr);

    /// Throws std::out_of_range unless [addr, addr+len) lies inside one allocation.
    MutableByteSpan span(std::uint64_t addr, std::size_t len);

    std::size_t capacity() const { return capacity_; }
    std::size_t used() const { return used_; }
    std::size_t allocations() const { return blocks_.size(); }

private:
    std::size_t capacity_;
    std::unique_ptr<std::byte[]> mem_;
    std::map<std::size_t, std::size_t> blocks_;  // offset -> length
    std::size_t used_ = 0;
};

}  // namespace rio::devmodel
