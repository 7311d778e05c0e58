#pragma once

#include <cstdint>

namespace rio::devmodel {

// Direction is from the process's point of view of the driver:
// Write = process -> driver, Read = driver -> process.
enum class IoctlDir : std::uint8_t { None = 0, Write = 1, Read = 2, ReadWrite = 3 };

/// 32-bit command number: nr bits 0-7, type bits 8-15, size bits 16-29, dir bits 30-31.
struct IoctlCommand {
    std::uint32_t raw = 0;

    static constexpr std::uint32_t kNrBits = 8;
    static constexpr std::uint32_t kTypeBits = 8;
    static constexpr std::uint32_t kSizeBits = 14;
    static constexpr std::uint32_t kTypeShift = kNrBits;
    static constexpr std::uint32_t kSizeShift = kTypeShift + kTypeBits;
    static constexpr std::uint32_t kDirShift = kSizeShift + kSizeBits;
    static constexpr std::uint32_t kMaxSize = (1u << kSizeBits) - 1;

    constexpr IoctlCommand() = default;
    constexpr explicit IoctlCommand(std::uint32_t r) : raw(r) {}

    static constexpr IoctlCommand make(IoctlDir dir, std::uint8_t type, std::uint8_t nr, std::uint32_t size) {
        return IoctlCommand((static_cast<std::uint32_t>(dir) << kDirShift) | ((size & kMaxSize) << kSizeShift) |
                            (static_cast<std::uint32_t>(type) << kTypeShift) | nr);
    }

    constexpr IoctlDir dir() const { return static_cast<IoctlDir>(raw >> kDirShift); }
    constexpr std::uint32_t size() const { return (raw >> kSizeShift) & kMaxSize; }
    constexpr std::uint8_t type() const { return static_cast<std::uint8_t>(raw >> kTypeShift); }
    constexpr std::uint8_t nr() const { return static_cast<std::uint8_t>(raw); }

    constexpr bool copies_in() const { return dir() == IoctlDir::Write || dir() == IoctlDir::ReadWrite; }
    constexpr bool copies_out() const { return dir() == IoctlDir::Read || dir() == IoctlDir::ReadWrite; }

    constexpr bool operator==(const IoctlCommand&) const = default;
};

constexpr std::uint32_t io(char type, std::uint8_t nr) {
    return IoctlCommand::make(IoctlDir::None, static_cast<std::uint8_t>(type), nr, 0).raw;
}
constexpr std::uint32_t ior(char type, std::uint8_t nr, std::uint32_t size) {
    return IoctlCommand::make(IoctlDir::Read, static_cast<std::uint8_t>(type), nr, size).raw;
}
constexpr std::uint32_t iow(char type, std::uint8_t nr, std::uint32_t size) {
    return IoctlCommand::make(IoctlDir::Write, static_cast<std::uint8_t>(type), nr, size).raw;
}
constexpr std::uint32_t iowr(char type, std::uint8_t nr, std::uint32_t size) {
    return IoctlCommand::make(IoctlDir::ReadWrite, static_cast<std::uint8_t>(type), nr, size).raw;
}

}  // namespace rio::devmodel
