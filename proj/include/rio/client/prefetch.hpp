#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "rio/devmodel/user_memory.hpp"
#include "rio/wire/payloads.hpp"

namespace rio::client {

/// Predicts which client buffers an ioctl handler will read so they can ship
/// with the request. Commands without an entry fall back to the direction and
/// size encoded in the command number.
class PrefetchRegistry {
public:
    using Recipe = std::function<std::vector<wire::Range>(std::uint32_t cmd, std::uint64_t arg,
                                                          const devmodel::UserMemory& mem)>;

    void add(std::string device_class, std::uint32_t cmd, Recipe recipe);
    bool has(const std::string& device_class, std::uint32_t cmd) const;

    /// Ranges to ship. Never throws for unreadable headers; it just ships less.
    std::vector<wire::Range> ranges(const std::string& device_class, std::uint32_t cmd, std::uint64_t arg,
                                    const devmodel::UserMemory& mem) const;

    /// Entries for the reference devices.
    static PrefetchRegistry reference(std::uint32_t audio_playback_bytes_per_frame = 4);

private:
    std::map<std::pair<std::string, std::uint32_t>, Recipe> recipes_;
};

}  // namespace rio::client
