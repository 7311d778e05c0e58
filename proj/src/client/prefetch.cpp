#include "rio/client/prefetch.hpp"

#include "rio/devmodel/devices.hpp"
#include "rio/devmodel/ioctl.hpp"

namespace rio::client {

using devmodel::IoctlCommand;
using wire::Range;

void PrefetchRegistry::add(std::string device_class, std::uint32_t cmd, Recipe recipe) {
    recipes_[{std::move(device_class), cmd}] = std::move(recipe);
}

bool PrefetchRegistry::has(const std::string& device_class, std::uint32_t cmd) const {
    return recipes_.count({device_class, cmd}) != 0;
}

std::vector<Range> PrefetchRegistry::ranges(const std::string& device_class, std::uint32_t cmd, std::uint64_t arg,
                                            const devmodel::UserMemory& mem) const {
    std::vector<Range> out;
    if (auto it = recipes_.find({device_class, cmd}); it != recipes_.end()) {
        out = it->second(cmd, arg, mem);
    } else {
        IoctlCommand c(cmd);
        if (c.copies_in() && c.size() > 0) out.push_back({arg, c.size()});
    }
    std::erase_if(out, [&](const Range& r) { return r.len == 0 || !mem.contains(r.addr, r.len); });
    return out;
}

PrefetchRegistry PrefetchRegistry::reference(std::uint32_t audio_playback_bytes_per_frame) {
    PrefetchRegistry reg;
    auto audio_header = [](std::uint64_t arg, const devmodel::UserMemory& mem) {
        return mem.contains(arg, devmodel::AudioXfer::kSize)
                   ? std::optional(devmodel::AudioXfer::decode(mem.read(arg, devmodel::AudioXfer::kSize)))
                   : std::nullopt;
    };
    reg.add("audio", devmodel::kAudioXfer,
            [audio_header, audio_playback_bytes_per_frame](std::uint32_t, std::uint64_t arg, const devmodel::UserMemory& mem) {
                std::vector<Range> r{{arg, devmodel::AudioXfer::kSize}};
                if (auto h = audio_header(arg, mem))
                    r.push_back({h->data_addr, std::uint64_t{h->frame_count} * audio_playback_bytes_per_frame});
                return r;
            });
    reg.add("audio", devmodel::kAudioXferCapture, [](std::uint32_t, std::uint64_t arg, const devmodel::UserMemory&) {
        return std::vector<Range>{{arg, devmodel::AudioXfer::kSize}};
    });
    reg.add("echodev", devmodel::kEchoIndirect, [](std::uint32_t, std::uint64_t arg, const devmodel::UserMemory&) {
        return std::vector<Range>{{arg, 8}};
    });
    return reg;
}

}  // namespace rio::client
