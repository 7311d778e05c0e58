#include "rio/dsm/section_tracker.hpp"

#include <algorithm>
#include <stdexcept>

#include <fmt/format.h>

namespace rio::dsm {

namespace {

// Invalid < ReadOnly < ReadWrite; the fold keeps the most restrictive.
PageState fold(const std::vector<PageState>& pages) {
    PageState out = PageState::ReadWrite;
    for (auto s : pages) out = std::min(out, s);
    return out;
}

}  // namespace

SectionTracker::SectionTracker(std::uint64_t base, std::size_t length) : base_(base) {
    if (base % kUnitSize != 0) throw std::invalid_argument("tracked range must be 2 MB aligned");
    sections_.resize((length + kSectionSize - 1) / kSectionSize);
}

std::size_t SectionTracker::section_index(std::uint64_t addr) const {
    if (addr < base_ || addr - base_ >= length())
        throw std::out_of_range(fmt::format("address {:#x} outside tracked range", addr));
    return (addr - base_) / kSectionSize;
}

std::pair<std::size_t, std::size_t> SectionTracker::unit_range(std::uint64_t addr, std::size_t len) const {
    if (len == 0) throw std::invalid_argument("empty range");
    auto first = section_index(addr);
    auto last = section_index(addr + len - 1);
    first -= first % 2;
    last = std::min(last - last % 2 + 2, sections_.size());
    return {first, last};
}

void SectionTracker::split(std::uint64_t addr, std::size_t len) {
    auto [first, last] = unit_range(addr, len);
    for (auto i = first; i < last; ++i) {
        auto& s = sections_[i];
        if (s.gran == Granularity::Page) continue;
        s.gran = Granularity::Page;
        s.pages.assign(kPagesPerSection, s.state);
        s.map_count.assign(kPagesPerSection, 0);
    }
}

bool SectionTracker::coalesce(std::uint64_t addr, std::size_t len) {
    auto [first, last] = unit_range(addr, len);
    bool all = true;
    for (auto u = first; u < last; u += 2) {
        auto hi = std::min(u + 2, sections_.size());
        bool busy = false;
        for (auto i = u; i < hi; ++i) {
            auto& s = sections_[i];
            if (s.gran == Granularity::Page &&
                std::any_of(s.map_count.begin(), s.map_count.end(), [](auto c) { return c != 0; }))
                busy = true;
        }
        if (busy) {
            all = false;
            continue;
        }
        for (auto i = u; i < hi; ++i) {
            auto& s = sections_[i];
            if (s.gran == Granularity::Section) continue;
            s.state = fold(s.pages);
            s.gran = Granularity::Section;
            s.pages.clear();
            s.map_count.clear();
        }
    }
    return all;
}

void SectionTracker::map(std::uint64_t addr, std::size_t len) {
    for (std::uint64_t a = addr - addr % kPageSize; a < addr + len; a += kPageSize) {
        auto& s = sections_[section_index(a)];
        if (s.gran != Granularity::Page) throw std::logic_error("mapping pages of an unsplit section");
        ++s.map_count[(a - base_) % kSectionSize / kPageSize];
    }
}

void SectionTracker::unmap(std::uint64_t addr, std::size_t len) {
    for (std::uint64_t a = addr - addr % kPageSize; a < addr + len; a += kPageSize) {
        auto& s = sections_[section_index(a)];
        if (s.gran != Granularity::Page) continue;
        auto& c = s.map_count[(a - base_) % kSectionSize / kPageSize];
        if (c) --c;
    }
}

void SectionTracker::set_page_state(std::uint64_t addr, PageState st) {
    auto& s = sections_[section_index(addr)];
    if (s.gran != Granularity::Page) throw std::logic_error("page state on an unsplit section");
    s.pages[(addr - base_) % kSectionSize / kPageSize] = st;
}

void SectionTracker::set_section_state(std::uint64_t addr, PageState st) {
    auto& s = sections_[section_index(addr)];
    if (s.gran == Granularity::Page) std::fill(s.pages.begin(), s.pages.end(), st);
    else s.state = st;
}

Granularity SectionTracker::granularity(std::uint64_t addr) const { return sections_[section_index(addr)].gran; }

PageState SectionTracker::state(std::uint64_t addr) const {
    auto& s = sections_[section_index(addr)];
    if (s.gran == Granularity::Section) return s.state;
    return s.pages[(addr - base_) % kSectionSize / kPageSize];
}

std::size_t SectionTracker::split_units() const {
    std::size_t n = 0;
    for (std::size_t i = 0; i < sections_.size(); i += 2)
        if (sections_[i].gran == Granularity::Page) ++n;
    return n;
}

std::size_t SectionTracker::mapped_pages() const {
    std::size_t n = 0;
    for (auto& s : sections_)
        for (auto c : s.map_count)
            if (c) ++n;
    return n;
}

SectionTracker::Snapshot SectionTracker::snapshot() const {
    Snapshot out;
    for (auto& s : sections_) {
        out.granularity.push_back(s.gran);
        out.section_state.push_back(s.gran == Granularity::Section ? s.state : fold(s.pages));
    }
    return out;
}

}  // namespace rio::dsm
