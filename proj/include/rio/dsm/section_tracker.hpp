#pragma once

#include <cstdint>
#include <vector>

#include "rio/dsm/engine.hpp"

namespace rio::dsm {

enum class Granularity : std::uint8_t { Section, Page };

/// Permission tracking over a kernel address range. Memory is tracked in 1 MB
/// sections until something needs page-level control; sections are split to
/// 4 KB pages in aligned 2 MB units and folded back once nothing is mapped.
class SectionTracker {
public:
    static constexpr std::size_t kSectionSize = std::size_t{1} << 20;
    static constexpr std::size_t kUnitSize = std::size_t{2} << 20;
    static constexpr std::size_t kPageSize = 4096;
    static constexpr std::size_t kPagesPerSection = kSectionSize / kPageSize;
    static constexpr std::size_t kPagesPerUnit = kUnitSize / kPageSize;

    /// `base` must be 2 MB aligned. Every section starts ReadWrite.
    SectionTracker(std::uint64_t base, std::size_t length);

    std::uint64_t base() const { return base_; }
    std::size_t length() const { return sections_.size() * kSectionSize; }

    /// Switches every 2 MB unit overlapping [addr, addr+len) to page
    /// granularity. Pages inherit their section's state.
    void split(std::uint64_t addr, std::size_t len);
    /// Folds every unit overlapping the range back to section granularity.
    /// Units with mapped pages stay split; returns false if any did.
    bool coalesce(std::uint64_t addr, std::size_t len);

    void map(std::uint64_t addr, std::size_t len);
    void unmap(std::uint64_t addr, std::size_t len);

    /// Requires page granularity at `addr`.
    void set_page_state(std::uint64_t addr, PageState s);
    void set_section_state(std::uint64_t addr, PageState s);

    Granularity granularity(std::uint64_t addr) const;
    PageState state(std::uint64_t addr) const;
    std::size_t split_units() const;
    std::size_t mapped_pages() const;

    struct Snapshot {
        std::vector<Granularity> granularity;
        std::vector<PageState> section_state;
        bool operator==(const Snapshot&) const = default;
    };
    /// Per-section granularity and state; page-level detail is not included.
    Snapshot snapshot() const;

private:
    struct Section {
        Granularity gran = Granularity::Section;
        PageState state = PageState::ReadWrite;
        std::vector<PageState> pages;
        std::vector<std::uint16_t> map_count;
    };

    std::size_t section_index(std::uint64_t addr) const;
    std::pair<std::size_t, std::size_t> unit_range(std::uint64_t addr, std::size_t len) const;

    std::uint64_t base_;
    std::vector<Section> sections_;
};

}  // namespace rio::dsm
