#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rio/common/bytes.hpp"

namespace rio::wire {

inline constexpr std::size_t kPageSize = 4096;

enum class FileOp : std::uint8_t {
    Read = 1,
    Write = 2,
    Ioctl = 3,
    Poll = 4,
    Mmap = 5,
    Munmap = 6,
    Release = 7,
    AllocGlobal = 8,
    FreeGlobal = 9,
};

// FileOpRequest flags.
inline constexpr std::uint8_t kReqOptimized = 0x01;
inline constexpr std::uint8_t kReqUpdatePush = 0x02;

// Poll timeouts: negative blocks until ready, zero answers immediately.
inline constexpr std::int64_t kPollBlocking = -1;

/// A (client address, bytes) pair: prefetched input or batched copy-back.
struct Chunk {
    std::uint64_t addr = 0;
    Bytes data;
    bool operator==(const Chunk&) const = default;
};

struct Range {
    std::uint64_t addr = 0;
    std::uint64_t len = 0;
    bool operator==(const Range&) const = default;
};

struct FileOpRequest {
    std::uint64_t op_id = 0;
    FileOp op = FileOp::Read;
    std::uint8_t flags = 0;
    std::uint32_t descriptor = 0;
    std::uint32_t cmd = 0;  // ioctl command, poll event mask, or global buffer id
    std::uint64_t addr = 0;
    std::uint64_t length = 0;
    std::uint64_t offset = 0;
    std::int64_t timeout_ns = 0;
    std::vector<Chunk> prefetch;

    bool operator==(const FileOpRequest&) const = default;
    Bytes encode() const;
    static FileOpRequest decode(ByteSpan in);
};

/// Shadow region created by a server-side map_page or global buffer allocation.
struct RegionInfo {
    std::uint32_t region_id = 0;
    std::uint64_t base = 0;
    std::uint64_t length = 0;
    std::uint8_t policy = 0;  // 0 invalidate, 1 update-push
    bool operator==(const RegionInfo&) const = default;
};

struct FileOpResponse {
    std::uint64_t op_id = 0;
    std::int64_t result = 0;
    std::vector<Chunk> batch;
    std::vector<RegionInfo> regions;

    bool operator==(const FileOpResponse&) const = default;
    Bytes encode() const;
    static FileOpResponse decode(ByteSpan in);
};

/// Server asks the client for ranges the prefetch set did not cover. Pending
/// client-memory writes ride along and are applied before the reads.
struct CopyRequest {
    std::uint64_t op_id = 0;
    std::vector<Range> reads;
    std::vector<Chunk> writes;

    bool operator==(const CopyRequest&) const = default;
    Bytes encode() const;
    static CopyRequest decode(ByteSpan in);
};

struct CopyResponse {
    std::uint64_t op_id = 0;
    std::int32_t status = 0;  // 0 or a negated errno when a range is unmapped
    std::vector<Bytes> data;

    bool operator==(const CopyResponse&) const = default;
    Bytes encode() const;
    static CopyResponse decode(ByteSpan in);
};

struct Open {
    std::uint64_t req_id = 0;
    std::string device_class;
    std::uint32_t flags = 0;

    bool operator==(const Open&) const = default;
    Bytes encode() const;
    static Open decode(ByteSpan in);
};

struct OpenAck {
    std::uint64_t req_id = 0;
    std::int64_t status = 0;
    std::uint32_t descriptor = 0;

    bool operator==(const OpenAck&) const = default;
    Bytes encode() const;
    static OpenAck decode(ByteSpan in);
};

struct HeartbeatAck {
    std::uint64_t echo_seq = 0;

    bool operator==(const HeartbeatAck&) const = default;
    Bytes encode() const;
    static HeartbeatAck decode(ByteSpan in);
};

enum class CleanupCause : std::uint8_t { HeartbeatTimeout = 1, LinkDown = 2, ClientClose = 3 };

struct Cleanup {
    CleanupCause cause = CleanupCause::ClientClose;

    bool operator==(const Cleanup&) const = default;
    Bytes encode() const;
    static Cleanup decode(ByteSpan in);
};

struct PageFetch {
    std::uint32_t region_id = 0;
    std::uint32_t page_index = 0;
    bool want_ownership = false;

    bool operator==(const PageFetch&) const = default;
    Bytes encode() const;
    static PageFetch decode(ByteSpan in);
};

inline constexpr std::uint8_t kDataGrantsOwnership = 0x01;

struct PageData {
    std::uint32_t region_id = 0;
    std::uint32_t page_index = 0;
    std::uint8_t flags = 0;
    Bytes data;

    bool operator==(const PageData&) const = default;
    Bytes encode() const;
    static PageData decode(ByteSpan in);
};

inline constexpr std::uint8_t kInvalidateRequestAck = 0x01;
inline constexpr std::uint8_t kInvalidateAck = 0x02;

struct PageInvalidate {
    std::uint32_t region_id = 0;
    std::uint8_t flags = 0;
    std::vector<std::uint32_t> pages;

    bool operator==(const PageInvalidate&) const = default;
    Bytes encode() const;
    static PageInvalidate decode(ByteSpan in);
};

struct PageUpdateBatch {
    struct Page {
        std::uint32_t index = 0;
        Bytes data;
        bool operator==(const Page&) const = default;
    };
    std::uint32_t region_id = 0;
    std::vector<Page> pages;

    bool operator==(const PageUpdateBatch&) const = default;
    Bytes encode() const;
    static PageUpdateBatch decode(ByteSpan in, std::size_t page_size = kPageSize);
};

}  // namespace rio::wire
