#pragma once

#include <cstddef>
#include <cstdint>
#include <cstring>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

namespace rio {

using Bytes = std::vector<std::byte>;
using ByteSpan = std::span<const std::byte>;
using MutableByteSpan = std::span<std::byte>;

/// Thrown when a byte sequence cannot be parsed as the structure it claims to be.
class DecodeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Appends big-endian integers and raw bytes to a growing buffer.
class ByteWriter {
public:
    ByteWriter() = default;
    explicit ByteWriter(Bytes& out) : out_(&out) {}

    void u8(std::uint8_t v) { buf().push_back(std::byte{v}); }
    void u16(std::uint16_t v) { put_be(v, 2); }
    void u32(std::uint32_t v) { put_be(v, 4); }
    void u64(std::uint64_t v) { put_be(v, 8); }
    void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
    void i64(std::int64_t v) { u64(static_cast<std::uint64_t>(v)); }

    void raw(ByteSpan bytes) { buf().insert(buf().end(), bytes.begin(), bytes.end()); }

    // u32 length prefix followed by the bytes.
    void blob(ByteSpan bytes) {
        u32(static_cast<std::uint32_t>(bytes.size()));
        raw(bytes);
    }

    void str(std::string_view s) {
        if (s.size() > 0xFFFF) throw std::length_error("string too long for u16 prefix");
        u16(static_cast<std::uint16_t>(s.size()));
        raw(std::as_bytes(std::span(s.data(), s.size())));
    }

    Bytes take() { return std::move(own_); }
    std::size_t size() const { return out_ ? out_->size() : own_.size(); }

private:
    Bytes& buf() { return out_ ? *out_ : own_; }

    void put_be(std::uint64_t v, int n) {
        for (int i = n - 1; i >= 0; --i) buf().push_back(std::byte{static_cast<std::uint8_t>(v >> (8 * i))});
    }

    Bytes own_;
    Bytes* out_ = nullptr;
};

/// Reads big-endian integers from a byte span; throws DecodeError on underrun.
class ByteReader {
public:
    explicit ByteReader(ByteSpan in) : in_(in) {}

    std::uint8_t u8() { return static_cast<std::uint8_t>(get_be(1)); }
    std::uint16_t u16() { return static_cast<std::uint16_t>(get_be(2)); }
    std::uint32_t u32() { return static_cast<std::uint32_t>(get_be(4)); }
    std::uint64_t u64() { return get_be(8); }
    std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
    std::int64_t i64() { return static_cast<std::int64_t>(u64()); }

    ByteSpan raw(std::size_t n) {
        need(n);
        auto out = in_.subspan(pos_, n);
        pos_ += n;
        return out;
    }

    Bytes blob() {
        auto n = u32();
        auto s = raw(n);
        return Bytes(s.begin(), s.end());
    }

    std::string str() {
        auto n = u16();
        auto s = raw(n);
        return std::string(reinterpret_cast<const char*>(s.data()), s.size());
    }

    std::size_t remaining() const { return in_.size() - pos_; }
    std::size_t position() const { return pos_; }

    void expect_end() const {
        if (remaining() != 0) throw DecodeError("trailing bytes in payload");
    }

private:
    void need(std::size_t n) const {
        if (remaining() < n) throw DecodeError("payload truncated");
    }

    std::uint64_t get_be(int n) {
        need(static_cast<std::size_t>(n));
        std::uint64_t v = 0;
        for (int i = 0; i < n; ++i) v = (v << 8) | std::to_integer<std::uint64_t>(in_[pos_ + i]);
        pos_ += static_cast<std::size_t>(n);
        return v;
    }

    ByteSpan in_;
    std::size_t pos_ = 0;
};

// Process-memory records (the structures devices read out of client memory)
// use little-endian layout, like the ARM userspace they stand in for.
template <typename T>
T load_le(ByteSpan bytes, std::size_t offset) {
    static_assert(std::is_integral_v<T>);
    if (offset + sizeof(T) > bytes.size()) throw DecodeError("record truncated");
    std::make_unsigned_t<T> v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
        v |= static_cast<std::make_unsigned_t<T>>(std::to_integer<std::uint8_t>(bytes[offset + i])) << (8 * i);
    return static_cast<T>(v);
}

template <typename T>
void store_le(MutableByteSpan bytes, std::size_t offset, T value) {
    static_assert(std::is_integral_v<T>);
    if (offset + sizeof(T) > bytes.size()) throw std::out_of_range("record truncated");
    auto v = static_cast<std::make_unsigned_t<T>>(value);
    for (std::size_t i = 0; i < sizeof(T); ++i) bytes[offset + i] = std::byte{static_cast<std::uint8_t>(v >> (8 * i))};
}

template <typename T>
Bytes le_bytes(T value) {
    Bytes out(sizeof(T));
    store_le<T>(out, 0, value);
    return out;
}

}  // namespace rio
