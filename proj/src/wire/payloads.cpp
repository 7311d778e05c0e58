#include "rio/wire/payloads.hpp"

#include <algorithm>

namespace rio::wire {

namespace {

void put_chunks(ByteWriter& w, const std::vector<Chunk>& chunks) {
    w.u32(static_cast<std::uint32_t>(chunks.size()));
    for (const auto& c : chunks) {
        w.u64(c.addr);
        w.blob(c.data);
    }
}

std::vector<Chunk> get_chunks(ByteReader& r) {
    const auto n = r.u32();
    std::vector<Chunk> out;
    out.reserve(std::min<std::size_t>(n, r.remaining() / 12));
    for (std::uint32_t i = 0; i < n; ++i) {
        Chunk c;
        c.addr = r.u64();
        c.data = r.blob();
        out.push_back(std::move(c));
    }
    return out;
}

FileOp file_op_from(std::uint8_t b) {
    if (b < static_cast<std::uint8_t>(FileOp::Read) || b > static_cast<std::uint8_t>(FileOp::FreeGlobal))
        throw DecodeError("unknown file operation");
    return static_cast<FileOp>(b);
}

}  // namespace

Bytes FileOpRequest::encode() const {
    ByteWriter w;
    w.u64(op_id);
    w.u8(static_cast<std::uint8_t>(op));
    w.u8(flags);
    w.u32(descriptor);
    w.u32(cmd);
    w.u64(addr);
    w.u64(length);
    w.u64(offset);
    w.i64(timeout_ns);
    put_chunks(w, prefetch);
    return w.take();
}

FileOpRequest FileOpRequest::decode(ByteSpan in) {
    ByteReader r(in);
    FileOpRequest q;
    q.op_id = r.u64();
    q.op = file_op_from(r.u8());
    q.flags = r.u8();
    q.descriptor = r.u32();
    q.cmd = r.u32();
    q.addr = r.u64();
    q.length = r.u64();
    q.offset = r.u64();
    q.timeout_ns = r.i64();
    q.prefetch = get_chunks(r);
    r.expect_end();
    return q;
}

Bytes FileOpResponse::encode() const {
    ByteWriter w;
    w.u64(op_id);
    w.i64(result);
    put_chunks(w, batch);
    w.u32(static_cast<std::uint32_t>(regions.size()));
    for (const auto& g : regions) {
        w.u32(g.region_id);
        w.u64(g.base);
        w.u64(g.length);
        w.u8(g.policy);
    }
    return w.take();
}

FileOpResponse FileOpResponse::decode(ByteSpan in) {
    ByteReader r(in);
    FileOpResponse p;
    p.op_id = r.u64();
    p.result = r.i64();
    p.batch = get_chunks(r);
    const auto n = r.u32();
    for (std::uint32_t i = 0; i < n; ++i) {
        RegionInfo g;
        g.region_id = r.u32();
        g.base = r.u64();
        g.length = r.u64();
        g.policy = r.u8();
        p.regions.push_back(g);
    }
    r.expect_end();
    return p;
}

Bytes CopyRequest::encode() const {
    ByteWriter w;
    w.u64(op_id);
    w.u32(static_cast<std::uint32_t>(reads.size()));
    for (const auto& g : reads) {
        w.u64(g.addr);
        w.u64(g.len);
    }
    put_chunks(w, writes);
    return w.take();
}

CopyRequest CopyRequest::decode(ByteSpan in) {
    ByteReader r(in);
    CopyRequest q;
    q.op_id = r.u64();
    const auto n = r.u32();
    for (std::uint32_t i = 0; i < n; ++i) {
        Range g;
        g.addr = r.u64();
        g.len = r.u64();
        q.reads.push_back(g);
    }
    q.writes = get_chunks(r);
    r.expect_end();
    return q;
}

Bytes CopyResponse::encode() const {
    ByteWriter w;
    w.u64(op_id);
    w.i32(status);
    w.u32(static_cast<std::uint32_t>(data.size()));
    for (const auto& d : data) w.blob(d);
    return w.take();
}

CopyResponse CopyResponse::decode(ByteSpan in) {
    ByteReader r(in);
    CopyResponse p;
    p.op_id = r.u64();
    p.status = r.i32();
    const auto n = r.u32();
    for (std::uint32_t i = 0; i < n; ++i) p.data.push_back(r.blob());
    r.expect_end();
    return p;
}

Bytes Open::encode() const {
    ByteWriter w;
    w.u64(req_id);
    w.str(device_class);
    w.u32(flags);
    return w.take();
}

Open Open::decode(ByteSpan in) {
    ByteReader r(in);
    Open o;
    o.req_id = r.u64();
    o.device_class = r.str();
    o.flags = r.u32();
    r.expect_end();
    return o;
}

Bytes OpenAck::encode() const {
    ByteWriter w;
    w.u64(req_id);
    w.i64(status);
    w.u32(descriptor);
    return w.take();
}

OpenAck OpenAck::decode(ByteSpan in) {
    ByteReader r(in);
    OpenAck a;
    a.req_id = r.u64();
    a.status = r.i64();
    a.descriptor = r.u32();
    r.expect_end();
    return a;
}

Bytes HeartbeatAck::encode() const {
    ByteWriter w;
    w.u64(echo_seq);
    return w.take();
}

HeartbeatAck HeartbeatAck::decode(ByteSpan in) {
    ByteReader r(in);
    HeartbeatAck a;
    a.echo_seq = r.u64();
    r.expect_end();
    return a;
}

Bytes Cleanup::encode() const {
    ByteWriter w;
    w.u8(static_cast<std::uint8_t>(cause));
    return w.take();
}

Cleanup Cleanup::decode(ByteSpan in) {
    ByteReader r(in);
    Cleanup c;
    const auto b = r.u8();
    if (b < 1 || b > 3) throw DecodeError("unknown cleanup cause");
    c.cause = static_cast<CleanupCause>(b);
    r.expect_end();
    return c;
}

Bytes PageFetch::encode() const {
    ByteWriter w;
    w.u32(region_id);
    w.u32(page_index);
    w.u8(want_ownership ? 1 : 0);
    return w.take();
}

PageFetch PageFetch::decode(ByteSpan in) {
    ByteReader r(in);
    PageFetch f;
    f.region_id = r.u32();
    f.page_index = r.u32();
    f.want_ownership = r.u8() != 0;
    r.expect_end();
    return f;
}

Bytes PageData::encode() const {
    ByteWriter w;
    w.u32(region_id);
    w.u32(page_index);
    w.u8(flags);
    w.raw(data);
    return w.take();
}

PageData PageData::decode(ByteSpan in) {
    ByteReader r(in);
    PageData d;
    d.region_id = r.u32();
    d.page_index = r.u32();
    d.flags = r.u8();
    auto rest = r.raw(r.remaining());
    d.data.assign(rest.begin(), rest.end());
    return d;
}

Bytes PageInvalidate::encode() const {
    ByteWriter w;
    w.u32(region_id);
    w.u8(flags);
    w.u32(static_cast<std::uint32_t>(pages.size()));
    for (auto p : pages) w.u32(p);
    return w.take();
}

PageInvalidate PageInvalidate::decode(ByteSpan in) {
    ByteReader r(in);
    PageInvalidate v;
    v.region_id = r.u32();
    v.flags = r.u8();
    const auto n = r.u32();
    if (n > r.remaining() / 4) throw DecodeError("payload truncated");
    v.pages.reserve(n);
    for (std::uint32_t i = 0; i < n; ++i) v.pages.push_back(r.u32());
    r.expect_end();
    return v;
}

Bytes PageUpdateBatch::encode() const {
    Bytes out;
    std::size_t total = 8;
    for (const auto& p : pages) total += 4 + p.data.size();
    out.reserve(total);
    ByteWriter w(out);
    w.u32(region_id);
    w.u32(static_cast<std::uint32_t>(pages.size()));
    for (const auto& p : pages) {
        w.u32(p.index);
        w.raw(p.data);
    }
    return out;
}

PageUpdateBatch PageUpdateBatch::decode(ByteSpan in, std::size_t page_size) {
    ByteReader r(in);
    PageUpdateBatch b;
    b.region_id = r.u32();
    const auto n = r.u32();
    if (n > r.remaining() / (4 + page_size)) throw DecodeError("payload truncated");
    b.pages.reserve(n);
    for (std::uint32_t i = 0; i < n; ++i) {
        Page p;
        p.index = r.u32();
        auto d = r.raw(page_size);
        p.data.assign(d.begin(), d.end());
        b.pages.push_back(std::move(p));
    }
    r.expect_end();
    return b;
}

}  // namespace rio::wire
