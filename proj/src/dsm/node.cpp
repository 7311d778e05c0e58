#include "rio/dsm/node.hpp"

#include <cstring>

#include <fmt/format.h>

#include "rio/common/errors.hpp"

namespace rio::dsm {

wire::Message to_message(const CoherenceMsg& msg, std::uint64_t session) {
    return std::visit(
        [session](const auto& m) {
            using T = std::decay_t<decltype(m)>;
            wire::Kind k;
            if constexpr (std::is_same_v<T, wire::PageFetch>) k = wire::Kind::PageFetch;
            else if constexpr (std::is_same_v<T, wire::PageData>) k = wire::Kind::PageData;
            else if constexpr (std::is_same_v<T, wire::PageInvalidate>) k = wire::Kind::PageInvalidate;
            else k = wire::Kind::PageUpdateBatch;
            return wire::make_message(k, m.encode(), session);
        },
        msg);
}

CoherenceMsg from_message(const wire::Message& msg, std::size_t page_size) {
    switch (msg.kind) {
        case wire::Kind::PageFetch: return wire::PageFetch::decode(msg.payload);
        case wire::Kind::PageData: return wire::PageData::decode(msg.payload);
        case wire::Kind::PageInvalidate: return wire::PageInvalidate::decode(msg.payload);
        case wire::Kind::PageUpdateBatch: return wire::PageUpdateBatch::decode(msg.payload, page_size);
        default: throw ProtocolError(fmt::format("{} is not a coherence message", wire::to_string(msg.kind)));
    }
}

DsmNode::DsmNode(runtime::EventLoop& loop, Role role, Sender send, std::size_t page_size, bool fetch_and_own)
    : loop_(loop), send_(std::move(send)), engine_(role, this, page_size, fetch_and_own) {}

DsmNode::~DsmNode() { abort_all(); }

void DsmNode::on_send(CoherenceMsg msg) {
    ++stats_.messages_sent;
    if (send_) send_(to_message(msg, session_));
}

void DsmNode::on_granted(std::uint64_t access_id, std::uint32_t, std::uint32_t, AccessMode mode,
                         MutableByteSpan page_bytes) {
    auto it = ops_.find(access_id);
    if (it == ops_.end()) return;
    auto& op = it->second;
    if (mode == AccessMode::Read) std::memcpy(op.dst, page_bytes.data() + op.offset, op.len);
    else std::memcpy(page_bytes.data() + op.offset, op.src, op.len);
    op.done.set_value(true);
    ops_.erase(it);
}

void DsmNode::on_aborted(std::uint64_t access_id) {
    auto it = ops_.find(access_id);
    if (it == ops_.end()) return;
    it->second.done.set_exception(std::make_exception_ptr(Cancelled{}));
    ops_.erase(it);
}

void DsmNode::on_state_change(std::uint32_t region, std::uint32_t page, PageState now) {
    if (state_hook_) state_hook_(region, page, now);
}

void DsmNode::abort_all() {
    auto ops = std::move(ops_);
    ops_.clear();
    for (auto& [id, op] : ops) op.done.set_exception(std::make_exception_ptr(Cancelled{}));
}

void DsmNode::receive(const wire::Message& msg) {
    ++stats_.messages_received;
    engine_.receive(from_message(msg, engine_.page_size()));
}

runtime::Task<void> DsmNode::touch(std::uint32_t region, std::uint64_t offset, std::size_t len, AccessMode mode,
                                   std::byte* dst, const std::byte* src) {
    const auto ps = engine_.page_size();
    std::size_t done = 0;
    while (done < len) {
        auto at = offset + done;
        auto page = static_cast<std::uint32_t>(at / ps);
        auto in_page = static_cast<std::size_t>(at % ps);
        auto n = std::min(len - done, ps - in_page);
        auto id = next_op_++;
        auto [it, inserted] = ops_.emplace(id, Op{dst ? dst + done : nullptr, src ? src + done : nullptr, in_page, n,
                                                  runtime::Promise<bool>(loop_)});
        auto fut = it->second.done.future();
        if (!engine_.access(id, region, page, mode)) {
            ++stats_.faults;
            co_await fut;
        }
        done += n;
    }
}

runtime::Task<Bytes> DsmNode::read(std::uint32_t region, std::uint64_t offset, std::size_t len) {
    Bytes out(len);
    if (offset + len > engine_.page_count(region) * engine_.page_size()) throw std::out_of_range("dsm read past region end");
    co_await touch(region, offset, len, AccessMode::Read, out.data(), nullptr);
    co_return out;
}

runtime::Task<void> DsmNode::write(std::uint32_t region, std::uint64_t offset, Bytes data) {
    if (offset + data.size() > engine_.page_count(region) * engine_.page_size())
        throw std::out_of_range("dsm write past region end");
    co_await touch(region, offset, data.size(), AccessMode::Write, nullptr, data.data());
}

}  // namespace rio::dsm
