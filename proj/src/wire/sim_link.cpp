#include "rio/wire/sim_link.hpp"

#include <algorithm>

namespace rio::wire {

class SimulatedLink::End final : public Endpoint {
public:
    End(SimulatedLink& link, Side side) : link_(link), side_(side) {}

    bool connected() const override { return open_; }

    void close() override {
        if (!open_) return;
        open_ = false;
        link_.peer_closed(side_);
    }

    void arrive(Message msg, std::size_t bytes) {
        if (open_) deliver(std::move(msg), bytes);
    }

    void remote_closed() {
        if (!open_) return;
        signal_down(DownReason::Closed, "peer closed the link");
    }

protected:
    bool transmit(Message msg, std::size_t frame_bytes) override { return link_.carry(side_, std::move(msg), frame_bytes); }

private:
    SimulatedLink& link_;
    Side side_;
    bool open_ = true;
};

SimulatedLink::SimulatedLink(runtime::EventLoop& loop, LinkConfig config, std::uint64_t seed)
    : loop_(loop), config_(config), rng_(seed), alive_(std::make_shared<bool>(true)) {
    config_.validate();
    ends_[ClientSide] = std::make_unique<End>(*this, ClientSide);
    ends_[ServerSide] = std::make_unique<End>(*this, ServerSide);
    if (config_.disconnect_at_ms) cut_at_ = TimePoint{from_ms(*config_.disconnect_at_ms)};
}

SimulatedLink::~SimulatedLink() { *alive_ = false; }

Endpoint& SimulatedLink::client() { return *ends_[ClientSide]; }
Endpoint& SimulatedLink::server() { return *ends_[ServerSide]; }

void SimulatedLink::disconnect() { disconnect_at(loop_.now()); }

void SimulatedLink::disconnect_at(TimePoint when) {
    if (!cut_at_ || when < *cut_at_) cut_at_ = when;
}

bool SimulatedLink::is_disconnected() const { return cut_at_ && *cut_at_ <= loop_.now(); }

bool SimulatedLink::carry(Side from, Message msg, std::size_t frame_bytes) {
    const auto now = loop_.now();
    if (is_disconnected()) {
        ++dropped_;
        return false;
    }
    const bool hb = msg.channel == Channel::Heartbeat;
    const auto tx = config_.transmit_time(frame_bytes);
    TimePoint done;
    if (hb) {
        done = now + tx;
        if (tx_free_at_[from] > now) tx_free_at_[from] += tx;
    } else {
        done = std::max(now, tx_free_at_[from]) + tx;
        tx_free_at_[from] = done;
    }
    auto arrival = done + config_.one_way();
    if (config_.jitter_ms > 0) {
        std::uniform_real_distribution<double> j(0.0, config_.jitter_ms);
        arrival += from_ms(j(rng_));
    }
    auto& last = hb ? hb_last_arrival_[from] : last_arrival_[from];
    arrival = std::max(arrival, last);
    last = arrival;

    const Side to = from == ClientSide ? ServerSide : ClientSide;
    std::weak_ptr<bool> alive = alive_;
    loop_.schedule_at(arrival, [this, alive, to, arrival, frame_bytes, m = std::move(msg)]() mutable {
        if (alive.expired()) return;
        if (cut_at_ && arrival > *cut_at_) {
            ++dropped_;
            return;
        }
        ends_[to]->arrive(std::move(m), frame_bytes);
    });
    return true;
}

void SimulatedLink::peer_closed(Side from) {
    if (is_disconnected()) return;
    const Side to = from == ClientSide ? ServerSide : ClientSide;
    const auto arrival = std::max(loop_.now() + config_.one_way(), last_arrival_[from]);
    std::weak_ptr<bool> alive = alive_;
    loop_.schedule_at(arrival, [this, alive, to, arrival] {
        if (alive.expired()) return;
        if (cut_at_ && arrival > *cut_at_) return;
        ends_[to]->remote_closed();
    });
}

LinkCounters SimulatedLink::counters() const {
    LinkCounters c;
    for (const auto& e : ends_) {
        c.round_trips += e->counters().responses_received;
        c.bytes_on_wire += e->counters().bytes_sent;
        c.frames += e->counters().frames_sent;
    }
    c.frames_dropped = dropped_;
    return c;
}

}  // namespace rio::wire
