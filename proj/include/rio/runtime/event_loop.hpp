#pragma once

#include <condition_variable>
#include <coroutine>
#include <cstdint>
#include <functional>
#include <mutex>
#include <queue>
#include <unordered_set>
#include <vector>

#include "rio/common/time.hpp"

namespace rio::runtime {

/// Single-threaded timer/event loop.
///
/// In Simulated mode `now()` is a logical clock that jumps straight to the next
/// scheduled event, so runs are deterministic and independent of host speed.
/// In WallClock mode `now()` tracks a steady clock and `run_one()` sleeps until
/// the next timer or an externally posted callback (socket reader threads).
class EventLoop {
public:
    enum class Mode { Simulated, WallClock };
    using TimerId = std::uint64_t;

    explicit EventLoop(Mode mode = Mode::Simulated);
    ~EventLoop();

    EventLoop(const EventLoop&) = delete;
    EventLoop& operator=(const EventLoop&) = delete;

    Mode mode() const { return mode_; }
    TimePoint now() const;

    TimerId schedule_at(TimePoint when, std::function<void()> fn);
    TimerId schedule_after(Duration delay, std::function<void()> fn) { return schedule_at(now() + delay, std::move(fn)); }
    TimerId post(std::function<void()> fn) { return schedule_at(now(), std::move(fn)); }
    void cancel(TimerId id);

    /// Thread-safe; used by transport threads to hand frames to the loop.
    void post_external(std::function<void()> fn);

    /// Runs the next due event. Returns false when nothing is pending (simulated
    /// mode) or the loop was stopped.
    bool run_one();
    void run_until(const std::function<bool()>& done);
    void run_until_time(TimePoint deadline);
    void run_until_idle();
    void stop();
    bool stopped() const { return stopped_; }

    std::size_t pending() const { return heap_.size() - cancelled_.size(); }

    /// Detached coroutine frames are owned by the loop: anything still suspended
    /// when the loop is destroyed is destroyed with it, after the queue is dropped.
    void adopt(std::coroutine_handle<> frame);
    void release(std::coroutine_handle<> frame);
    std::size_t live_tasks() const { return frames_.size(); }

private:
    struct Timer {
        TimePoint when;
        std::uint64_t seq;
        TimerId id;
        std::function<void()> fn;
    };
    struct Later {
        bool operator()(const Timer& a, const Timer& b) const {
            return a.when != b.when ? a.when > b.when : a.seq > b.seq;
        }
    };

    bool drain_external();

    Mode mode_;
    TimePoint sim_now_{};
    std::chrono::steady_clock::time_point wall_start_;
    std::priority_queue<Timer, std::vector<Timer>, Later> heap_;
    std::unordered_set<TimerId> cancelled_;
    std::uint64_t next_seq_ = 0;
    TimerId next_id_ = 1;
    bool stopped_ = false;

    mutable std::mutex ext_mu_;
    std::condition_variable ext_cv_;
    std::vector<std::function<void()>> external_;

    std::unordered_set<void*> frames_;
};

}  // namespace rio::runtime
