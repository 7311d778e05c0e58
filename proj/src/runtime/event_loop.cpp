#include "rio/runtime/event_loop.hpp"

#include <algorithm>

namespace rio::runtime {

EventLoop::EventLoop(Mode mode) : mode_(mode), wall_start_(std::chrono::steady_clock::now()) {}

EventLoop::~EventLoop() {
    // Drop queued callbacks first so no destroyed frame can be resumed.
    heap_ = {};
    {
        std::lock_guard lock(ext_mu_);
        external_.clear();
    }
    auto frames = std::move(frames_);
    frames_.clear();
    for (void* f : frames) std::coroutine_handle<>::from_address(f).destroy();
}

TimePoint EventLoop::now() const {
    if (mode_ == Mode::Simulated) return sim_now_;
    return TimePoint{std::chrono::duration_cast<Duration>(std::chrono::steady_clock::now() - wall_start_)};
}

EventLoop::TimerId EventLoop::schedule_at(TimePoint when, std::function<void()> fn) {
    TimerId id = next_id_++;
    heap_.push(Timer{std::max(when, mode_ == Mode::Simulated ? sim_now_ : when), next_seq_++, id, std::move(fn)});
    return id;
}

void EventLoop::cancel(TimerId id) { cancelled_.insert(id); }

void EventLoop::post_external(std::function<void()> fn) {
    {
        std::lock_guard lock(ext_mu_);
        external_.push_back(std::move(fn));
    }
    ext_cv_.notify_one();
}

bool EventLoop::drain_external() {
    std::vector<std::function<void()>> batch;
    {
        std::lock_guard lock(ext_mu_);
        batch.swap(external_);
    }
    for (auto& fn : batch) post(std::move(fn));
    return !batch.empty();
}

bool EventLoop::run_one() {
    if (stopped_) return false;
    drain_external();

    // Discard cancelled timers at the head.
    while (!heap_.empty() && cancelled_.count(heap_.top().id) != 0) {
        cancelled_.erase(heap_.top().id);
        heap_.pop();
    }

    if (mode_ == Mode::Simulated) {
        if (heap_.empty()) return false;
    } else {
        std::unique_lock lock(ext_mu_);
        while (!stopped_ && external_.empty()) {
            if (heap_.empty()) {
                ext_cv_.wait(lock);
                continue;
            }
            auto due = heap_.top().when;
            auto now_t = now();
            if (due <= now_t) break;
            ext_cv_.wait_for(lock, due - now_t);
        }
        lock.unlock();
        if (stopped_) return false;
        if (drain_external()) return true;
        if (heap_.empty() || heap_.top().when > now()) return true;
    }

    Timer t = heap_.top();
    heap_.pop();
    if (cancelled_.erase(t.id) != 0) return true;
    if (mode_ == Mode::Simulated) sim_now_ = std::max(sim_now_, t.when);
    t.fn();
    return true;
}

void EventLoop::run_until(const std::function<bool()>& done) {
    while (!done()) {
        if (!run_one()) break;
    }
}

void EventLoop::run_until_time(TimePoint deadline) {
    if (mode_ == Mode::Simulated) {
        while (true) {
            drain_external();
            while (!heap_.empty() && cancelled_.count(heap_.top().id) != 0) {
                cancelled_.erase(heap_.top().id);
                heap_.pop();
            }
            if (heap_.empty() || heap_.top().when > deadline || stopped_) break;
            run_one();
        }
        sim_now_ = std::max(sim_now_, deadline);
    } else {
        bool fired = false;
        auto id = schedule_at(deadline, [&fired] { fired = true; });
        run_until([&] { return fired; });
        cancel(id);
    }
}

void EventLoop::run_until_idle() {
    while (run_one()) {
    }
}

void EventLoop::stop() {
    {
        std::lock_guard lock(ext_mu_);
        stopped_ = true;
    }
    ext_cv_.notify_all();
}

void EventLoop::adopt(std::coroutine_handle<> frame) { frames_.insert(frame.address()); }

void EventLoop::release(std::coroutine_handle<> frame) { frames_.erase(frame.address()); }

}  // namespace rio::runtime
