#pragma once

#include <coroutine>
#include <exception>
#include <functional>
#include <memory>
#include <optional>
#include <variant>
#include <vector>

#include "rio/runtime/event_loop.hpp"

namespace rio::runtime {

using Unit = std::monostate;

/// Why a suspended waiter woke up.
enum class Wake { Notified, Cancelled, Timeout };

namespace detail {

struct Waiter {
    std::coroutine_handle<> handle;
    EventLoop* loop = nullptr;
    bool fired = false;
    Wake reason = Wake::Notified;
    std::optional<EventLoop::TimerId> timer;

    // First wake wins. Resumption is posted, never inline, so wakers never
    // re-enter the coroutine they are waking.
    void fire(Wake why) {
        if (fired) return;
        fired = true;
        reason = why;
        if (timer && why != Wake::Timeout) loop->cancel(*timer);
        auto h = handle;
        loop->post([h] { h.resume(); });
    }
};

struct CancelState {
    bool cancelled = false;
    std::vector<std::weak_ptr<Waiter>> waiters;
    std::vector<std::function<void()>> callbacks;
};

}  // namespace detail

class CancelToken {
public:
    CancelToken() = default;
    explicit CancelToken(std::shared_ptr<detail::CancelState> s) : s_(std::move(s)) {}

    bool cancelled() const { return s_ && s_->cancelled; }
    bool cancellable() const { return static_cast<bool>(s_); }

    void attach(const std::shared_ptr<detail::Waiter>& w) const {
        if (s_) s_->waiters.push_back(w);
    }
    /// Runs `fn` on cancellation (immediately if already cancelled).
    void on_cancel(std::function<void()> fn) const {
        if (!s_) return;
        if (s_->cancelled) {
            fn();
            return;
        }
        s_->callbacks.push_back(std::move(fn));
    }

private:
    std::shared_ptr<detail::CancelState> s_;
};

class CancelSource {
public:
    CancelSource() : s_(std::make_shared<detail::CancelState>()) {}

    CancelToken token() const { return CancelToken(s_); }
    bool cancelled() const { return s_->cancelled; }

    void cancel() {
        if (s_->cancelled) return;
        s_->cancelled = true;
        auto waiters = std::move(s_->waiters);
        auto callbacks = std::move(s_->callbacks);
        for (auto& w : waiters)
            if (auto sp = w.lock()) sp->fire(Wake::Cancelled);
        for (auto& cb : callbacks) cb();
    }

private:
    std::shared_ptr<detail::CancelState> s_;
};

class Notifier;

namespace detail {

struct WaitAwaiter {
    EventLoop& loop;
    Notifier* notifier;
    CancelToken token;
    std::optional<TimePoint> deadline;
    std::shared_ptr<Waiter> w;

    bool await_ready() const { return token.cancelled(); }
    void await_suspend(std::coroutine_handle<> h);
    Wake await_resume() const {
        if (!w || token.cancelled()) return Wake::Cancelled;
        return w->reason;
    }
};

}  // namespace detail

/// Broadcast wake-up for coroutines waiting on a state change (device events).
class Notifier {
public:
    explicit Notifier(EventLoop& loop) : loop_(&loop) {}

    detail::WaitAwaiter wait(CancelToken token = {}, std::optional<TimePoint> deadline = {}) {
        return detail::WaitAwaiter{*loop_, this, std::move(token), deadline, nullptr};
    }

    void notify_all() {
        auto waiters = std::move(waiters_);
        waiters_.clear();
        for (auto& w : waiters) w->fire(Wake::Notified);
    }

    std::size_t waiting() const {
        std::size_t n = 0;
        for (auto& w : waiters_) n += w->fired ? 0 : 1;
        return n;
    }

private:
    friend struct detail::WaitAwaiter;
    EventLoop* loop_;
    std::vector<std::shared_ptr<detail::Waiter>> waiters_;
};

inline void detail::WaitAwaiter::await_suspend(std::coroutine_handle<> h) {
    w = std::make_shared<Waiter>();
    w->handle = h;
    w->loop = &loop;
    if (notifier) {
        auto& ws = notifier->waiters_;
        std::erase_if(ws, [](const auto& x) { return x->fired; });
        ws.push_back(w);
    }
    token.attach(w);
    if (deadline) {
        std::weak_ptr<Waiter> weak = w;
        w->timer = loop.schedule_at(*deadline, [weak] {
            if (auto sp = weak.lock()) sp->fire(Wake::Timeout);
        });
    }
}

/// Suspends until `when` (Wake::Timeout) or cancellation (Wake::Cancelled).
inline detail::WaitAwaiter sleep_until(EventLoop& loop, TimePoint when, CancelToken token = {}) {
    return detail::WaitAwaiter{loop, nullptr, std::move(token), when, nullptr};
}

inline detail::WaitAwaiter sleep_for(EventLoop& loop, Duration d, CancelToken token = {}) {
    return sleep_until(loop, loop.now() + d, std::move(token));
}

/// One-shot value hand-off between an event handler and a waiting coroutine.
template <typename T>
class Promise {
    struct State {
        EventLoop* loop;
        std::optional<T> value;
        std::exception_ptr error;
        std::coroutine_handle<> waiter;
        bool done = false;
    };

public:
    class Future {
    public:
        explicit Future(std::shared_ptr<State> s) : s_(std::move(s)) {}
        bool await_ready() const { return s_->done; }
        void await_suspend(std::coroutine_handle<> h) { s_->waiter = h; }
        T await_resume() {
            if (s_->error) std::rethrow_exception(s_->error);
            return std::move(*s_->value);
        }

    private:
        std::shared_ptr<State> s_;
    };

    explicit Promise(EventLoop& loop) : s_(std::make_shared<State>()) { s_->loop = &loop; }

    bool done() const { return s_->done; }
    Future future() const { return Future(s_); }

    bool set_value(T v) {
        if (s_->done) return false;
        s_->value.emplace(std::move(v));
        complete();
        return true;
    }

    bool set_exception(std::exception_ptr e) {
        if (s_->done) return false;
        s_->error = std::move(e);
        complete();
        return true;
    }

private:
    void complete() {
        s_->done = true;
        if (auto h = std::exchange(s_->waiter, {})) s_->loop->post([h] { h.resume(); });
    }

    std::shared_ptr<State> s_;
};

}  // namespace rio::runtime
