#pragma once

#include <coroutine>
#include <exception>
#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>
#include <utility>

#include "rio/runtime/event_loop.hpp"

namespace rio::runtime {

template <typename T>
class Task;

namespace detail {

struct FinalAwaiter {
    bool await_ready() const noexcept { return false; }
    template <typename P>
    std::coroutine_handle<> await_suspend(std::coroutine_handle<P> h) noexcept {
        auto cont = h.promise().continuation;
        return cont ? cont : std::noop_coroutine();
    }
    void await_resume() const noexcept {}
};

struct PromiseBase {
    std::coroutine_handle<> continuation;
    std::exception_ptr error;

    std::suspend_always initial_suspend() const noexcept { return {}; }
    FinalAwaiter final_suspend() const noexcept { return {}; }
    void unhandled_exception() noexcept { error = std::current_exception(); }
};

template <typename T>
struct Promise : PromiseBase {
    std::optional<T> value;
    Task<T> get_return_object() noexcept;
    template <typename U>
    void return_value(U&& v) { value.emplace(std::forward<U>(v)); }
    T take() {
        if (error) std::rethrow_exception(error);
        return std::move(*value);
    }
};

template <>
struct Promise<void> : PromiseBase {
    Task<void> get_return_object() noexcept;
    void return_void() noexcept {}
    void take() {
        if (error) std::rethrow_exception(error);
    }
};

}  // namespace detail

/// Lazily started coroutine; runs when awaited and resumes its awaiter on completion.
template <typename T = void>
class [[nodiscard]] Task {
public:
    using promise_type = detail::Promise<T>;
    using Handle = std::coroutine_handle<promise_type>;

    Task() = default;
    explicit Task(Handle h) : h_(h) {}
    Task(Task&& o) noexcept : h_(std::exchange(o.h_, {})) {}
    Task& operator=(Task&& o) noexcept {
        if (this != &o) {
            if (h_) h_.destroy();
            h_ = std::exchange(o.h_, {});
        }
        return *this;
    }
    Task(const Task&) = delete;
    Task& operator=(const Task&) = delete;
    ~Task() {
        if (h_) h_.destroy();
    }

    bool valid() const { return static_cast<bool>(h_); }

    auto operator co_await() && noexcept {
        struct Awaiter {
            Handle h;
            bool await_ready() const noexcept { return !h || h.done(); }
            std::coroutine_handle<> await_suspend(std::coroutine_handle<> cont) noexcept {
                h.promise().continuation = cont;
                return h;
            }
            T await_resume() { return h.promise().take(); }
        };
        return Awaiter{h_};
    }

private:
    Handle h_;
};

namespace detail {
template <typename T>
Task<T> Promise<T>::get_return_object() noexcept {
    return Task<T>{std::coroutine_handle<Promise<T>>::from_promise(*this)};
}
inline Task<void> Promise<void>::get_return_object() noexcept {
    return Task<void>{std::coroutine_handle<Promise<void>>::from_promise(*this)};
}

// Self-destroying coroutine used to run a Task without an awaiter.
struct Detached {
    struct promise_type {
        EventLoop* loop = nullptr;

        template <typename... Args>
        promise_type(EventLoop& l, Args&&...) : loop(&l) {}

        Detached get_return_object() noexcept {
            loop->adopt(std::coroutine_handle<promise_type>::from_promise(*this));
            return {};
        }
        std::suspend_never initial_suspend() const noexcept { return {}; }
        std::suspend_never final_suspend() noexcept {
            loop->release(std::coroutine_handle<promise_type>::from_promise(*this));
            return {};
        }
        void return_void() noexcept {}
        void unhandled_exception() noexcept { std::terminate(); }
    };
};

Detached run_detached(EventLoop& loop, Task<void> task, std::function<void(std::exception_ptr)> on_error);

}  // namespace detail

/// Starts `task` now; it lives until completion or until the loop is destroyed.
/// Exceptions escaping the task go to `on_error` (default: logged and dropped).
void spawn(EventLoop& loop, Task<void> task, std::function<void(std::exception_ptr)> on_error = {});

/// Raised by run() when a task cannot complete.
class Stalled : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Drives the loop until `task` finishes and returns its result. In simulated
/// mode, `limit` bounds how far logical time may advance.
template <typename T>
T run(EventLoop& loop, Task<T> task, Duration limit = from_seconds(24 * 3600.0));

namespace detail {
template <typename T>
Task<void> capture_into(Task<T> task, std::shared_ptr<std::optional<T>> out) {
    out->emplace(co_await std::move(task));
}
inline Task<void> capture_void(Task<void> task, std::shared_ptr<bool> out) {
    co_await std::move(task);
    *out = true;
}
}  // namespace detail

template <typename T>
T run(EventLoop& loop, Task<T> task, Duration limit) {
    auto error = std::make_shared<std::exception_ptr>();
    auto on_error = [error](std::exception_ptr e) { *error = e; };
    const TimePoint deadline = loop.now() + limit;
    auto over = [&] { return loop.mode() == EventLoop::Mode::Simulated && loop.now() > deadline; };
    if constexpr (std::is_void_v<T>) {
        auto done = std::make_shared<bool>(false);
        spawn(loop, detail::capture_void(std::move(task), done), on_error);
        loop.run_until([&] { return *done || *error || over(); });
        if (*error) std::rethrow_exception(*error);
        if (!*done) throw Stalled("task did not complete");
    } else {
        auto out = std::make_shared<std::optional<T>>();
        spawn(loop, detail::capture_into(std::move(task), out), on_error);
        loop.run_until([&] { return out->has_value() || *error || over(); });
        if (*error) std::rethrow_exception(*error);
        if (!out->has_value()) throw Stalled("task did not complete");
        return std::move(**out);
    }
}

}  // namespace rio::runtime
