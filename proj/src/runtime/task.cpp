#include "rio/runtime/task.hpp"

#include "rio/common/log.hpp"

namespace rio::runtime {

namespace detail {

Detached run_detached(EventLoop& loop, Task<void> task, std::function<void(std::exception_ptr)> on_error) {
    (void)loop;
    try {
        co_await std::move(task);
    } catch (...) {
        if (on_error) {
            on_error(std::current_exception());
        } else {
            try {
                throw;
            } catch (const std::exception& e) {
                log::debug("detached task ended with exception: {}", e.what());
            } catch (...) {
                log::debug("detached task ended with unknown exception");
            }
        }
    }
}

}  // namespace detail

void spawn(EventLoop& loop, Task<void> task, std::function<void(std::exception_ptr)> on_error) {
    detail::run_detached(loop, std::move(task), std::move(on_error));
}

}  // namespace rio::runtime
