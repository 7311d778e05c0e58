#include <string>
#include <vector>

#include "doctest.h"
#include "rio/runtime/sync.hpp"
#include "rio/runtime/task.hpp"

using namespace rio;
using namespace rio::runtime;

TEST_CASE("event loop orders timers by time then insertion") {
    EventLoop loop;
    std::vector<int> order;
    loop.schedule_after(from_ms(5), [&] { order.push_back(3); });
    loop.post([&] { order.push_back(1); });
    loop.post([&] { order.push_back(2); });
    auto id = loop.schedule_after(from_ms(1), [&] { order.push_back(99); });
    loop.cancel(id);
    loop.run_until_idle();
    CHECK(order == std::vector<int>{1, 2, 3});
    CHECK(loop.now() == TimePoint{from_ms(5)});
}

namespace {

Task<int> add_later(EventLoop& loop, int a, int b) {
    co_await sleep_for(loop, from_ms(10));
    co_return a + b;
}

Task<int> chain(EventLoop& loop) {
    int x = co_await add_later(loop, 1, 2);
    int y = co_await add_later(loop, x, 4);
    co_return y;
}

Task<Wake> wait_on(Notifier& n, CancelToken tok, std::optional<TimePoint> deadline) { co_return co_await n.wait(tok, deadline); }

Task<int> throws_later(EventLoop& loop) {
    co_await sleep_for(loop, from_ms(1));
    throw std::runtime_error("boom");
}

}  // namespace

TEST_CASE("tasks chain and advance logical time") {
    EventLoop loop;
    CHECK(run(loop, chain(loop)) == 7);
    CHECK(to_ms(loop.now()) == doctest::Approx(20.0));
}

TEST_CASE("task exceptions propagate through run") {
    EventLoop loop;
    CHECK_THROWS_AS(run(loop, throws_later(loop)), std::runtime_error);
}

TEST_CASE("notifier wakes, times out, and cancels") {
    EventLoop loop;
    Notifier n(loop);

    loop.schedule_after(from_ms(3), [&] { n.notify_all(); });
    CHECK(run(loop, wait_on(n, {}, {})) == Wake::Notified);

    auto deadline = loop.now() + from_ms(7);
    CHECK(run(loop, wait_on(n, {}, deadline)) == Wake::Timeout);
    CHECK(loop.now() == deadline);

    CancelSource src;
    loop.schedule_after(from_ms(2), [&] { src.cancel(); });
    CHECK(run(loop, wait_on(n, src.token(), {})) == Wake::Cancelled);
    CHECK(n.waiting() == 0);
    n.notify_all();
    CHECK(run(loop, wait_on(n, src.token(), {})) == Wake::Cancelled);
}

TEST_CASE("run reports a stalled task") {
    EventLoop loop;
    Notifier never(loop);
    CHECK_THROWS_AS(run(loop, wait_on(never, {}, {})), Stalled);
}

TEST_CASE("promise hands a value to a waiting coroutine") {
    EventLoop loop;
    Promise<std::string> p(loop);
    loop.schedule_after(from_ms(4), [&] { p.set_value("ready"); });
    auto waiter = [](Promise<std::string>::Future f) -> Task<std::string> { co_return co_await f; };
    CHECK(run(loop, waiter(p.future())) == "ready");
    CHECK_FALSE(p.set_value("again"));
}

TEST_CASE("destroying the loop reclaims suspended detached tasks") {
    auto flag = std::make_shared<int>(0);
    {
        EventLoop loop;
        Notifier n(loop);
        auto t = [](Notifier& n, std::shared_ptr<int> f) -> Task<void> {
            co_await n.wait();
            *f = 1;
        };
        spawn(loop, t(n, flag));
        loop.run_until_idle();
        CHECK(loop.live_tasks() == 1);
        CHECK(flag.use_count() == 2);
    }
    CHECK(flag.use_count() == 1);
    CHECK(*flag == 0);
}
