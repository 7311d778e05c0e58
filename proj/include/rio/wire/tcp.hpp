#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <thread>

#include "rio/runtime/event_loop.hpp"
#include "rio/wire/endpoint.hpp"

namespace rio::wire {

/// Endpoint over a connected TCP socket. A reader thread reassembles frames
/// and hands them to the event loop; sends happen on the loop thread.
class TcpEndpoint final : public Endpoint {
public:
    TcpEndpoint(runtime::EventLoop& loop, int fd);
    ~TcpEndpoint() override;

    bool connected() const override { return fd_ >= 0 && !closed_; }
    void close() override;

protected:
    bool transmit(Message msg, std::size_t frame_bytes) override;

private:
    struct Shared;
    void reader(std::shared_ptr<Shared> shared);

    runtime::EventLoop& loop_;
    int fd_;
    bool closed_ = false;
    std::shared_ptr<Shared> shared_;
    std::thread thread_;
};

/// Connects to host:port. Throws std::runtime_error on failure.
std::unique_ptr<TcpEndpoint> tcp_connect(runtime::EventLoop& loop, const std::string& host, std::uint16_t port);

/// Accepts connections on a background thread and delivers each new endpoint
/// on the loop thread.
class TcpListener {
public:
    using AcceptHandler = std::function<void(std::unique_ptr<TcpEndpoint>)>;

    TcpListener(runtime::EventLoop& loop, const std::string& bind_addr, std::uint16_t port, AcceptHandler on_accept);
    ~TcpListener();

    std::uint16_t port() const { return port_; }
    void close();

private:
    runtime::EventLoop& loop_;
    int fd_ = -1;
    std::uint16_t port_ = 0;
    std::atomic<bool> stop_{false};
    std::shared_ptr<AcceptHandler> handler_;
    std::shared_ptr<std::atomic<bool>> alive_;
    std::thread thread_;
};

}  // namespace rio::wire
