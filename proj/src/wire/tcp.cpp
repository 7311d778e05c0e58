#include "rio/wire/tcp.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <stdexcept>

#include <fmt/format.h>

#include "rio/common/log.hpp"
#include "rio/wire/frame.hpp"

namespace rio::wire {

struct TcpEndpoint::Shared {
    std::atomic<bool> alive{true};
};

TcpEndpoint::TcpEndpoint(runtime::EventLoop& loop, int fd)
    : loop_(loop), fd_(fd), shared_(std::make_shared<Shared>()) {
    int one = 1;
    ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    thread_ = std::thread([this, s = shared_] { reader(s); });
}

TcpEndpoint::~TcpEndpoint() {
    shared_->alive = false;
    if (fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
    if (thread_.joinable()) thread_.join();
    if (fd_ >= 0) ::close(fd_);
}

void TcpEndpoint::close() {
    if (closed_) return;
    closed_ = true;
    if (fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
}

bool TcpEndpoint::transmit(Message msg, std::size_t frame_bytes) {
    Bytes frame;
    frame.reserve(frame_bytes);
    encode_frame_into(msg, frame);
    std::size_t off = 0;
    while (off < frame.size()) {
        auto n = ::send(fd_, frame.data() + off, frame.size() - off, MSG_NOSIGNAL);
        if (n < 0) {
            if (errno == EINTR) continue;
            log::debug("tcp send failed: {}", std::strerror(errno));
            return false;
        }
        off += static_cast<std::size_t>(n);
    }
    return true;
}

void TcpEndpoint::reader(std::shared_ptr<Shared> shared) {
    FrameAssembler asm_;
    std::byte buf[64 * 1024];
    std::string why = "peer closed the connection";
    DownReason reason = DownReason::Closed;
    for (;;) {
        auto n = ::recv(fd_, buf, sizeof buf, 0);
        if (n < 0 && errno == EINTR) continue;
        if (n <= 0) break;
        asm_.feed(ByteSpan(buf, static_cast<std::size_t>(n)));
        bool bad = false;
        for (;;) {
            auto r = asm_.next();
            if (r.status == DecodeStatus::NeedMoreBytes) break;
            if (r.status == DecodeStatus::ProtocolError) {
                why = r.error;
                reason = DownReason::ProtocolError;
                bad = true;
                break;
            }
            loop_.post_external([this, shared, m = std::move(r.message), c = r.consumed]() mutable {
                if (shared->alive) deliver(std::move(m), c);
            });
        }
        if (bad) break;
    }
    loop_.post_external([this, shared, reason, why] {
        if (shared->alive) signal_down(reason, why);
    });
}

std::unique_ptr<TcpEndpoint> tcp_connect(runtime::EventLoop& loop, const std::string& host, std::uint16_t port) {
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    const auto service = std::to_string(port);
    if (int rc = ::getaddrinfo(host.c_str(), service.c_str(), &hints, &res); rc != 0)
        throw std::runtime_error(fmt::format("resolve {}: {}", host, ::gai_strerror(rc)));
    int fd = -1;
    for (auto* ai = res; ai; ai = ai->ai_next) {
        fd = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
        if (fd < 0) continue;
        if (::connect(fd, ai->ai_addr, ai->ai_addrlen) == 0) break;
        ::close(fd);
        fd = -1;
    }
    ::freeaddrinfo(res);
    if (fd < 0) throw std::runtime_error(fmt::format("connect {}:{}: {}", host, port, std::strerror(errno)));
    return std::make_unique<TcpEndpoint>(loop, fd);
}

TcpListener::TcpListener(runtime::EventLoop& loop, const std::string& bind_addr, std::uint16_t port, AcceptHandler on_accept)
    : loop_(loop),
      handler_(std::make_shared<AcceptHandler>(std::move(on_accept))),
      alive_(std::make_shared<std::atomic<bool>>(true)) {
    fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd_ < 0) throw std::runtime_error(fmt::format("socket: {}", std::strerror(errno)));
    int one = 1;
    ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    sockaddr_in sa{};
    sa.sin_family = AF_INET;
    sa.sin_port = htons(port);
    if (::inet_pton(AF_INET, bind_addr.c_str(), &sa.sin_addr) != 1) {
        ::close(fd_);
        throw std::runtime_error(fmt::format("bad bind address {}", bind_addr));
    }
    if (::bind(fd_, reinterpret_cast<sockaddr*>(&sa), sizeof sa) < 0 || ::listen(fd_, 16) < 0) {
        auto err = std::strerror(errno);
        ::close(fd_);
        throw std::runtime_error(fmt::format("listen {}:{}: {}", bind_addr, port, err));
    }
    socklen_t len = sizeof sa;
    ::getsockname(fd_, reinterpret_cast<sockaddr*>(&sa), &len);
    port_ = ntohs(sa.sin_port);

    thread_ = std::thread([this, h = handler_, alive = alive_] {
        while (!stop_) {
            pollfd p{fd_, POLLIN, 0};
            int r = ::poll(&p, 1, 100);
            if (r <= 0) continue;
            int c = ::accept(fd_, nullptr, nullptr);
            if (c < 0) continue;
            loop_.post_external([this, h, alive, c] {
                if (!*alive) {
                    ::close(c);
                    return;
                }
                (*h)(std::make_unique<TcpEndpoint>(loop_, c));
            });
        }
    });
}

TcpListener::~TcpListener() {
    *alive_ = false;
    close();
}

void TcpListener::close() {
    stop_ = true;
    if (thread_.joinable()) thread_.join();
    if (fd_ >= 0) {
        ::close(fd_);
        fd_ = -1;
    }
}

}  // namespace rio::wire
