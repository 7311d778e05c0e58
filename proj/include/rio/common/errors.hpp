#pragma once

#include <cerrno>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <variant>

namespace rio {

// File-operation results follow the kernel convention: a non-negative value on
// success, a negated errno on failure.
inline constexpr std::int64_t kEINVAL = -EINVAL;
inline constexpr std::int64_t kEAGAIN = -EAGAIN;
inline constexpr std::int64_t kEFAULT = -EFAULT;
inline constexpr std::int64_t kEBADF = -EBADF;
inline constexpr std::int64_t kENODEV = -ENODEV;
inline constexpr std::int64_t kEBUSY = -EBUSY;
inline constexpr std::int64_t kENOMEM = -ENOMEM;
inline constexpr std::int64_t kENOTCONN = -ENOTCONN;
inline constexpr std::int64_t kENOLINK = -ENOLINK;
inline constexpr std::int64_t kECANCELED = -ECANCELED;
inline constexpr std::int64_t kETIMEDOUT = -ETIMEDOUT;
inline constexpr std::int64_t kENOSYS = -ENOSYS;
inline constexpr std::int64_t kEEXIST = -EEXIST;
inline constexpr std::int64_t kEIO = -EIO;

/// A peer violated the wire protocol; the session must be torn down.
class ProtocolError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// The transport to the peer is gone (link down or heartbeat timeout).
class Disconnected : public std::runtime_error {
public:
    Disconnected() : std::runtime_error("peer disconnected") {}
    using std::runtime_error::runtime_error;
};

/// An operation was aborted because its owner (session, stub) shut down.
class Cancelled : public std::runtime_error {
public:
    Cancelled() : std::runtime_error("operation cancelled") {}
};

/// A device touched a client address range the client could not serve.
class MemoryFault : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Value-or-errno for synchronous calls that can fail with a file-op style error.
template <typename T>
class Result {
public:
    Result(T value) : v_(std::move(value)) {}
    static Result error(std::int64_t code) { return Result(Err{code}); }

    bool ok() const { return std::holds_alternative<T>(v_); }
    explicit operator bool() const { return ok(); }

    T& value() { return std::get<T>(v_); }
    const T& value() const { return std::get<T>(v_); }
    T& operator*() { return value(); }
    T* operator->() { return &value(); }

    std::int64_t error_code() const { return ok() ? 0 : std::get<Err>(v_).code; }

private:
    struct Err {
        std::int64_t code;
    };
    explicit Result(Err e) : v_(e) {}
    std::variant<T, Err> v_;
};

}  // namespace rio
