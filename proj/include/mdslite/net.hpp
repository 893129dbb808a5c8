#pragma once

#include <chrono>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace mdslite::net {

struct Address {
    std::string host;
    std::uint16_t port = 0;

    static Address parse(std::string_view text);  // "host:port"
    std::string str() const;

    bool operator==(const Address&) const = default;
};

using Timeout = std::chrono::milliseconds;

// Owning TCP socket descriptor. Blocking I/O with poll()-based deadlines.
class Socket {
public:
    Socket() = default;
    explicit Socket(int fd) : fd_(fd) {}
    ~Socket() { close(); }
    Socket(Socket&& other) noexcept : fd_(other.release()) {}
    Socket& operator=(Socket&& other) noexcept;
    Socket(const Socket&) = delete;
    Socket& operator=(const Socket&) = delete;

    int fd() const { return fd_; }
    bool valid() const { return fd_ >= 0; }
    int release() {
        int f = fd_;
        fd_ = -1;
        return f;
    }
    void close();

    // Throws ConnectFailed or Timeout.
    static Socket connect(const Address& addr, Timeout timeout);

    // Throws Timeout, ProtocolError (peer closed) or IoError.
    void send_all(std::string_view data, Timeout timeout);
    void recv_exact(char* buf, std::size_t n, Timeout timeout);

    // Waits until readable. Returns false on timeout.
    bool wait_readable(Timeout timeout) const;

private:
    int fd_ = -1;
};

class Listener {
public:
    // Throws AddressInUse if the address cannot be bound.
    static Listener bind(const Address& addr);

    const Address& address() const { return addr_; }

    // Returns an invalid socket when nothing arrived within `timeout`.
    Socket accept(Timeout timeout);
    void close() { sock_.close(); }

private:
    Socket sock_;
    Address addr_;
};

} // namespace mdslite::net
