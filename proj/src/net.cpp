#include "mdslite/net.hpp"

#include <arpa/inet.h>
#include <cerrno>
#include <charconv>
#include <cstring>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include "mdslite/error.hpp"

namespace mdslite::net {

namespace {

using Clock = std::chrono::steady_clock;

int remaining_ms(Clock::time_point deadline) {
    auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now());
    return left.count() < 0 ? 0 : static_cast<int>(left.count());
}

bool poll_for(int fd, short events, Clock::time_point deadline) {
    while (true) {
        pollfd p{fd, events, 0};
        int rc = ::poll(&p, 1, remaining_ms(deadline));
        if (rc > 0) {
            return true;
        }
        if (rc == 0) {
            return false;
        }
        if (errno != EINTR) {
            throw Error(Errc::IoError, std::string("poll: ") + std::strerror(errno));
        }
    }
}

sockaddr_in resolve(const Address& addr) {
    sockaddr_in sa{};
    sa.sin_family = AF_INET;
    sa.sin_port = htons(addr.port);
    std::string host = addr.host.empty() ? "0.0.0.0" : addr.host;
    if (host == "localhost") {
        host = "127.0.0.1";
    }
    if (inet_pton(AF_INET, host.c_str(), &sa.sin_addr) == 1) {
        return sa;
    }
    addrinfo hints{};
    hints.ai_family = AF_INET;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    if (getaddrinfo(host.c_str(), nullptr, &hints, &res) != 0 || !res) {
        throw Error(Errc::ConnectFailed, "cannot resolve " + host);
    }
    sa.sin_addr = reinterpret_cast<sockaddr_in*>(res->ai_addr)->sin_addr;
    freeaddrinfo(res);
    return sa;
}

} // namespace

Address Address::parse(std::string_view text) {
    auto colon = text.rfind(':');
    if (colon == std::string_view::npos || colon + 1 >= text.size()) {
        throw Error(Errc::MalformedConfig, "address must be host:port, got '" +
                                               std::string(text) + "'");
    }
    unsigned port = 0;
    auto port_text = text.substr(colon + 1);
    auto [ptr, ec] = std::from_chars(port_text.data(), port_text.data() + port_text.size(), port);
    if (ec != std::errc{} || ptr != port_text.data() + port_text.size() || port > 65535) {
        throw Error(Errc::MalformedConfig, "bad port in '" + std::string(text) + "'");
    }
    return Address{std::string(text.substr(0, colon)), static_cast<std::uint16_t>(port)};
}

std::string Address::str() const { return host + ":" + std::to_string(port); }

Socket& Socket::operator=(Socket&& other) noexcept {
    if (this != &other) {
        close();
        fd_ = other.release();
    }
    return *this;
}

void Socket::close() {
    if (fd_ >= 0) {
        ::close(fd_);
        fd_ = -1;
    }
}

Socket Socket::connect(const Address& addr, Timeout timeout) {
    const auto deadline = Clock::now() + timeout;
    sockaddr_in sa = resolve(addr);
    Socket s(::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC | SOCK_NONBLOCK, 0));
    if (!s.valid()) {
        throw Error(Errc::ConnectFailed, std::string("socket: ") + std::strerror(errno));
    }
    int rc = ::connect(s.fd(), reinterpret_cast<sockaddr*>(&sa), sizeof sa);
    if (rc != 0 && errno != EINPROGRESS) {
        throw Error(Errc::ConnectFailed, addr.str() + ": " + std::strerror(errno));
    }
    if (rc != 0) {
        if (!poll_for(s.fd(), POLLOUT, deadline)) {
            throw Error(Errc::Timeout, "connect to " + addr.str());
        }
        int err = 0;
        socklen_t len = sizeof err;
        ::getsockopt(s.fd(), SOL_SOCKET, SO_ERROR, &err, &len);
        if (err != 0) {
            throw Error(Errc::ConnectFailed, addr.str() + ": " + std::strerror(err));
        }
    }
    int one = 1;
    ::setsockopt(s.fd(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    return s;
}

void Socket::send_all(std::string_view data, Timeout timeout) {
    const auto deadline = Clock::now() + timeout;
    while (!data.empty()) {
        ssize_t n = ::send(fd_, data.data(), data.size(), MSG_NOSIGNAL);
        if (n > 0) {
            data.remove_prefix(static_cast<std::size_t>(n));
            continue;
        }
        if (n < 0 && errno == EINTR) {
            continue;
        }
        if (n < 0 && (errno == EAGAIN || errno == EWOULDBLOCK)) {
            if (!poll_for(fd_, POLLOUT, deadline)) {
                throw Error(Errc::Timeout, "send");
            }
            continue;
        }
        throw Error(Errc::ProtocolError, std::string("send: ") + std::strerror(errno));
    }
}

void Socket::recv_exact(char* buf, std::size_t n, Timeout timeout) {
    const auto deadline = Clock::now() + timeout;
    while (n > 0) {
        ssize_t got = ::recv(fd_, buf, n, 0);
        if (got > 0) {
            buf += got;
            n -= static_cast<std::size_t>(got);
            continue;
        }
        if (got == 0) {
            throw Error(Errc::ProtocolError, "connection closed by peer");
        }
        if (errno == EINTR) {
            continue;
        }
        if (errno == EAGAIN || errno == EWOULDBLOCK) {
            if (!poll_for(fd_, POLLIN, deadline)) {
                throw Error(Errc::Timeout, "recv");
            }
            continue;
        }
        throw Error(Errc::ProtocolError, std::string("recv: ") + std::strerror(errno));
    }
}

bool Socket::wait_readable(Timeout timeout) const {
    return poll_for(fd_, POLLIN, Clock::now() + timeout);
}

Listener Listener::bind(const Address& addr) {
    Listener l;
    sockaddr_in sa = resolve(addr);
    l.sock_ = Socket(::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0));
    if (!l.sock_.valid()) {
        throw Error(Errc::IoError, std::string("socket: ") + std::strerror(errno));
    }
    int one = 1;
    ::setsockopt(l.sock_.fd(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    if (::bind(l.sock_.fd(), reinterpret_cast<sockaddr*>(&sa), sizeof sa) != 0) {
        throw Error(Errc::AddressInUse, addr.str() + ": " + std::strerror(errno));
    }
    if (::listen(l.sock_.fd(), SOMAXCONN) != 0) {
        throw Error(Errc::AddressInUse, addr.str() + ": " + std::strerror(errno));
    }
    socklen_t len = sizeof sa;
    ::getsockname(l.sock_.fd(), reinterpret_cast<sockaddr*>(&sa), &len);
    char host[INET_ADDRSTRLEN] = {};
    inet_ntop(AF_INET, &sa.sin_addr, host, sizeof host);
    l.addr_ = Address{addr.host.empty() ? std::string(host) : addr.host, ntohs(sa.sin_port)};
    return l;
}

Socket Listener::accept(Timeout timeout) {
    if (!sock_.valid() || !sock_.wait_readable(timeout)) {
        return Socket{};
    }
    int fd = ::accept4(sock_.fd(), nullptr, nullptr, SOCK_CLOEXEC | SOCK_NONBLOCK);
    if (fd < 0) {
        return Socket{};
    }
    int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    return Socket(fd);
}

} // namespace mdslite::net
