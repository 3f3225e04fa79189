#include "yomo/transport.hpp"

#include <arpa/inet.h>
#include <cerrno>
#include <cstring>
#include <netdb.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <fmt/format.h>

namespace yomo {

Endpoint Endpoint::parse(const std::string& text)
{
    const auto colon = text.rfind(':');
    if (colon == std::string::npos || colon == 0 || colon + 1 == text.size()) {
        throw std::invalid_argument(fmt::format("endpoint '{}' is not host:port", text));
    }
    const auto port = std::stoul(text.substr(colon + 1));
    if (port > 65535) {
        throw std::invalid_argument(fmt::format("port {} out of range", port));
    }
    return {text.substr(0, colon), static_cast<std::uint16_t>(port)};
}

std::string Endpoint::str() const
{
    return fmt::format("{}:{}", host, port);
}

namespace {

sockaddr_in resolve(const Endpoint& ep)
{
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(ep.port);
    if (inet_pton(AF_INET, ep.host.c_str(), &addr.sin_addr) == 1) {
        return addr;
    }
    addrinfo hints{};
    hints.ai_family = AF_INET;
    hints.ai_socktype = SOCK_DGRAM;
    addrinfo* res = nullptr;
    if (getaddrinfo(ep.host.c_str(), nullptr, &hints, &res) != 0 || res == nullptr) {
        throw SocketError(fmt::format("cannot resolve host '{}'", ep.host));
    }
    addr.sin_addr = reinterpret_cast<sockaddr_in*>(res->ai_addr)->sin_addr;
    freeaddrinfo(res);
    return addr;
}

} // namespace

UdpSocket::UdpSocket(std::uint16_t port, const std::string& bind_host)
{
    fd_ = ::socket(AF_INET, SOCK_DGRAM, 0);
    if (fd_ < 0) {
        throw SocketError(fmt::format("socket(): {}", std::strerror(errno)));
    }
    int rcvbuf = 4 << 20;
    ::setsockopt(fd_, SOL_SOCKET, SO_RCVBUF, &rcvbuf, sizeof(rcvbuf));

    auto addr = resolve({bind_host, port});
    if (::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
        const int err = errno;
        ::close(fd_);
        throw SocketError(fmt::format("cannot bind UDP port {}: {}", port, std::strerror(err)));
    }
    socklen_t len = sizeof(addr);
    ::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
}

UdpSocket::~UdpSocket()
{
    if (fd_ >= 0) {
        ::close(fd_);
    }
}

void UdpSocket::send(const Endpoint& to, std::span<const std::uint8_t> bytes)
{
    const auto addr = resolve(to);
    // Fire-and-forget: an unreachable peer is not an error for the sender.
    (void)::sendto(fd_, bytes.data(), bytes.size(), 0, reinterpret_cast<const sockaddr*>(&addr), sizeof(addr));
}

std::optional<ReceivedDatagram> UdpSocket::receive(std::chrono::milliseconds timeout)
{
    pollfd pfd{fd_, POLLIN, 0};
    const int ready = ::poll(&pfd, 1, static_cast<int>(timeout.count()));
    if (ready <= 0) {
        return std::nullopt;
    }
    std::uint8_t buf[2048];
    sockaddr_in from{};
    socklen_t len = sizeof(from);
    const auto n = ::recvfrom(fd_, buf, sizeof(buf), 0, reinterpret_cast<sockaddr*>(&from), &len);
    if (n < 0) {
        return std::nullopt;
    }
    char host[INET_ADDRSTRLEN] = {};
    ::inet_ntop(AF_INET, &from.sin_addr, host, sizeof(host));
    ReceivedDatagram d;
    d.bytes.assign(buf, buf + n);
    d.from = {host, ntohs(from.sin_port)};
    return d;
}

} // namespace yomo
