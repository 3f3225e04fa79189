#pragma once

#include <chrono>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace yomo {

struct Endpoint {
    std::string host;
    std::uint16_t port = 0;

    /// Parses "host:port".
    static Endpoint parse(const std::string& text);
    [[nodiscard]] std::string str() const;

    friend auto operator<=>(const Endpoint&, const Endpoint&) = default;
};

class DatagramSender {
public:
    virtual ~DatagramSender() = default;
    virtual void send(const Endpoint& to, std::span<const std::uint8_t> bytes) = 0;
};

class SocketError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct ReceivedDatagram {
    std::vector<std::uint8_t> bytes;
    Endpoint from;
};

/// IPv4 UDP socket. Binding to port 0 picks an ephemeral port.
class UdpSocket final : public DatagramSender {
public:
    explicit UdpSocket(std::uint16_t port = 0, const std::string& bind_host = "0.0.0.0");
    ~UdpSocket() override;
    UdpSocket(const UdpSocket&) = delete;
    UdpSocket& operator=(const UdpSocket&) = delete;

    void send(const Endpoint& to, std::span<const std::uint8_t> bytes) override;
    /// Waits at most `timeout`; nullopt on timeout.
    std::optional<ReceivedDatagram> receive(std::chrono::milliseconds timeout);
    [[nodiscard]] std::uint16_t port() const { return port_; }

private:
    int fd_ = -1;
    std::uint16_t port_ = 0;
};

} // namespace yomo
