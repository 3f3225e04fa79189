#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <queue>
#include <random>
#include <span>
#include <tuple>
#include <vector>

#include "yomo/clock.hpp"
#include "yomo/transport.hpp"

namespace yomo::sim {

/// In-memory datagram network driven by a SimClock. Each datagram is
/// dropped with probability `loss` (seeded) or delivered after `latency_ms`.
class Network {
public:
    using Handler = std::function<void(std::span<const std::uint8_t>, const Endpoint& from)>;
    /// Return true to drop the datagram regardless of the loss draw.
    using DropFilter = std::function<bool(const Endpoint& from, const Endpoint& to, std::span<const std::uint8_t>)>;

    Network(SimClock& clock, double loss, std::uint64_t seed, std::int64_t latency_ms = 1);

    /// Sender bound to a source address.
    class Port final : public DatagramSender {
    public:
        Port(Network& net, Endpoint self) : net_(net), self_(std::move(self)) {}
        void send(const Endpoint& to, std::span<const std::uint8_t> bytes) override;
        [[nodiscard]] const Endpoint& address() const { return self_; }

    private:
        Network& net_;
        Endpoint self_;
    };

    void attach(const Endpoint& address, Handler handler);
    void detach(const Endpoint& address);
    void set_drop_filter(DropFilter filter) { filter_ = std::move(filter); }
    void set_loss(double loss) { loss_ = loss; }

    /// Delivers every datagram due at or before the current clock time.
    std::size_t deliver_due();

    [[nodiscard]] std::uint64_t sent() const { return sent_; }
    [[nodiscard]] std::uint64_t dropped() const { return dropped_; }
    [[nodiscard]] std::uint64_t undeliverable() const { return undeliverable_; }

private:
    struct InFlight {
        std::int64_t due_ms;
        std::uint64_t order;
        Endpoint from;
        Endpoint to;
        std::vector<std::uint8_t> bytes;
        bool operator>(const InFlight& o) const { return std::tie(due_ms, order) > std::tie(o.due_ms, o.order); }
    };

    void post(const Endpoint& from, const Endpoint& to, std::span<const std::uint8_t> bytes);

    SimClock& clock_;
    double loss_;
    std::int64_t latency_ms_;
    std::mt19937_64 rng_;
    std::uniform_real_distribution<double> uniform_{0.0, 1.0};
    std::map<Endpoint, Handler> handlers_;
    std::priority_queue<InFlight, std::vector<InFlight>, std::greater<>> in_flight_;
    DropFilter filter_;
    std::uint64_t order_ = 0;
    std::uint64_t sent_ = 0;
    std::uint64_t dropped_ = 0;
    std::uint64_t undeliverable_ = 0;
};

} // namespace yomo::sim
