#include "yomo/sim.hpp"

namespace yomo::sim {

Network::Network(SimClock& clock, double loss, std::uint64_t seed, std::int64_t latency_ms)
    : clock_(clock), loss_(loss), latency_ms_(latency_ms), rng_(seed)
{
}

void Network::Port::send(const Endpoint& to, std::span<const std::uint8_t> bytes)
{
    net_.post(self_, to, bytes);
}

void Network::attach(const Endpoint& address, Handler handler)
{
    handlers_[address] = std::move(handler);
}

void Network::detach(const Endpoint& address)
{
    handlers_.erase(address);
}

void Network::post(const Endpoint& from, const Endpoint& to, std::span<const std::uint8_t> bytes)
{
    ++sent_;
    // Always draw so the loss pattern does not depend on the filter.
    const bool lost = uniform_(rng_) < loss_;
    if (lost || (filter_ && filter_(from, to, bytes))) {
        ++dropped_;
        return;
    }
    in_flight_.push({clock_.now_ms() + latency_ms_, order_++, from, to, {bytes.begin(), bytes.end()}});
}

std::size_t Network::deliver_due()
{
    std::size_t n = 0;
    while (!in_flight_.empty() && in_flight_.top().due_ms <= clock_.now_ms()) {
        auto d = in_flight_.top();
        in_flight_.pop();
        const auto it = handlers_.find(d.to);
        if (it == handlers_.end()) {
            ++undeliverable_;
            continue;
        }
        it->second(d.bytes, d.from);
        ++n;
    }
    return n;
}

} // namespace yomo::sim
