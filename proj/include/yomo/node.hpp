#pragma once

#include <cstdint>
#include <deque>
#include <filesystem>
#include <map>
#include <optional>
#include <span>

#include "yomo/clock.hpp"
#include "yomo/monitor.hpp"
#include "yomo/protocol.hpp"
#include "yomo/transport.hpp"

namespace yomo {

struct NodeOptions {
    double heartbeat_s = 5.0;      // time-sync cadence, also the link liveness probe
    std::size_t drain_batch = 64;  // readings transmitted per loop iteration
    std::size_t remembered_commands = 256;
};

struct NodeConfig {
    MeterConfig meter;
    Endpoint coordinator;
    NodeOptions options;
    std::uint16_t local_port = 0;
    double duration_s = 0.0; // 0 = run until interrupted
};

/// Parses a node config file (JSON). Profiles are either inline objects or
/// names looked up in `fixtures` (path relative to the config file).
NodeConfig load_node_config(const std::filesystem::path& path);

/// Meter-node loop: tick, drain, transmit, command window. Measurements are
/// transmitted only while the link is up (a time-sync reply arrived within
/// the last two heartbeats); otherwise they stay in the local buffer.
class MeterNode {
public:
    MeterNode(MeterConfig config, Endpoint coordinator, DatagramSender& sender, const Clock& clock,
              NodeOptions options = {});

    /// Handles one datagram addressed to this node.
    void on_datagram(std::span<const std::uint8_t> bytes);
    /// One loop iteration at the current clock time.
    void step();
    /// Transmits every buffered reading regardless of link state.
    std::size_t flush();

    [[nodiscard]] bool link_up() const;
    /// Node-local time when the next measurement window closes.
    [[nodiscard]] std::optional<double> next_due() const { return yomo::next_due(state_); }
    [[nodiscard]] const MeterState& state() const { return state_; }
    MeterState& state() { return state_; }
    [[nodiscard]] std::uint64_t transmitted() const { return transmitted_; }
    [[nodiscard]] std::uint64_t rejected_datagrams() const { return rejected_; }

    /// Seconds since the node started; the timescale of the meter's windows.
    [[nodiscard]] double local_now() const;

private:
    void send(const wire::Datagram& d);
    void send_sync_request(double now);
    void transmit(const std::vector<PowerReading>& readings);
    void send_ack(const CommandOutcome& outcome, Opcode op);

    MeterState state_;
    Endpoint coordinator_;
    DatagramSender& sender_;
    const Clock& clock_;
    NodeOptions options_;
    std::int64_t epoch_ms_;

    std::deque<Command> inbox_;
    std::map<std::uint32_t, wire::AckStatus> seen_commands_;
    std::deque<std::uint32_t> seen_order_;
    std::map<std::uint32_t, Opcode> pending_ops_;
    std::optional<double> last_sync_sent_;
    std::optional<double> last_sync_reply_;
    // Readings below this seq were stamped before the first sync and are
    // shifted by first_offset_ms_ on transmit.
    std::optional<std::uint32_t> synced_from_seq_;
    double first_offset_ms_ = 0.0;
    std::uint64_t transmitted_ = 0;
    std::uint64_t rejected_ = 0;
};

} // namespace yomo
