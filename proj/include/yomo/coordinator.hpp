#pragma once

#include <array>
#include <atomic>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <stdexcept>
#include <string>
#include <vector>

#include "yomo/clock.hpp"
#include "yomo/protocol.hpp"
#include "yomo/store.hpp"
#include "yomo/transport.hpp"

namespace yomo {

struct CoordinatorConfig {
    std::filesystem::path data_dir = "data";
    std::int64_t liveness_ms = 60'000;
    int max_attempts = 3;
    std::int64_t retry_interval_ms = 500;
};

enum class TicketState : std::uint8_t { Pending, Acked, Rejected, Failed };
std::string_view ticket_state_name(TicketState s);

struct CommandTicket {
    std::uint32_t command_id = 0;
    std::string storage_id;
    Command command;
    TicketState state = TicketState::Pending;
    int attempts = 0;
    std::int64_t created_ms = 0;
    std::int64_t last_sent_ms = 0;
    std::string detail;
};

/// Snapshot of one meter's bookkeeping (no readings).
struct MeterSummary {
    std::string storage_id;
    MeterId meter_id;
    std::int64_t last_seen_ms = 0;
    std::optional<std::uint32_t> last_seq;
    std::uint64_t gap_count = 0;
    std::uint64_t missing = 0;
    std::uint64_t reading_count = 0;
    std::optional<PowerReading> last_reading;
};

struct SeriesPage {
    std::vector<PowerReading> readings;
    /// Pass back as `after_seq` to continue; empty when the window is exhausted.
    std::optional<std::uint32_t> next;
};

struct HealthCounters {
    std::uint64_t received = 0;
    std::uint64_t ingested = 0; // valid measurement datagrams, duplicates included
    std::uint64_t stored = 0;
    std::uint64_t duplicates = 0;
    std::uint64_t gaps = 0;
    std::uint64_t missing = 0;
    std::uint64_t time_sync = 0;
    std::uint64_t acks = 0;
    std::uint64_t ignored = 0;
    std::uint64_t queue_overflow = 0;
    std::array<std::uint64_t, wire::kDecodeErrorClassCount> dropped{};
    std::uint64_t meters = 0;
};

enum class IngestOutcome : std::uint8_t { Stored, Duplicate, TimeSyncAnswered, AckHandled, Ignored, Dropped };

class CoordinatorError : public std::runtime_error {
public:
    enum class Code : std::uint8_t { NotFound, Stale, InvalidCommand };
    CoordinatorError(Code code, const std::string& what) : std::runtime_error(what), code_(code) {}
    [[nodiscard]] Code code() const { return code_; }

private:
    Code code_;
};

/// Transport-independent coordinator: validates and persists measurements,
/// answers time-sync requests and tracks command tickets. Safe for
/// concurrent ingest; appends within one meter are serialized.
class Coordinator {
public:
    Coordinator(CoordinatorConfig config, const Clock& clock, DatagramSender& sender);
    ~Coordinator();
    Coordinator(const Coordinator&) = delete;
    Coordinator& operator=(const Coordinator&) = delete;

    IngestOutcome ingest(std::span<const std::uint8_t> bytes, const Endpoint& source);

    /// Readings with timestamp in [from_ms, to_ms) and seq > after_seq,
    /// seq-ordered, at most `max`.
    SeriesPage query_series(const std::string& storage_id, std::int64_t from_ms, std::int64_t to_ms,
                            std::size_t max, std::optional<std::uint32_t> after_seq = std::nullopt) const;

    CommandTicket dispatch_command(const std::string& storage_id, Command command);
    std::optional<CommandTicket> ticket(std::uint32_t command_id) const;

    /// Retransmits or fails pending tickets whose retry interval elapsed.
    void poll();

    std::vector<MeterSummary> meters() const;
    std::optional<MeterSummary> meter(const std::string& storage_id) const;
    std::optional<std::string> storage_id_of(const MeterId& id) const;
    HealthCounters health() const;
    void note_queue_overflow() { queue_overflow_.fetch_add(1, std::memory_order_relaxed); }

    [[nodiscard]] const CoordinatorConfig& config() const { return config_; }
    [[nodiscard]] const Clock& clock() const { return clock_; }

private:
    struct MeterRecord;

    std::shared_ptr<MeterRecord> find(const std::string& storage_id) const;
    std::shared_ptr<MeterRecord> find_or_create(const MeterId& id);
    IngestOutcome ingest_measurement(const MeterId& id, const wire::MeasurementPayload& m, const Endpoint& source);
    void handle_ack(const MeterId& id, const wire::AckPayload& ack);
    void send_command(const MeterRecord& rec, const CommandTicket& t);
    static MeterSummary summarize(const MeterRecord& rec);

    CoordinatorConfig config_;
    const Clock& clock_;
    DatagramSender& sender_;

    mutable std::shared_mutex meters_mutex_;
    std::map<MeterId, std::shared_ptr<MeterRecord>> by_wire_id_;
    std::map<std::string, std::shared_ptr<MeterRecord>> by_storage_id_;
    std::uint64_t next_storage_index_ = 1;

    mutable std::mutex tickets_mutex_;
    std::map<std::uint32_t, CommandTicket> tickets_;
    std::uint32_t next_command_id_ = 1;

    std::atomic<std::uint64_t> received_{0};
    std::atomic<std::uint64_t> ingested_{0};
    std::atomic<std::uint64_t> stored_{0};
    std::atomic<std::uint64_t> duplicates_{0};
    std::atomic<std::uint64_t> gaps_{0};
    std::atomic<std::uint64_t> missing_{0};
    std::atomic<std::uint64_t> time_sync_{0};
    std::atomic<std::uint64_t> acks_{0};
    std::atomic<std::uint64_t> ignored_{0};
    std::atomic<std::uint64_t> queue_overflow_{0};
    std::array<std::atomic<std::uint64_t>, wire::kDecodeErrorClassCount> dropped_{};
};

} // namespace yomo
