#include "yomo/coordinator.hpp"

#include <algorithm>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

namespace yomo {

std::string_view ticket_state_name(TicketState s)
{
    switch (s) {
    case TicketState::Pending:
        return "pending";
    case TicketState::Acked:
        return "acked";
    case TicketState::Rejected:
        return "rejected";
    case TicketState::Failed:
        return "failed";
    }
    return "unknown";
}

struct Coordinator::MeterRecord {
    std::string storage_id;
    MeterId meter_id;

    mutable std::mutex mutex;
    std::int64_t last_seen_ms = 0;
    std::optional<std::uint32_t> last_seq; // highest seq seen
    std::uint64_t gap_count = 0;
    std::uint64_t missing = 0;
    std::optional<Endpoint> source;
    std::map<std::uint32_t, wire::MeasurementPayload> log;
    std::unique_ptr<store::LogWriter> writer;

    /// Returns the number of skipped seqs if `seq` opens a gap.
    std::uint64_t observe_seq(std::uint32_t seq)
    {
        std::uint64_t skipped = 0;
        if (!last_seq) {
            skipped = seq;
        } else if (seq > *last_seq + 1) {
            skipped = seq - *last_seq - 1;
        }
        if (!last_seq || seq > *last_seq) {
            last_seq = seq;
        }
        if (skipped > 0) {
            ++gap_count;
            missing += skipped;
        }
        return skipped;
    }
};

Coordinator::Coordinator(CoordinatorConfig config, const Clock& clock, DatagramSender& sender)
    : config_(std::move(config)), clock_(clock), sender_(sender)
{
    std::filesystem::create_directories(config_.data_dir);
    for (auto& pm : store::load(config_.data_dir)) {
        auto rec = std::make_shared<MeterRecord>();
        rec->storage_id = pm.storage_id;
        rec->meter_id = pm.meter_id;
        for (const auto& m : pm.readings) {
            if (rec->log.contains(m.seq)) {
                continue;
            }
            rec->observe_seq(m.seq);
            rec->log.emplace(m.seq, m);
        }
        if (pm.skipped_lines > 0) {
            spdlog::warn("meter {}: skipped {} unreadable log lines", pm.storage_id, pm.skipped_lines);
        }
        rec->writer = std::make_unique<store::LogWriter>(config_.data_dir, rec->storage_id);
        by_wire_id_[rec->meter_id] = rec;
        by_storage_id_[rec->storage_id] = rec;
        ++next_storage_index_;
    }
    if (!by_storage_id_.empty()) {
        spdlog::info("loaded {} meters from {}", by_storage_id_.size(), config_.data_dir.string());
    }
}

Coordinator::~Coordinator() = default;

std::shared_ptr<Coordinator::MeterRecord> Coordinator::find(const std::string& storage_id) const
{
    std::shared_lock lock(meters_mutex_);
    const auto it = by_storage_id_.find(storage_id);
    return it == by_storage_id_.end() ? nullptr : it->second;
}

std::shared_ptr<Coordinator::MeterRecord> Coordinator::find_or_create(const MeterId& id)
{
    {
        std::shared_lock lock(meters_mutex_);
        if (const auto it = by_wire_id_.find(id); it != by_wire_id_.end()) {
            return it->second;
        }
    }
    std::unique_lock lock(meters_mutex_);
    if (const auto it = by_wire_id_.find(id); it != by_wire_id_.end()) {
        return it->second;
    }
    auto rec = std::make_shared<MeterRecord>();
    do {
        rec->storage_id = fmt::format("m{:04d}", next_storage_index_++);
    } while (by_storage_id_.contains(rec->storage_id));
    rec->meter_id = id;
    store::append_index(config_.data_dir, rec->storage_id, id);
    rec->writer = std::make_unique<store::LogWriter>(config_.data_dir, rec->storage_id);
    by_wire_id_[id] = rec;
    by_storage_id_[rec->storage_id] = rec;
    spdlog::info("new meter {} -> storage id {}", id.hex(), rec->storage_id);
    return rec;
}

IngestOutcome Coordinator::ingest(std::span<const std::uint8_t> bytes, const Endpoint& source)
{
    received_.fetch_add(1, std::memory_order_relaxed);
    wire::Datagram d;
    try {
        d = wire::decode(bytes);
    } catch (const wire::DecodeError& e) {
        dropped_[static_cast<std::size_t>(e.error_class())].fetch_add(1, std::memory_order_relaxed);
        spdlog::debug("dropped datagram from {}: {}", source.str(), e.what());
        return IngestOutcome::Dropped;
    }

    if (const auto* m = std::get_if<wire::MeasurementPayload>(&d.payload)) {
        return ingest_measurement(d.meter_id, *m, source);
    }
    if (const auto* req = std::get_if<wire::TimeSyncRequest>(&d.payload)) {
        wire::Datagram reply{d.meter_id, wire::TimeSyncReply{req->meter_time_ms, clock_.now_ms()}};
        sender_.send(source, wire::encode(reply));
        if (auto rec = find_or_create(d.meter_id)) {
            std::lock_guard lock(rec->mutex);
            rec->last_seen_ms = clock_.now_ms();
            rec->source = source;
        }
        time_sync_.fetch_add(1, std::memory_order_relaxed);
        return IngestOutcome::TimeSyncAnswered;
    }
    if (const auto* ack = std::get_if<wire::AckPayload>(&d.payload)) {
        handle_ack(d.meter_id, *ack);
        return IngestOutcome::AckHandled;
    }
    ignored_.fetch_add(1, std::memory_order_relaxed);
    return IngestOutcome::Ignored;
}

IngestOutcome Coordinator::ingest_measurement(const MeterId& id, const wire::MeasurementPayload& m,
                                              const Endpoint& source)
{
    ingested_.fetch_add(1, std::memory_order_relaxed);
    auto rec = find_or_create(id);
    std::lock_guard lock(rec->mutex);
    rec->last_seen_ms = clock_.now_ms();
    rec->source = source;
    if (rec->log.contains(m.seq)) {
        duplicates_.fetch_add(1, std::memory_order_relaxed);
        return IngestOutcome::Duplicate;
    }
    if (const auto skipped = rec->observe_seq(m.seq); skipped > 0) {
        gaps_.fetch_add(1, std::memory_order_relaxed);
        missing_.fetch_add(skipped, std::memory_order_relaxed);
    }
    rec->writer->append(m);
    rec->log.emplace(m.seq, m);
    stored_.fetch_add(1, std::memory_order_relaxed);
    return IngestOutcome::Stored;
}

void Coordinator::handle_ack(const MeterId& id, const wire::AckPayload& ack)
{
    acks_.fetch_add(1, std::memory_order_relaxed);
    const auto sid = storage_id_of(id);
    std::lock_guard lock(tickets_mutex_);
    const auto it = tickets_.find(ack.command_id);
    if (it == tickets_.end() || !sid || it->second.storage_id != *sid) {
        return;
    }
    auto& t = it->second;
    if (t.state != TicketState::Pending) {
        return;
    }
    if (ack.status == wire::AckStatus::Accepted) {
        t.state = TicketState::Acked;
    } else {
        t.state = TicketState::Rejected;
        t.detail = ack.status == wire::AckStatus::RejectedSamplingFrequency
                       ? "meter rejected sampling frequency (not less than 100 Hz allowed)"
                       : "meter rejected command";
    }
}

SeriesPage Coordinator::query_series(const std::string& storage_id, std::int64_t from_ms, std::int64_t to_ms,
                                     std::size_t max, std::optional<std::uint32_t> after_seq) const
{
    if (from_ms > to_ms) {
        throw std::invalid_argument(fmt::format("empty range: from {} > to {}", from_ms, to_ms));
    }
    if (max == 0) {
        throw std::invalid_argument("max must be at least 1");
    }
    const auto rec = find(storage_id);
    if (!rec) {
        throw CoordinatorError(CoordinatorError::Code::NotFound, fmt::format("unknown meter '{}'", storage_id));
    }
    SeriesPage page;
    std::lock_guard lock(rec->mutex);
    auto it = after_seq ? rec->log.upper_bound(*after_seq) : rec->log.begin();
    for (; it != rec->log.end(); ++it) {
        const auto& m = it->second;
        if (m.timestamp_ms < from_ms || m.timestamp_ms >= to_ms) {
            continue;
        }
        if (page.readings.size() == max) {
            page.next = page.readings.back().seq;
            break;
        }
        page.readings.push_back(wire::from_wire(rec->meter_id, m));
    }
    return page;
}

CommandTicket Coordinator::dispatch_command(const std::string& storage_id, Command command)
{
    const auto rec = find(storage_id);
    if (!rec) {
        throw CoordinatorError(CoordinatorError::Code::NotFound, fmt::format("unknown meter '{}'", storage_id));
    }
    if (command.op == Opcode::SetFs) {
        try {
            validate_sampling_frequency(command.fs_hz);
        } catch (const SamplingFrequencyError& e) {
            throw CoordinatorError(CoordinatorError::Code::InvalidCommand, e.what());
        }
    }
    const auto now = clock_.now_ms();
    {
        std::lock_guard lock(rec->mutex);
        if (!rec->source || now - rec->last_seen_ms > config_.liveness_ms) {
            throw CoordinatorError(CoordinatorError::Code::Stale,
                                   fmt::format("meter '{}' not seen within {} ms", storage_id, config_.liveness_ms));
        }
    }
    CommandTicket t;
    {
        std::lock_guard lock(tickets_mutex_);
        command.command_id = next_command_id_++;
        t.command_id = command.command_id;
        t.storage_id = storage_id;
        t.command = command;
        t.created_ms = now;
        t.attempts = 1;
        t.last_sent_ms = now;
        tickets_[t.command_id] = t;
    }
    send_command(*rec, t);
    return t;
}

void Coordinator::send_command(const MeterRecord& rec, const CommandTicket& t)
{
    std::optional<Endpoint> to;
    {
        std::lock_guard lock(rec.mutex);
        to = rec.source;
    }
    if (to) {
        sender_.send(*to, wire::encode({rec.meter_id, wire::to_wire(t.command)}));
    }
}

std::optional<CommandTicket> Coordinator::ticket(std::uint32_t command_id) const
{
    std::lock_guard lock(tickets_mutex_);
    const auto it = tickets_.find(command_id);
    if (it == tickets_.end()) {
        return std::nullopt;
    }
    return it->second;
}

void Coordinator::poll()
{
    const auto now = clock_.now_ms();
    std::vector<CommandTicket> resend;
    {
        std::lock_guard lock(tickets_mutex_);
        for (auto& [id, t] : tickets_) {
            if (t.state != TicketState::Pending || now - t.last_sent_ms < config_.retry_interval_ms) {
                continue;
            }
            if (t.attempts >= config_.max_attempts) {
                t.state = TicketState::Failed;
                t.detail = fmt::format("no ack after {} attempts", t.attempts);
                continue;
            }
            ++t.attempts;
            t.last_sent_ms = now;
            resend.push_back(t);
        }
    }
    for (const auto& t : resend) {
        if (const auto rec = find(t.storage_id)) {
            send_command(*rec, t);
        }
    }
}

MeterSummary Coordinator::summarize(const MeterRecord& rec)
{
    MeterSummary s;
    s.storage_id = rec.storage_id;
    s.meter_id = rec.meter_id;
    std::lock_guard lock(rec.mutex);
    s.last_seen_ms = rec.last_seen_ms;
    s.last_seq = rec.last_seq;
    s.gap_count = rec.gap_count;
    s.missing = rec.missing;
    s.reading_count = rec.log.size();
    if (!rec.log.empty()) {
        s.last_reading = wire::from_wire(rec.meter_id, rec.log.rbegin()->second);
    }
    return s;
}

std::vector<MeterSummary> Coordinator::meters() const
{
    std::vector<std::shared_ptr<MeterRecord>> recs;
    {
        std::shared_lock lock(meters_mutex_);
        for (const auto& [sid, rec] : by_storage_id_) {
            recs.push_back(rec);
        }
    }
    std::vector<MeterSummary> out;
    for (const auto& rec : recs) {
        out.push_back(summarize(*rec));
    }
    return out;
}

std::optional<MeterSummary> Coordinator::meter(const std::string& storage_id) const
{
    const auto rec = find(storage_id);
    if (!rec) {
        return std::nullopt;
    }
    return summarize(*rec);
}

std::optional<std::string> Coordinator::storage_id_of(const MeterId& id) const
{
    std::shared_lock lock(meters_mutex_);
    const auto it = by_wire_id_.find(id);
    if (it == by_wire_id_.end()) {
        return std::nullopt;
    }
    return it->second->storage_id;
}

HealthCounters Coordinator::health() const
{
    HealthCounters h;
    h.received = received_.load();
    h.ingested = ingested_.load();
    h.stored = stored_.load();
    h.duplicates = duplicates_.load();
    h.gaps = gaps_.load();
    h.missing = missing_.load();
    h.time_sync = time_sync_.load();
    h.acks = acks_.load();
    h.ignored = ignored_.load();
    h.queue_overflow = queue_overflow_.load();
    for (std::size_t k = 0; k < h.dropped.size(); ++k) {
        h.dropped[k] = dropped_[k].load();
    }
    std::shared_lock lock(meters_mutex_);
    h.meters = by_storage_id_.size();
    return h;
}

} // namespace yomo
